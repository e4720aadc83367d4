//! 8-DOF planar projective transformations.
//!
//! A [`Homography`] is kept in normalized form: the bottom-right matrix
//! entry is pinned to exactly 1, so the remaining eight entries are the
//! free, learnable parameters. Construction fails rather than producing a
//! non-invertible map.

use crate::error::{Error, Result};

/// Guard on the perspective divide: `apply` refuses points whose
/// homogeneous scale falls below this.
pub const OMEGA_GUARD: f64 = 1e-8;

const DET_GUARD: f64 = 1e-12;

/// A 2D point in pixel coordinates (`x` indexes columns, `y` rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// An invertible 3x3 projective matrix with bottom-right entry fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

/// Pinhole-camera internal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    pub shear: f64,
    pub translate_x: f64,
    pub translate_y: f64,
}

/// Pinhole-camera pose: rotation entries and translation of the camera
/// frame. The rotation block is taken as free parameters; orthonormality
/// is not enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraExtrinsics {
    /// Identity rotation, zero translation.
    pub fn canonical() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Build from the eight free parameters, filling the matrix row-major
    /// with the bottom-right entry fixed to 1.
    pub fn from_params(p: [f64; 8]) -> Result<Self> {
        let h = Self {
            m: [
                [p[0], p[1], p[2]],
                [p[3], p[4], p[5]],
                [p[6], p[7], 1.0],
            ],
        };
        if h.det().abs() <= DET_GUARD {
            return Err(Error::SingularMatrix(format!(
                "parameters give |det| = {:e}",
                h.det().abs()
            )));
        }
        Ok(h)
    }

    /// Normalize an arbitrary 3x3 matrix so its bottom-right entry is 1.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let scale = m[2][2];
        if scale.abs() < DET_GUARD {
            return Err(Error::SingularMatrix(format!(
                "cannot normalize: bottom-right entry is {:e}",
                scale
            )));
        }
        let mut out = [[0.0; 3]; 3];
        for (r, row) in m.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out[r][c] = v / scale;
            }
        }
        out[2][2] = 1.0;
        let h = Self { m: out };
        if h.det().abs() <= DET_GUARD {
            return Err(Error::SingularMatrix(format!(
                "matrix has |det| = {:e}",
                h.det().abs()
            )));
        }
        Ok(h)
    }

    /// Derive the homography induced by a pinhole camera observing the
    /// unit-depth world plane (points `(x, y, 1)`).
    ///
    /// The 3x4 camera matrix `C = IN x EX` is restricted to that plane,
    /// which keeps its first two columns and merges the third and fourth;
    /// the result is then normalized. A camera with identity pose yields
    /// the identity homography.
    pub fn from_camera(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Result<Self> {
        if intr.scale_x * intr.focal == 0.0 || intr.scale_y * intr.focal == 0.0 {
            return Err(Error::InvalidArgument(
                "camera intrinsics need nonzero focal/scale products".into(),
            ));
        }
        let internal = [
            [intr.scale_x * intr.focal, intr.shear, intr.translate_x, 0.0],
            [0.0, intr.scale_y * intr.focal, intr.translate_y, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let mut external = [[0.0; 4]; 4];
        for (row, (rot, tr)) in external
            .iter_mut()
            .zip(extr.rotation.iter().zip(&extr.translation))
        {
            row[..3].copy_from_slice(rot);
            row[3] = *tr;
        }
        external[3][3] = 1.0;

        let mut camera = [[0.0; 4]; 3];
        for r in 0..3 {
            for c in 0..4 {
                camera[r][c] = (0..4).map(|k| internal[r][k] * external[k][c]).sum();
            }
        }

        let mut restricted = [[0.0; 3]; 3];
        for r in 0..3 {
            restricted[r][0] = camera[r][0];
            restricted[r][1] = camera[r][1];
            restricted[r][2] = camera[r][2] + camera[r][3];
        }
        if restricted[2][2].abs() < DET_GUARD {
            return Err(Error::DegenerateCamera(restricted[2][2]));
        }
        Self::from_matrix(restricted)
    }

    /// Recover the homography mapping the four `src` points onto the four
    /// `dst` points via the direct linear transform.
    ///
    /// Coordinates are Hartley-normalized first, and the 8x8 system is
    /// solved with partial-pivot Gaussian elimination.
    pub fn from_point_pairs(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Self> {
        let t_src = normalizing_transform(src)?;
        let t_dst = normalizing_transform(dst)?;
        let ns: Vec<Point2> = src.iter().map(|p| apply_affine(&t_src, *p)).collect();
        let nd: Vec<Point2> = dst.iter().map(|p| apply_affine(&t_dst, *p)).collect();

        // Rows per correspondence:
        //   [x, y, 1, 0, 0, 0, -x x', -y x' | x']
        //   [0, 0, 0, x, y, 1, -x y', -y y' | y']
        let mut system = [[0.0; 9]; 8];
        for i in 0..4 {
            let (x, y) = (ns[i].x, ns[i].y);
            let (xp, yp) = (nd[i].x, nd[i].y);
            system[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * xp, -y * xp, xp];
            system[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * yp, -y * yp, yp];
        }
        let sol = solve_8x8(&mut system)?;
        let normalized = [
            [sol[0], sol[1], sol[2]],
            [sol[3], sol[4], sol[5]],
            [sol[6], sol[7], 1.0],
        ];

        // Undo the normalization: H = T_dst^-1 * H_n * T_src.
        let t_dst_inv = invert_3x3(&t_dst).ok_or_else(|| {
            Error::SingularMatrix("destination normalization is singular".into())
        })?;
        let denorm = mat_mul(&mat_mul(&t_dst_inv, &normalized), &t_src);
        Self::from_matrix(denorm)
    }

    /// The eight free parameters, row-major.
    pub fn params(&self) -> [f64; 8] {
        [
            self.m[0][0], self.m[0][1], self.m[0][2],
            self.m[1][0], self.m[1][1], self.m[1][2],
            self.m[2][0], self.m[2][1],
        ]
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Transform a point through the matrix and the perspective divide.
    pub fn apply(&self, p: Point2) -> Result<Point2> {
        match self.project(p.x, p.y) {
            Some((x, y, _)) => Ok(Point2::new(x, y)),
            None => {
                let omega = self.m[2][0] * p.x + self.m[2][1] * p.y + self.m[2][2];
                Err(Error::HorizonSingularity {
                    x: p.x,
                    y: p.y,
                    omega,
                })
            }
        }
    }

    /// Raw transform used by the warp inner loop: returns
    /// `(x'', y'', omega)` or `None` when `|omega|` falls below the guard.
    #[inline]
    pub fn project(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let omega = self.m[2][0] * x + self.m[2][1] * y + self.m[2][2];
        if omega.abs() < OMEGA_GUARD {
            return None;
        }
        let xp = self.m[0][0] * x + self.m[0][1] * y + self.m[0][2];
        let yp = self.m[1][0] * x + self.m[1][1] * y + self.m[1][2];
        Some((xp / omega, yp / omega, omega))
    }

    /// Matrix product `self * inner`, renormalized:
    /// `compose(a, b).apply(p) == a.apply(b.apply(p))` wherever defined.
    pub fn compose(&self, inner: &Homography) -> Result<Homography> {
        Self::from_matrix(mat_mul(&self.m, &inner.m))
    }

    /// Matrix inverse, renormalized to bottom-right 1.
    pub fn invert(&self) -> Result<Homography> {
        let inv = invert_3x3(&self.m).ok_or_else(|| {
            Error::SingularMatrix(format!("|det| = {:e} too small to invert", self.det().abs()))
        })?;
        Self::from_matrix(inv)
    }

    /// Serialize as three lines of three decimal numbers at full double
    /// precision (17 significant digits).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.m {
            let line = row
                .iter()
                .map(|v| format!("{:.16e}", v))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Parse the text format written by [`Homography::to_text`]: nine
    /// whitespace-separated numbers, renormalized on load.
    pub fn from_text(text: &str) -> Result<Homography> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {:?} in homography text", tok)))
            })
            .collect::<Result<_>>()?;
        if values.len() != 9 {
            return Err(Error::Format(format!(
                "homography text has {} numbers, expected 9",
                values.len()
            )));
        }
        let m = [
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        ];
        Self::from_matrix(m)
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

fn invert_3x3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() <= DET_GUARD {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(out)
}

fn apply_affine(t: &[[f64; 3]; 3], p: Point2) -> Point2 {
    Point2::new(
        t[0][0] * p.x + t[0][1] * p.y + t[0][2],
        t[1][0] * p.x + t[1][1] * p.y + t[1][2],
    )
}

/// Hartley normalization: translate the centroid to the origin and scale
/// so the mean distance from it is sqrt(2).
fn normalizing_transform(pts: &[Point2; 4]) -> Result<[[f64; 3]; 3]> {
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mean_dist = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    if mean_dist < 1e-12 {
        return Err(Error::SingularMatrix(
            "all correspondence points coincide".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

/// Partial-pivot Gaussian elimination on an augmented 8x9 system.
fn solve_8x8(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8]> {
    const N: usize = 8;
    for col in 0..N {
        let pivot_row = (col..N)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .expect("non-empty range");
        if a[pivot_row][col].abs() < 1e-12 {
            return Err(Error::SingularMatrix(
                "rank-deficient point configuration".into(),
            ));
        }
        a.swap(col, pivot_row);
        let pivot = a[col];
        for row in a.iter_mut().skip(col + 1) {
            let factor = row[col] / pivot[col];
            row[col] = 0.0;
            for (slot, p) in row.iter_mut().zip(pivot.iter()).skip(col + 1) {
                *slot -= factor * p;
            }
        }
    }
    let mut sol = [0.0; N];
    for row in (0..N).rev() {
        let mut acc = a[row][N];
        for k in (row + 1)..N {
            acc -= a[row][k] * sol[k];
        }
        sol[row] = acc / a[row][row];
    }
    Ok(sol)
}
