//! Random perspective-distortion generation for corpus preparation.
//!
//! Distortions are drawn by displacing each image corner independently by
//! a uniform offset, rejecting draws whose displaced corners are nearly
//! collinear or whose homogeneous scale changes sign inside the image,
//! and solving the four-point correspondence for the homography.
//!
//! Everything is driven by seeded ChaCha streams: the shuffle that picks
//! unmodified images uses stream 0 of the corpus seed, and image `i` draws
//! its homography from stream `i + 1`, so serial and per-image-parallel
//! runs agree bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::homography::{Homography, Point2};
use crate::image::ImageTensor;
use crate::layer::PTLayer;
use crate::sampling::KernelSpec;

const MAX_REJECTIONS: usize = 100;
const OMEGA_MARGIN: f64 = 1e-6;

/// Parameters of the corpus-distortion protocol.
#[derive(Debug, Clone, Copy)]
pub struct DistortConfig {
    /// Max corner displacement as a fraction of `min(H, W)`; in `[0, 0.5)`.
    pub rho: f64,
    /// Fraction of images left unmodified; in `[0, 1]`.
    pub keep_fraction: f64,
    pub seed: u64,
}

impl DistortConfig {
    pub fn new(rho: f64, keep_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..0.5).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "rho {} outside [0, 0.5)",
                rho
            )));
        }
        if !(0.0..=1.0).contains(&keep_fraction) {
            return Err(Error::InvalidArgument(format!(
                "keep_fraction {} outside [0, 1]",
                keep_fraction
            )));
        }
        Ok(Self {
            rho,
            keep_fraction,
            seed,
        })
    }
}

/// Per-image record of what the corpus pipeline did.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub transformed: bool,
    /// The eight free parameters of the applied homography, row-major.
    /// Identity for unmodified images.
    pub params: [f64; 8],
}

impl ManifestEntry {
    pub fn homography(&self) -> Result<Homography> {
        Homography::from_params(self.params)
    }
}

/// Draw one random perspective distortion for a `width x height` image.
///
/// Each corner is displaced by uniform per-axis offsets in
/// `[-rho * min(H, W), +rho * min(H, W)]`; degenerate draws are rejected
/// and resampled, giving up after 100 rejections.
pub fn random_homography(
    cfg: &DistortConfig,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<Homography> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidArgument(format!(
            "image extent {}x{} too small to distort",
            width, height
        )));
    }
    let w = (width - 1) as f64;
    let h = (height - 1) as f64;
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ];
    let amplitude = cfg.rho * (width.min(height) as f64);

    for _ in 0..MAX_REJECTIONS {
        let displaced = corners.map(|c| {
            let dx = (rng.gen::<f64>() * 2.0 - 1.0) * amplitude;
            let dy = (rng.gen::<f64>() * 2.0 - 1.0) * amplitude;
            Point2::new(c.x + dx, c.y + dy)
        });
        if has_collinear_triple(&displaced) {
            continue;
        }
        let homography = match Homography::from_point_pairs(&corners, &displaced) {
            Ok(h) => h,
            Err(Error::SingularMatrix(_)) => continue,
            Err(e) => return Err(e),
        };
        if !omega_positive_on_rect(&homography, &corners) {
            continue;
        }
        return Ok(homography);
    }
    Err(Error::RejectionLimit(format!(
        "no acceptable distortion after {} draws (rho = {} too large?)",
        MAX_REJECTIONS, cfg.rho
    )))
}

fn has_collinear_triple(pts: &[Point2; 4]) -> bool {
    // Threshold on twice the triangle area, scaled to the quad's extent.
    let span = pts
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0f64, f64::max);
    let threshold = 1e-6 * span * span;
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let cross = (pts[j].x - pts[i].x) * (pts[k].y - pts[i].y)
                    - (pts[j].y - pts[i].y) * (pts[k].x - pts[i].x);
                if cross.abs() <= threshold {
                    return true;
                }
            }
        }
    }
    false
}

/// The homogeneous scale is affine in (x, y), so positivity at the four
/// rectangle corners implies positivity everywhere inside.
fn omega_positive_on_rect(h: &Homography, corners: &[Point2; 4]) -> bool {
    let m = h.matrix();
    corners
        .iter()
        .all(|c| m[2][0] * c.x + m[2][1] * c.y + m[2][2] > OMEGA_MARGIN)
}

/// Apply the corpus-preparation protocol: a seeded shuffle decides which
/// images stay unmodified, and every other image is warped (gather
/// convention, bilinear) by a fresh random homography.
pub fn distort_corpus(
    images: &[ImageTensor],
    cfg: &DistortConfig,
) -> Result<(Vec<ImageTensor>, Vec<ManifestEntry>)> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty image list".into()));
    }
    let n = images.len();
    let n_keep = ((cfg.keep_fraction * n as f64).ceil() as usize).min(n);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffle_rng);
    let mut keep = vec![false; n];
    for &idx in order.iter().take(n_keep) {
        keep[idx] = true;
    }

    const IDENTITY_PARAMS: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let mut outputs = Vec::with_capacity(n);
    let mut manifest = Vec::with_capacity(n);
    for (i, image) in images.iter().enumerate() {
        if keep[i] {
            outputs.push(image.clone());
            manifest.push(ManifestEntry {
                index: i,
                transformed: false,
                params: IDENTITY_PARAMS,
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let homography = random_homography(cfg, image.width(), image.height(), &mut rng)?;
        let layer = PTLayer::from_tms(vec![homography], KernelSpec::Bilinear)?;
        let (warped, _) = layer.forward(image)?;
        outputs.push(warped);
        manifest.push(ManifestEntry {
            index: i,
            transformed: true,
            params: homography.params(),
        });
    }
    Ok((outputs, manifest))
}

/// Write the manifest CSV: `index,transformed,t11..t32` with parameters at
/// 17 significant digits.
pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut w: W) -> Result<()> {
    writeln!(w, "index,transformed,t11,t12,t13,t21,t22,t23,t31,t32")?;
    for e in entries {
        let params = e
            .params
            .iter()
            .map(|v| format!("{:.16e}", v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{},{},{}", e.index, u8::from(e.transformed), params)?;
    }
    Ok(())
}

/// Parse a manifest written by [`write_manifest`].
pub fn read_manifest<R: Read>(r: R) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty manifest".into()))??;
    if header.trim() != "index,transformed,t11,t12,t13,t21,t22,t23,t31,t32" {
        return Err(Error::Format(format!(
            "unexpected manifest header {:?}",
            header
        )));
    }
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Format(format!(
                "manifest row has {} fields, expected 10",
                fields.len()
            )));
        }
        let index: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad index {:?}", fields[0])))?;
        let transformed = match fields[1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Format(format!(
                    "bad transformed flag {:?}",
                    other
                )))
            }
        };
        let mut params = [0.0f64; 8];
        for (slot, field) in params.iter_mut().zip(&fields[2..]) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad parameter {:?}", field)))?;
        }
        entries.push(ManifestEntry {
            index,
            transformed,
            params,
        });
    }
    Ok(entries)
}
