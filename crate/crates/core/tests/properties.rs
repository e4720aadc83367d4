//! Property-based invariants over the geometry, sampling, and warp layers.

use proptest::prelude::*;
use pt_layer::image::{decode_pnm, encode_pnm};
use pt_layer::{Homography, ImageTensor, KernelSpec, PTLayer, Point2};

fn quad_strategy() -> impl Strategy<Value = [Point2; 4]> {
    // Unit-square corners, each perturbed by up to 0.3, then scaled and
    // translated; rejection below discards nearly-collinear draws.
    (
        prop::array::uniform8(-0.3f64..0.3),
        0.5f64..40.0,
        -20.0f64..20.0,
        -20.0f64..20.0,
    )
        .prop_map(|(d, scale, tx, ty)| {
            let base = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut out = [Point2::new(0.0, 0.0); 4];
            for (i, (bx, by)) in base.iter().enumerate() {
                out[i] = Point2::new(
                    (bx + d[2 * i]) * scale + tx,
                    (by + d[2 * i + 1]) * scale + ty,
                );
            }
            out
        })
}

fn well_conditioned(quad: &[Point2; 4]) -> bool {
    let span = quad
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0f64, f64::max);
    for i in 0..4 {
        for j in (i + 1)..4 {
            for k in (j + 1)..4 {
                let cross = (quad[j].x - quad[i].x) * (quad[k].y - quad[i].y)
                    - (quad[j].y - quad[i].y) * (quad[k].x - quad[i].x);
                if cross.abs() < 1e-3 * span * span {
                    return false;
                }
            }
        }
    }
    true
}

fn near_identity_params() -> impl Strategy<Value = [f64; 8]> {
    (
        prop::array::uniform6(-0.08f64..0.08),
        prop::array::uniform2(-0.004f64..0.004),
    )
        .prop_map(|(affine, persp)| {
            [
                1.0 + affine[0],
                affine[1],
                affine[2] * 10.0,
                affine[3],
                1.0 + affine[4],
                affine[5] * 10.0,
                persp[0],
                persp[1],
            ]
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Four-point estimation reprojects every correspondence.
    #[test]
    fn point_pairs_reproject(src in quad_strategy(), dst in quad_strategy()) {
        prop_assume!(well_conditioned(&src) && well_conditioned(&dst));
        let h = Homography::from_point_pairs(&src, &dst).unwrap();
        prop_assert_eq!(h.matrix()[2][2], 1.0);
        for (s, d) in src.iter().zip(dst.iter()) {
            let got = h.apply(*s).unwrap();
            prop_assert!((got.x - d.x).abs() < 1e-9, "x: {} vs {}", got.x, d.x);
            prop_assert!((got.y - d.y).abs() < 1e-9, "y: {} vs {}", got.y, d.y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Composition is associative entrywise.
    #[test]
    fn compose_is_associative(
        pa in near_identity_params(),
        pb in near_identity_params(),
        pc in near_identity_params(),
    ) {
        let a = Homography::from_params(pa).unwrap();
        let b = Homography::from_params(pb).unwrap();
        let c = Homography::from_params(pc).unwrap();
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        for r in 0..3 {
            for col in 0..3 {
                prop_assert!((left.matrix()[r][col] - right.matrix()[r][col]).abs() < 1e-12);
            }
        }
    }

    /// Inversion is two-sided entrywise.
    #[test]
    fn invert_is_two_sided(p in near_identity_params()) {
        let h = Homography::from_params(p).unwrap();
        let inv = h.invert().unwrap();
        for composed in [h.compose(&inv).unwrap(), inv.compose(&h).unwrap()] {
            let id = Homography::identity();
            for r in 0..3 {
                for c in 0..3 {
                    prop_assert!((composed.matrix()[r][c] - id.matrix()[r][c]).abs() < 1e-12);
                }
            }
        }
    }

    /// Affine maps (zero perspective row) preserve ratios along lines.
    #[test]
    fn affine_preserves_distance_ratios(
        affine in prop::array::uniform6(-0.5f64..0.5),
        a in -5.0f64..5.0,
        dir in 0.1f64..2.0,
        t in 0.1f64..0.9,
    ) {
        let h = Homography::from_params([
            1.0 + affine[0], affine[1], affine[2] * 4.0,
            affine[3], 1.0 + affine[4], affine[5] * 4.0,
            0.0, 0.0,
        ]);
        prop_assume!(h.is_ok());
        let h = h.unwrap();
        let p0 = Point2::new(a, -a * 0.5 + 1.0);
        let p2 = Point2::new(a + 3.0 * dir, -a * 0.5 + 1.0 + 1.7 * dir);
        let p1 = Point2::new(p0.x + t * (p2.x - p0.x), p0.y + t * (p2.y - p0.y));
        let (q0, q1, q2) = (
            h.apply(p0).unwrap(),
            h.apply(p1).unwrap(),
            h.apply(p2).unwrap(),
        );
        let d01 = ((q1.x - q0.x).powi(2) + (q1.y - q0.y).powi(2)).sqrt();
        let d02 = ((q2.x - q0.x).powi(2) + (q2.y - q0.y).powi(2)).sqrt();
        prop_assume!(d02 > 1e-6);
        prop_assert!((d01 / d02 - t).abs() < 1e-12, "ratio {} vs t {}", d01 / d02, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Saving then loading stays within half a quantization step.
    #[test]
    fn pnm_round_trip_error_is_bounded(
        values in prop::collection::vec(0.0f64..=1.0, 12),
        maxval in 1u32..=65535,
        channels in prop::sample::select(vec![1usize, 3usize]),
    ) {
        let w = 12 / channels / 2;
        let t = ImageTensor::from_vec(values[..2 * w * channels].to_vec(), 1, 2, w, channels)
            .unwrap();
        let bytes = encode_pnm(&t, maxval).unwrap();
        let back = decode_pnm(&bytes).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / maxval as f64 + 1e-15);
        }
    }

    /// The warp is linear in the image, and backward-to-input is its
    /// exact adjoint: <v, W u> == <W^T v, u>.
    #[test]
    fn backward_to_input_is_adjoint_of_forward(
        p in near_identity_params(),
        u_vals in prop::collection::vec(-1.0f64..1.0, 5 * 6),
        v_vals in prop::collection::vec(-1.0f64..1.0, 5 * 6),
        bicubic in any::<bool>(),
    ) {
        let kernel = if bicubic { KernelSpec::bicubic() } else { KernelSpec::Bilinear };
        let tm = Homography::from_params(p).unwrap();
        let layer = PTLayer::from_tms(vec![tm], kernel).unwrap();
        let u = ImageTensor::from_vec(u_vals, 1, 5, 6, 1).unwrap();
        let v = ImageTensor::from_vec(v_vals, 1, 5, 6, 1).unwrap();
        let (wu, cache) = layer.forward(&u).unwrap();
        let wt_v = layer.backward(&cache, &v).unwrap().d_input;
        let lhs: f64 = v.data().iter().zip(wu.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = wt_v.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    /// Enlarging by a zero border, then warping with the conjugated
    /// matrix, reproduces the zero-padded warp on the interior.
    #[test]
    fn zero_border_matches_zero_padding(
        p in near_identity_params(),
        vals in prop::collection::vec(0.0f64..1.0, 6 * 7),
        border in 1usize..3,
    ) {
        let tm = Homography::from_params(p).unwrap();
        let kernel = KernelSpec::bicubic();
        let image = ImageTensor::from_vec(vals, 1, 6, 7, 1).unwrap();

        let layer = PTLayer::from_tms(vec![tm], kernel).unwrap();
        let (direct, _) = layer.forward(&image).unwrap();

        let b = border as f64;
        let padded = ImageTensor::from_fn(1, 6 + 2 * border, 7 + 2 * border, 1, |_, y, x, _| {
            if y >= border && y < 6 + border && x >= border && x < 7 + border {
                image.get(0, y - border, x - border, 0)
            } else {
                0.0
            }
        })
        .unwrap();
        let shift_in = Homography::from_params([1.0, 0.0, b, 0.0, 1.0, b, 0.0, 0.0]).unwrap();
        let shift_out = Homography::from_params([1.0, 0.0, -b, 0.0, 1.0, -b, 0.0, 0.0]).unwrap();
        let conjugated = shift_in.compose(&tm).unwrap().compose(&shift_out).unwrap();
        let padded_layer = PTLayer::from_tms(vec![conjugated], kernel).unwrap();
        let (via_border, _) = padded_layer.forward(&padded).unwrap();

        for y in 0..6 {
            for x in 0..7 {
                let a = direct.get(0, y, x, 0);
                let bb = via_border.get(0, y + border, x + border, 0);
                prop_assert!((a - bb).abs() < 1e-12, "({y},{x}): {} vs {}", a, bb);
            }
        }
    }
}
