//! Independent finite-difference validation of every analytic gradient.
//!
//! The harness perturbs each TM parameter and each input pixel by a small
//! step, takes central differences of the scalar loss
//! `L = mse(forward(layer, input), target)`, and compares against the
//! backward pass. Configurations whose sampling points sit too close to a
//! kernel breakpoint or to the omega guard are rejected up front, because
//! central differences are meaningless across those kinks. A half-step
//! probe additionally estimates each parameter's truncation error, and
//! configurations where that noise is too large relative to the
//! derivative itself (accidental gradient cancellation) are rejected too:
//! at the fixed step the comparison could not certify the tolerance
//! either way.
//!
//! To prove the harness has teeth, it can re-run against deliberately
//! broken backward passes ([`SeededBug`]) and must flag each one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::image::{mse, ImageTensor};
use crate::layer::{GradReduction, Mutation, PTLayer};
use crate::sampling::KernelSpec;

/// Central-difference step used throughout.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Acceptance tolerance for the bilinear kernel.
pub const BILINEAR_TOLERANCE: f64 = 1e-5;
/// Acceptance tolerance for the bicubic kernel (higher-order curvature).
pub const BICUBIC_TOLERANCE: f64 = 1e-4;

/// Sampling points must stay this far from integer grid lines.
const BREAKPOINT_MARGIN: f64 = 1e-3;
/// Homogeneous scales must stay this far from zero.
const OMEGA_MARGIN: f64 = 1e-3;
/// Relative-error denominator floor, so exactly-zero gradients compare cleanly.
const REL_ERROR_FLOOR: f64 = 1e-8;

const PARAM_NAMES: [&str; 8] = ["t11", "t12", "t13", "t21", "t22", "t23", "t31", "t32"];

pub fn tolerance_for(kernel: KernelSpec) -> f64 {
    match kernel {
        KernelSpec::Bilinear => BILINEAR_TOLERANCE,
        KernelSpec::Bicubic { .. } => BICUBIC_TOLERANCE,
    }
}

/// Outcome of one or more finite-difference comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error_input: f64,
    pub max_rel_error_tms: f64,
    /// Identifier of the single worst parameter across both groups.
    pub worst_parameter: String,
    pub configurations_tested: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_input.max(self.max_rel_error_tms)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error() > self.max_rel_error() {
            self.worst_parameter = other.worst_parameter.clone();
        }
        self.max_rel_error_input = self.max_rel_error_input.max(other.max_rel_error_input);
        self.max_rel_error_tms = self.max_rel_error_tms.max(other.max_rel_error_tms);
        self.configurations_tested += other.configurations_tested;
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        format!(
            "{:<24}{}\n{:<24}{:.3e}\n{:<24}{:.3e}\n{:<24}{}\n",
            "configurations",
            self.configurations_tested,
            "max rel error (input)",
            self.max_rel_error_input,
            "max rel error (tms)",
            self.max_rel_error_tms,
            "worst parameter",
            self.worst_parameter,
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "max_rel_error_input,max_rel_error_tms,worst_parameter,configurations_tested\n{:.16e},{:.16e},{},{}\n",
            self.max_rel_error_input,
            self.max_rel_error_tms,
            self.worst_parameter,
            self.configurations_tested,
        )
    }
}

/// Deliberately broken backward passes the harness must detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeededBug {
    /// Perspective-row gradients without the quotient-rule terms.
    DroppedQuotientTerm,
    /// Kernel arguments evaluated with the image axes swapped.
    SwappedKernelAxes,
    /// Sum reduction behind a layer that promises a mean.
    SumInsteadOfMean,
}

impl From<SeededBug> for Mutation {
    fn from(bug: SeededBug) -> Mutation {
        match bug {
            SeededBug::DroppedQuotientTerm => Mutation::DropQuotientTerm,
            SeededBug::SwappedKernelAxes => Mutation::SwapKernelAxes,
            SeededBug::SumInsteadOfMean => Mutation::SumInsteadOfMean,
        }
    }
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_ERROR_FLOOR)
}

/// Reject configurations whose sampling points sit near kernel breakpoints
/// (integer grid lines) or whose homogeneous scale is near the guard.
fn validate_configuration(layer: &PTLayer, width: usize, height: usize) -> Result<()> {
    for (m, tm) in layer.tms().iter().enumerate() {
        let p = tm.params();
        for yo in 0..height {
            for xo in 0..width {
                let omega = p[6] * xo as f64 + p[7] * yo as f64 + 1.0;
                if omega.abs() < OMEGA_MARGIN {
                    return Err(Error::ConfigRejected(format!(
                        "tm{} at output ({}, {}): |omega| = {:.3e} within {:.0e} of the guard",
                        m,
                        xo,
                        yo,
                        omega.abs(),
                        OMEGA_MARGIN
                    )));
                }
                let (xs, ys, _) = tm
                    .project(xo as f64, yo as f64)
                    .expect("omega margin already checked");
                for (axis, v) in [("x", xs), ("y", ys)] {
                    let dist = (v - v.round()).abs();
                    if dist < BREAKPOINT_MARGIN {
                        return Err(Error::ConfigRejected(format!(
                            "tm{} at output ({}, {}): sampling {}'' = {:.6} is {:.1e} from a kernel breakpoint",
                            m, xo, yo, axis, v, dist
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Compare the analytic gradients of one configuration against central
/// finite differences of the MSE loss.
pub fn finite_diff_check(
    layer: &PTLayer,
    input: &ImageTensor,
    target: &ImageTensor,
    step: f64,
) -> Result<GradCheckReport> {
    finite_diff_check_with_bug(layer, input, target, step, None)
}

/// [`finite_diff_check`] against a deliberately broken backward pass.
pub fn finite_diff_check_with_bug(
    layer: &PTLayer,
    input: &ImageTensor,
    target: &ImageTensor,
    step: f64,
    bug: Option<SeededBug>,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    validate_configuration(layer, input.width(), input.height())?;

    let (output, cache) = layer.forward(input)?;
    if output.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs forward output {:?}",
            target.dims(),
            output.dims()
        )));
    }
    let (_, d_output) = mse(&output, target)?;
    let analytic = layer.backward_impl(&cache, &d_output, bug.map(Into::into))?;

    // The finite difference measures dL/dtheta summed over positions; a
    // mean-reducing layer reports that divided by the position count.
    let reduction_scale = match layer.grad_reduction() {
        GradReduction::Mean => input.len() as f64,
        GradReduction::Sum => 1.0,
    };

    let loss_of = |l: &PTLayer, inp: &ImageTensor| -> Result<f64> {
        let (out, _) = l.forward(inp)?;
        Ok(mse(&out, target)?.0)
    };

    let mut max_input = 0.0f64;
    let mut max_tms = 0.0f64;
    let mut worst = (0.0f64, String::from("none"));

    let tolerance = tolerance_for(layer.kernel());
    let base_params = layer.params();
    for idx in 0..base_params.len() {
        let fd_at = |h: f64| -> Result<f64> {
            let mut plus = layer.clone();
            let mut p = base_params.clone();
            p[idx] += h;
            plus.set_params(&p)?;
            let mut minus = layer.clone();
            let mut q = base_params.clone();
            q[idx] -= h;
            minus.set_params(&q)?;
            Ok((loss_of(&plus, input)? - loss_of(&minus, input)?) / (2.0 * h) / reduction_scale)
        };
        let fd = fd_at(step)?;
        // Central differences truncate at O(step^2); the half-step probe
        // recovers that error term. Where it rivals the derivative itself,
        // the comparison is uninformative at this step.
        let truncation = (fd - fd_at(step / 2.0)?).abs() * (4.0 / 3.0);
        if truncation > 0.2 * tolerance * fd.abs().max(REL_ERROR_FLOOR) {
            return Err(Error::ConfigRejected(format!(
                "tm{}.{}: finite-difference truncation {:.1e} rivals the derivative {:.1e} at step {:.0e}",
                idx / 8,
                PARAM_NAMES[idx % 8],
                truncation,
                fd.abs(),
                step
            )));
        }
        let a = analytic.d_tms[idx / 8][idx % 8];
        let err = rel_error(a, fd);
        max_tms = max_tms.max(err);
        if err > worst.0 {
            worst = (err, format!("tm{}.{}", idx / 8, PARAM_NAMES[idx % 8]));
        }
    }

    let (_, h, w, ch) = input.dims();
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let fd = (loss_of(layer, &plus)? - loss_of(layer, &minus)?) / (2.0 * step);
        let a = analytic.d_input.data()[i];
        let err = rel_error(a, fd);
        max_input = max_input.max(err);
        if err > worst.0 {
            let c = i % ch;
            let x = (i / ch) % w;
            let y = (i / (ch * w)) % h;
            let n = i / (ch * w * h);
            worst = (err, format!("input[{},{},{},{}]", n, y, x, c));
        }
    }

    Ok(GradCheckReport {
        max_rel_error_input: max_input,
        max_rel_error_tms: max_tms,
        worst_parameter: worst.1,
        configurations_tested: 1,
    })
}

/// Randomized-suite settings.
#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub configs: usize,
    pub kernel: KernelSpec,
    pub step: f64,
}

impl SuiteConfig {
    pub fn new(seed: u64, configs: usize, kernel: KernelSpec) -> Self {
        Self {
            seed,
            configs,
            kernel,
            step: DEFAULT_STEP,
        }
    }
}

/// Run [`finite_diff_check`] over `configs` randomized valid
/// configurations and aggregate the worst errors.
pub fn run_suite(cfg: &SuiteConfig) -> Result<GradCheckReport> {
    run_suite_with_bug(cfg, None)
}

/// Randomized suite against a seeded bug; used to prove detection.
pub fn run_suite_with_bug(cfg: &SuiteConfig, bug: Option<SeededBug>) -> Result<GradCheckReport> {
    if cfg.configs == 0 {
        return Err(Error::InvalidArgument("need at least one configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut merged: Option<GradCheckReport> = None;
    let mut tested = 0;
    let mut attempts = 0;
    while tested < cfg.configs {
        attempts += 1;
        if attempts > cfg.configs * 50 + 50 {
            return Err(Error::ConfigRejected(format!(
                "only {} of {} configurations were valid after {} draws",
                tested, cfg.configs, attempts
            )));
        }
        let (layer, input, target) = random_configuration(&mut rng, cfg.kernel)?;
        match finite_diff_check_with_bug(&layer, &input, &target, cfg.step, bug) {
            Ok(report) => {
                match merged.as_mut() {
                    Some(m) => m.merge(&report),
                    None => merged = Some(report),
                }
                tested += 1;
            }
            Err(Error::ConfigRejected(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(merged.expect("at least one configuration"))
}

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * scale
}

fn smooth_random(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    ch: usize,
) -> Result<ImageTensor> {
    let mut coeffs = Vec::with_capacity(ch);
    for _ in 0..ch {
        let amp = 0.15 + rng.gen::<f64>() * 0.2;
        let kx = 0.25 + rng.gen::<f64>() * 0.55;
        let ky = 0.25 + rng.gen::<f64>() * 0.55;
        let px = rng.gen::<f64>() * std::f64::consts::TAU;
        let py = rng.gen::<f64>() * std::f64::consts::TAU;
        coeffs.push((amp, kx, ky, px, py));
    }
    ImageTensor::from_fn(1, h, w, ch, |_, y, x, c| {
        let (amp, kx, ky, px, py) = coeffs[c];
        0.5 + amp * (kx * x as f64 + px).sin() * (ky * y as f64 + py).cos()
    })
}

fn random_configuration(
    rng: &mut ChaCha8Rng,
    kernel: KernelSpec,
) -> Result<(PTLayer, ImageTensor, ImageTensor)> {
    let h = rng.gen_range(6..=9);
    let w = rng.gen_range(6..=9);
    let ch = rng.gen_range(1..=2);
    let m = rng.gen_range(1..=2usize);
    let input = smooth_random(rng, h, w, ch)?;
    let target = smooth_random(rng, h, w, ch * m)?;
    let mut tms = Vec::with_capacity(m);
    for _ in 0..m {
        tms.push(Homography::from_params([
            1.0 + jitter(rng, 0.05),
            jitter(rng, 0.05),
            jitter(rng, 0.6),
            jitter(rng, 0.05),
            1.0 + jitter(rng, 0.05),
            jitter(rng, 0.6),
            jitter(rng, 0.005),
            jitter(rng, 0.005),
        ])?);
    }
    let layer = PTLayer::from_tms(tms, kernel)?;
    Ok((layer, input, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerInit;

    fn valid_layer(kernel: KernelSpec, seed: u64) -> PTLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let (layer, input, _) = random_configuration(&mut rng, kernel).unwrap();
            if validate_configuration(&layer, input.width(), input.height()).is_ok() {
                return layer;
            }
        }
    }

    #[test]
    fn bilinear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let layer = valid_layer(KernelSpec::Bilinear, 100);
        let input = smooth_random(&mut rng, 8, 8, 1).unwrap();
        let target = smooth_random(&mut rng, 8, 8, layer.tms().len()).unwrap();
        let report = finite_diff_check(&layer, &input, &target, DEFAULT_STEP).unwrap();
        assert!(
            report.within(BILINEAR_TOLERANCE),
            "max rel error {:.3e} at {}",
            report.max_rel_error(),
            report.worst_parameter
        );
    }

    #[test]
    fn bicubic_gradients_match_finite_differences() {
        let cfg = SuiteConfig::new(200, 5, KernelSpec::bicubic());
        let report = run_suite(&cfg).unwrap();
        assert!(
            report.within(BICUBIC_TOLERANCE),
            "max rel error {:.3e} at {}",
            report.max_rel_error(),
            report.worst_parameter
        );
        assert_eq!(report.configurations_tested, 5);
    }

    #[test]
    fn global_minimum_reports_exactly_zero() {
        // The loss is identically zero on a zero image, so both routes
        // agree exactly.
        let layer = PTLayer::new(
            1,
            KernelSpec::Bilinear,
            LayerInit::IdentityJitter { seed: 31 },
        )
        .unwrap();
        let input = ImageTensor::zeros(1, 8, 8, 1).unwrap();
        let target = ImageTensor::zeros(1, 8, 8, 1).unwrap();
        let report = finite_diff_check(&layer, &input, &target, DEFAULT_STEP).unwrap();
        assert_eq!(report.max_rel_error_input, 0.0);
        assert_eq!(report.max_rel_error_tms, 0.0);
    }

    #[test]
    fn exact_identity_is_rejected_for_breakpoint_proximity() {
        let layer = PTLayer::new(1, KernelSpec::Bilinear, LayerInit::ExactIdentity).unwrap();
        let input = ImageTensor::zeros(1, 6, 6, 1).unwrap();
        let err = finite_diff_check(&layer, &input, &input, DEFAULT_STEP).unwrap_err();
        assert!(matches!(err, Error::ConfigRejected(_)), "got {err:?}");
        assert!(err.to_string().contains("breakpoint"));
    }

    #[test]
    fn near_guard_omega_is_rejected() {
        let tm =
            Homography::from_params([1.0, 0.0, 0.3, 0.0, 1.0, 0.3, -1.0 / 7.0, 0.0]).unwrap();
        let layer = PTLayer::from_tms(vec![tm], KernelSpec::Bilinear).unwrap();
        let input = ImageTensor::zeros(1, 8, 8, 1).unwrap();
        let err = finite_diff_check(&layer, &input, &input, DEFAULT_STEP).unwrap_err();
        assert!(matches!(err, Error::ConfigRejected(_)), "got {err:?}");
        assert!(err.to_string().contains("omega"));
    }

    #[test]
    fn seeded_bugs_are_detected() {
        for bug in [
            SeededBug::DroppedQuotientTerm,
            SeededBug::SwappedKernelAxes,
            SeededBug::SumInsteadOfMean,
        ] {
            let cfg = SuiteConfig::new(300, 3, KernelSpec::Bilinear);
            let report = run_suite_with_bug(&cfg, Some(bug)).unwrap();
            assert!(
                report.max_rel_error() > 1e-2,
                "{bug:?} only reached {:.3e}",
                report.max_rel_error()
            );
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let cfg = SuiteConfig::new(400, 4, KernelSpec::Bilinear);
        let a = run_suite(&cfg).unwrap();
        let b = run_suite(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_renders_as_table_and_csv() {
        let report = GradCheckReport {
            max_rel_error_input: 1.5e-7,
            max_rel_error_tms: 2.5e-8,
            worst_parameter: "tm0.t31".into(),
            configurations_tested: 10,
        };
        let table = report.to_table();
        assert!(table.contains("tm0.t31"));
        assert!(table.contains("10"));
        let csv = report.to_csv();
        assert!(csv.starts_with("max_rel_error_input,"));
        assert_eq!(csv.lines().count(), 2);
    }
}
