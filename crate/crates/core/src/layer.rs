//! The perspective-transformation layer: a multi-matrix forward warp and
//! the analytic backward pass to both the layer input and the eight free
//! parameters of every transformation matrix.
//!
//! Conventions, fixed here once for the whole crate:
//!
//! * Pixel centers sit at integer coordinates `0..W-1` x `0..H-1`;
//!   `x` indexes columns and `y` rows.
//! * Each TM maps *output* integer coordinates to *input* sampling
//!   coordinates (a gather / inverse warp). The sampling point for output
//!   pixel `(xo, yo)` is `(x'', y'') = tm.project(xo, yo)`.
//! * Taps outside the input rectangle read as zero (zero padding), and
//!   pixels whose homogeneous scale trips the omega guard contribute
//!   exactly zero to the output and to every gradient.
//! * A layer with `M` matrices fans `Ch` input channels out to `Ch x M`
//!   output channels; output channel `m * Ch + ch` holds input channel
//!   `ch` warped by matrix `m`.
//!
//! All loops run in a fixed order, so repeated calls are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::image::ImageTensor;
use crate::sampling::KernelSpec;

/// How per-position parameter derivatives combine into one TM gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradReduction {
    /// Arithmetic mean over the `N x H x W x Ch` contributing positions.
    Mean,
    /// Plain sum, the convention mainstream autodiff frameworks use.
    Sum,
}

/// Initialization of the layer's transformation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerInit {
    ExactIdentity,
    /// Identity plus uniform noise: `+-1e-2` on the six affine parameters
    /// and `+-1e-3` on the two perspective parameters, drawn from a seeded
    /// generator in TM-major, row-major parameter order.
    IdentityJitter { seed: u64 },
}

const JITTER_AFFINE: f64 = 1e-2;
const JITTER_PERSPECTIVE: f64 = 1e-3;

/// A perspective-transformation layer.
#[derive(Debug, Clone)]
pub struct PTLayer {
    tms: Vec<Homography>,
    kernel: KernelSpec,
    grad_reduction: GradReduction,
}

/// Per-output-pixel sampling data retained by the forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub(crate) xs: f64,
    pub(crate) ys: f64,
    pub(crate) omega: f64,
    pub(crate) valid: bool,
}

/// Intermediates from a forward call, consumed by [`PTLayer::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: ImageTensor,
    samples: Vec<Vec<Sample>>,
    tm_params: Vec<[f64; 8]>,
    kernel: KernelSpec,
}

impl ForwardCache {
    pub fn input(&self) -> &ImageTensor {
        &self.input
    }
}

/// Gradients produced by the backward pass.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    /// Gradient of the loss with respect to the layer input.
    pub d_input: ImageTensor,
    /// Per-matrix gradients for the eight free parameters, TM-major.
    pub d_tms: Vec<[f64; 8]>,
}

/// Seeded gradient bugs used by the gradient-check harness to prove it
/// can detect broken backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mutation {
    /// Omit the quotient-rule terms for the two perspective parameters.
    DropQuotientTerm,
    /// Evaluate kernel arguments with the image axes swapped.
    SwapKernelAxes,
    /// Reduce with a sum while the layer promises a mean.
    SumInsteadOfMean,
}

impl PTLayer {
    /// Create a layer with `m_count` transformation matrices.
    pub fn new(m_count: usize, kernel: KernelSpec, init: LayerInit) -> Result<Self> {
        if m_count == 0 {
            return Err(Error::InvalidArgument(
                "a layer needs at least one transformation matrix".into(),
            ));
        }
        let tms = match init {
            LayerInit::ExactIdentity => vec![Homography::identity(); m_count],
            LayerInit::IdentityJitter { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut tms = Vec::with_capacity(m_count);
                for _ in 0..m_count {
                    let mut p = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
                    for (k, slot) in p.iter_mut().enumerate() {
                        let scale = if k < 6 { JITTER_AFFINE } else { JITTER_PERSPECTIVE };
                        *slot += (rng.gen::<f64>() * 2.0 - 1.0) * scale;
                    }
                    tms.push(Homography::from_params(p)?);
                }
                tms
            }
        };
        Ok(Self {
            tms,
            kernel,
            grad_reduction: GradReduction::Mean,
        })
    }

    /// Wrap explicit transformation matrices.
    pub fn from_tms(tms: Vec<Homography>, kernel: KernelSpec) -> Result<Self> {
        if tms.is_empty() {
            return Err(Error::InvalidArgument(
                "a layer needs at least one transformation matrix".into(),
            ));
        }
        Ok(Self {
            tms,
            kernel,
            grad_reduction: GradReduction::Mean,
        })
    }

    pub fn tms(&self) -> &[Homography] {
        &self.tms
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn grad_reduction(&self) -> GradReduction {
        self.grad_reduction
    }

    pub fn set_grad_reduction(&mut self, reduction: GradReduction) {
        self.grad_reduction = reduction;
    }

    /// All free parameters, TM-major, row-major within each matrix.
    pub fn params(&self) -> Vec<f64> {
        self.tms.iter().flat_map(|tm| tm.params()).collect()
    }

    /// Replace all free parameters; fails if any matrix becomes singular.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.tms.len() * 8 {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.tms.len() * 8,
                params.len()
            )));
        }
        let mut tms = Vec::with_capacity(self.tms.len());
        for chunk in params.chunks_exact(8) {
            let p: [f64; 8] = chunk.try_into().expect("chunk of 8");
            tms.push(Homography::from_params(p)?);
        }
        self.tms = tms;
        Ok(())
    }

    /// Warp the input through every transformation matrix.
    ///
    /// Output shape is `N x H x W x (Ch x M)`. The returned cache holds the
    /// sampling coordinates and is required by [`PTLayer::backward`].
    pub fn forward(&self, input: &ImageTensor) -> Result<(ImageTensor, ForwardCache)> {
        let (n_batch, height, width, channels) = input.dims();
        let m_count = self.tms.len();
        let mut output = ImageTensor::zeros(n_batch, height, width, channels * m_count)?;

        let mut samples = Vec::with_capacity(m_count);
        for tm in &self.tms {
            let mut grid = Vec::with_capacity(height * width);
            for yo in 0..height {
                for xo in 0..width {
                    match tm.project(xo as f64, yo as f64) {
                        Some((xs, ys, omega)) => grid.push(Sample {
                            xs,
                            ys,
                            omega,
                            valid: true,
                        }),
                        None => grid.push(Sample {
                            xs: 0.0,
                            ys: 0.0,
                            omega: 0.0,
                            valid: false,
                        }),
                    }
                }
            }
            samples.push(grid);
        }

        let radius = self.kernel.radius();
        let mut taps: Vec<(usize, usize, f64)> = Vec::with_capacity(16);
        for (m, grid) in samples.iter().enumerate() {
            for yo in 0..height {
                for xo in 0..width {
                    let s = grid[yo * width + xo];
                    if !s.valid {
                        continue;
                    }
                    taps.clear();
                    let x0 = s.xs.floor() as i64;
                    let y0 = s.ys.floor() as i64;
                    for y in (y0 - radius + 1)..=(y0 + radius) {
                        if y < 0 || y >= height as i64 {
                            continue;
                        }
                        let k1y = self.kernel.k1(s.ys - y as f64);
                        for x in (x0 - radius + 1)..=(x0 + radius) {
                            if x < 0 || x >= width as i64 {
                                continue;
                            }
                            let w = self.kernel.k1(s.xs - x as f64) * k1y;
                            taps.push((y as usize, x as usize, w));
                        }
                    }
                    for n in 0..n_batch {
                        for c in 0..channels {
                            let mut acc = 0.0;
                            for &(y, x, w) in &taps {
                                acc += input.get(n, y, x, c) * w;
                            }
                            output.set(n, yo, xo, m * channels + c, acc);
                        }
                    }
                }
            }
        }

        let cache = ForwardCache {
            input: input.clone(),
            samples,
            tm_params: self.tms.iter().map(|tm| tm.params()).collect(),
            kernel: self.kernel,
        };
        Ok((output, cache))
    }

    /// Propagate `d_output` back to the layer input and TM parameters.
    pub fn backward(&self, cache: &ForwardCache, d_output: &ImageTensor) -> Result<BackwardResult> {
        self.backward_impl(cache, d_output, None)
    }

    pub(crate) fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_output: &ImageTensor,
        mutation: Option<Mutation>,
    ) -> Result<BackwardResult> {
        let (n_batch, height, width, channels) = cache.input.dims();
        let m_count = self.tms.len();
        if cache.kernel != self.kernel
            || cache.tm_params.len() != m_count
            || cache
                .tm_params
                .iter()
                .zip(&self.tms)
                .any(|(p, tm)| *p != tm.params())
        {
            return Err(Error::CacheMismatch(
                "cache was produced by a different layer state".into(),
            ));
        }
        let expected = (n_batch, height, width, channels * m_count);
        if d_output.dims() != expected {
            return Err(Error::ShapeMismatch(format!(
                "d_output {:?}, expected {:?}",
                d_output.dims(),
                expected
            )));
        }

        let mut d_input = ImageTensor::zeros(n_batch, height, width, channels)?;
        let mut d_tms = vec![[0.0f64; 8]; m_count];
        let radius = self.kernel.radius();
        let swap_axes = mutation == Some(Mutation::SwapKernelAxes);
        let drop_quotient = mutation == Some(Mutation::DropQuotientTerm);

        for (m, grid) in cache.samples.iter().enumerate() {
            for yo in 0..height {
                for xo in 0..width {
                    let s = grid[yo * width + xo];
                    if !s.valid {
                        continue;
                    }
                    let x0 = s.xs.floor() as i64;
                    let y0 = s.ys.floor() as i64;
                    for n in 0..n_batch {
                        for c in 0..channels {
                            let g = d_output.get(n, yo, xo, m * channels + c);
                            let mut dl_dxs = 0.0;
                            let mut dl_dys = 0.0;
                            for y in (y0 - radius + 1)..=(y0 + radius) {
                                if y < 0 || y >= height as i64 {
                                    continue;
                                }
                                for x in (x0 - radius + 1)..=(x0 + radius) {
                                    if x < 0 || x >= width as i64 {
                                        continue;
                                    }
                                    let (du, dv) = if swap_axes {
                                        (s.xs - y as f64, s.ys - x as f64)
                                    } else {
                                        (s.xs - x as f64, s.ys - y as f64)
                                    };
                                    let k1u = self.kernel.k1(du);
                                    let k1v = self.kernel.k1(dv);
                                    let v = cache.input.get(n, y as usize, x as usize, c);
                                    d_input.add(n, y as usize, x as usize, c, g * (k1u * k1v));
                                    dl_dxs += v * (self.kernel.k1_prime(du) * k1v);
                                    dl_dys += v * (k1u * self.kernel.k1_prime(dv));
                                }
                            }
                            dl_dxs *= g;
                            dl_dys *= g;

                            // Chain x'' = x'/omega, y'' = y'/omega through the
                            // perspective divide: the affine parameters see
                            // (xo, yo, 1)/omega, and the perspective row picks
                            // up the quotient-rule terms -x''/omega, -y''/omega.
                            let inv_omega = 1.0 / s.omega;
                            let xo_f = xo as f64;
                            let yo_f = yo as f64;
                            let d = &mut d_tms[m];
                            d[0] += dl_dxs * xo_f * inv_omega;
                            d[1] += dl_dxs * yo_f * inv_omega;
                            d[2] += dl_dxs * inv_omega;
                            d[3] += dl_dys * xo_f * inv_omega;
                            d[4] += dl_dys * yo_f * inv_omega;
                            d[5] += dl_dys * inv_omega;
                            if !drop_quotient {
                                let t = -(dl_dxs * s.xs + dl_dys * s.ys) * inv_omega;
                                d[6] += t * xo_f;
                                d[7] += t * yo_f;
                            }
                        }
                    }
                }
            }
        }

        let apply_mean = self.grad_reduction == GradReduction::Mean
            && mutation != Some(Mutation::SumInsteadOfMean);
        if apply_mean {
            let positions = (n_batch * height * width * channels) as f64;
            for d in &mut d_tms {
                for entry in d.iter_mut() {
                    *entry /= positions;
                }
            }
        }

        Ok(BackwardResult { d_input, d_tms })
    }
}
