//! First-order optimizers and the stacked-layer rectification loop.
//!
//! Training is full batch and single threaded, so identical inputs and
//! seeds reproduce bit-identical traces.

use std::io::Write;

use crate::error::{Error, Result};
use crate::homography::{Homography, Point2};
use crate::image::{mse, ImageTensor};
use crate::layer::{ForwardCache, LayerInit, PTLayer};
use crate::sampling::KernelSpec;

/// One step of plain gradient descent: `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m1: Vec<f64>,
    m2: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the conventional hyperparameters
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m1: vec![0.0; n_params],
            m2: vec![0.0; n_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m1.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters vs {} gradients vs {} state slots",
                params.len(),
                grads.len(),
                self.m1.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m1[i] = self.beta1 * self.m1[i] + (1.0 - self.beta1) * grads[i];
            self.m2[i] = self.beta2 * self.m2[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m1[i] / bc1;
            let v_hat = self.m2[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// A stack of single-TM layers trained to undo a perspective distortion.
#[derive(Debug, Clone)]
pub struct RectifierModel {
    layers: Vec<PTLayer>,
}

impl RectifierModel {
    pub fn layers(&self) -> &[PTLayer] {
        &self.layers
    }

    /// Run the stack, discarding the caches.
    pub fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            let (out, _) = layer.forward(&x)?;
            x = out;
        }
        Ok(x)
    }

    fn forward_with_caches(&self, input: &ImageTensor) -> Result<(ImageTensor, Vec<ForwardCache>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = out;
        }
        Ok((x, caches))
    }

    /// The single homography equivalent to the whole stack.
    ///
    /// With gather semantics, coordinates flow from the final output back
    /// through each layer in turn, so the first layer's matrix is the
    /// outermost factor: `composite = tm_1 * tm_2 * ... * tm_L`.
    pub fn composite(&self) -> Result<Homography> {
        let mut acc = self.layers[0].tms()[0];
        for layer in &self.layers[1..] {
            acc = acc.compose(&layer.tms()[0])?;
        }
        Ok(acc)
    }
}

/// How the rectifier's layers are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RectifierInit {
    ExactIdentity,
    /// Identity jitter, seeded per layer from the training seed.
    IdentityJitter,
}

/// Configuration for [`train_rectifier`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub kernel: KernelSpec,
    pub layer_count: usize,
    pub seed: u64,
    pub init: RectifierInit,
    /// When the distortion that produced the inputs is known, the report
    /// includes the corner reprojection error of `composite o distortion`.
    pub true_distortion: Option<Homography>,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, kernel: KernelSpec, layer_count: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            kernel,
            layer_count,
            seed,
            init: RectifierInit::IdentityJitter,
            true_distortion: None,
        }
    }
}

/// Outcome of a rectification run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Full-batch MSE recorded at the start of every epoch.
    pub loss_trace: Vec<f64>,
    /// Equivalent single homography of the trained stack.
    pub composite: Homography,
    /// Max corner reprojection error in pixels, when the true distortion
    /// was supplied.
    pub corner_reprojection_error: Option<f64>,
}

impl TrainReport {
    /// Emit the loss trace as CSV with header `epoch,mse`.
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,mse")?;
        for (epoch, loss) in self.loss_trace.iter().enumerate() {
            writeln!(w, "{},{:.16e}", epoch, loss)?;
        }
        Ok(())
    }
}

/// Train a stack of single-TM layers to map each distorted image onto its
/// original by full-batch Adam on the MSE loss.
pub fn train_rectifier(
    pairs: &[(ImageTensor, ImageTensor)],
    config: &TrainConfig,
) -> Result<(RectifierModel, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("need at least one epoch".into()));
    }
    if config.layer_count == 0 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    let shape = pairs[0].0.dims();
    for (distorted, original) in pairs {
        if distorted.dims() != shape || original.dims() != shape {
            return Err(Error::ShapeMismatch(
                "all training pairs must share one shape".into(),
            ));
        }
    }

    let distorted: Vec<ImageTensor> = pairs.iter().map(|(d, _)| d.clone()).collect();
    let originals: Vec<ImageTensor> = pairs.iter().map(|(_, o)| o.clone()).collect();
    let inputs = ImageTensor::stack(&distorted)?;
    let targets = ImageTensor::stack(&originals)?;

    let mut layers = Vec::with_capacity(config.layer_count);
    for l in 0..config.layer_count {
        let init = match config.init {
            RectifierInit::ExactIdentity => LayerInit::ExactIdentity,
            RectifierInit::IdentityJitter => LayerInit::IdentityJitter {
                seed: config.seed.wrapping_add(l as u64),
            },
        };
        layers.push(PTLayer::new(1, config.kernel, init)?);
    }
    let mut model = RectifierModel { layers };

    let n_params = config.layer_count * 8;
    let mut adam = AdamState::new(n_params, config.lr);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let (output, caches) = model.forward_with_caches(&inputs)?;
        let (loss, loss_grad) = mse(&output, &targets)?;
        loss_trace.push(loss);

        // Chain the gradient back through the stack; each layer's d_input
        // feeds the previous layer's backward pass.
        let mut grads = vec![0.0f64; n_params];
        let mut upstream = loss_grad;
        for (l, (layer, cache)) in model.layers.iter().zip(&caches).enumerate().rev() {
            let result = layer.backward(cache, &upstream)?;
            grads[l * 8..(l + 1) * 8].copy_from_slice(&result.d_tms[0]);
            upstream = result.d_input;
        }

        let mut params: Vec<f64> = model.layers.iter().flat_map(|l| l.params()).collect();
        adam.step(&mut params, &grads)?;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            layer.set_params(&params[l * 8..(l + 1) * 8])?;
        }
    }

    let composite = model.composite()?;
    let corner_reprojection_error = match &config.true_distortion {
        Some(distortion) => Some(corner_reprojection_error(
            &composite,
            distortion,
            shape.2,
            shape.1,
        )?),
        None => None,
    };

    let report = TrainReport {
        loss_trace,
        composite,
        corner_reprojection_error,
    };
    Ok((model, report))
}

/// Max distance, over the four image corners, between
/// `composite(distortion(corner))` and the corner itself.
///
/// When the stack has learned the inverse of the distortion this is small.
pub fn corner_reprojection_error(
    composite: &Homography,
    distortion: &Homography,
    width: usize,
    height: usize,
) -> Result<f64> {
    let w = (width - 1) as f64;
    let h = (height - 1) as f64;
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ];
    let mut worst = 0.0f64;
    for corner in corners {
        let through = composite.apply(distortion.apply(corner)?)?;
        let dist = ((through.x - corner.x).powi(2) + (through.y - corner.y).powi(2)).sqrt();
        worst = worst.max(dist);
    }
    Ok(worst)
}
