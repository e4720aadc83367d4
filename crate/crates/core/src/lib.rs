//! Differentiable perspective-transformation image warping.
//!
//! The centerpiece is [`layer::PTLayer`], a warp layer holding one or more
//! learnable 3x3 homographies (8 degrees of freedom each). Its forward
//! pass gathers input pixels through each matrix with a separable
//! interpolation kernel, and its backward pass returns exact analytic
//! gradients for both the input image and every matrix parameter, so the
//! matrices can be trained by plain gradient descent.
//!
//! Supporting modules: [`homography`] (construction, composition,
//! four-point estimation), [`sampling`] (bilinear/bicubic kernels and
//! derivatives), [`image`] (tensors, PGM/PPM I/O, MSE loss), [`optim`]
//! (SGD/Adam and the rectification training loop), [`distort`] (random
//! corpus distortion), and [`gradcheck`] (a finite-difference oracle for
//! every gradient in the crate).

pub mod distort;
pub mod error;
pub mod gradcheck;
pub mod homography;
pub mod image;
pub mod layer;
pub mod optim;
pub mod sampling;

pub use error::{Error, Result};
pub use homography::{CameraExtrinsics, CameraIntrinsics, Homography, Point2};
pub use image::ImageTensor;
pub use layer::{BackwardResult, ForwardCache, GradReduction, LayerInit, PTLayer};
pub use sampling::KernelSpec;
