//! Crate-wide error type.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed file contents (image headers, manifests, homography text).
    #[error("malformed input: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A constructed or composed matrix is not usably invertible.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// The camera-matrix restriction has a near-zero projective scale.
    #[error("degenerate camera: plane restriction has scale {0:e}")]
    DegenerateCamera(f64),

    /// The perspective divide hit the omega guard at a specific point.
    #[error("horizon singularity at ({x}, {y}): |omega| = {omega:e}")]
    HorizonSingularity { x: f64, y: f64, omega: f64 },

    /// A backward pass was handed a cache from a different forward call.
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),

    /// Rejection sampling gave up (distortion strength too aggressive).
    #[error("rejection limit reached: {0}")]
    RejectionLimit(String),

    /// A gradient-check configuration violates its sampling preconditions.
    #[error("configuration rejected: {0}")]
    ConfigRejected(String),
}
