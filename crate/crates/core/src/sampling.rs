//! Separable interpolation kernels and their first derivatives.
//!
//! Both kernels are total functions; at the piecewise breakpoints the
//! derivative takes the right-hand one-sided value so the backward pass
//! never has to special-case them.

/// Conventional Catmull-Rom-like choice for the bicubic free parameter.
pub const DEFAULT_BICUBIC_ALPHA: f64 = -0.5;

/// Interpolation kernel selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Triangle kernel, 2x2 taps.
    Bilinear,
    /// Cubic convolution kernel with free parameter `alpha`
    /// (conventionally in `[-1, 0]`), 4x4 taps.
    Bicubic { alpha: f64 },
}

impl KernelSpec {
    pub fn bicubic() -> Self {
        Self::Bicubic {
            alpha: DEFAULT_BICUBIC_ALPHA,
        }
    }

    /// Half-width of the support: taps live at offsets in `(-radius, radius)`.
    pub fn radius(&self) -> i64 {
        match self {
            Self::Bilinear => 1,
            Self::Bicubic { .. } => 2,
        }
    }

    /// One-dimensional kernel value.
    pub fn k1(&self, u: f64) -> f64 {
        match *self {
            Self::Bilinear => {
                let a = u.abs();
                if a < 1.0 {
                    1.0 - a
                } else {
                    0.0
                }
            }
            Self::Bicubic { alpha } => {
                let a = u.abs();
                if a <= 1.0 {
                    ((alpha + 2.0) * a - (alpha + 3.0)) * a * a + 1.0
                } else if a < 2.0 {
                    alpha * (a * a * a - 5.0 * a * a + 8.0 * a - 4.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of [`KernelSpec::k1`]; right-hand one-sided at breakpoints.
    pub fn k1_prime(&self, u: f64) -> f64 {
        match *self {
            Self::Bilinear => {
                if u < -1.0 {
                    0.0
                } else if u < 0.0 {
                    1.0
                } else if u < 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Bicubic { alpha } => {
                if u < -2.0 {
                    0.0
                } else if u < -1.0 {
                    -(3.0 * alpha * u * u + 10.0 * alpha * u + 8.0 * alpha)
                } else if u < 0.0 {
                    -(3.0 * (alpha + 2.0) * u * u + 2.0 * (alpha + 3.0) * u)
                } else if u < 1.0 {
                    3.0 * (alpha + 2.0) * u * u - 2.0 * (alpha + 3.0) * u
                } else if u < 2.0 {
                    3.0 * alpha * u * u - 10.0 * alpha * u + 8.0 * alpha
                } else {
                    0.0
                }
            }
        }
    }

    /// Separable 2D weight `k1(du) * k1(dv)`.
    pub fn weight(&self, du: f64, dv: f64) -> f64 {
        self.k1(du) * self.k1(dv)
    }
}
