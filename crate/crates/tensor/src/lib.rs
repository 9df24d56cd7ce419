//! Small CPU tensor library with a reverse-mode autodiff tape.
//!
//! Everything is `f64` and single-threaded, which keeps results
//! bit-reproducible and makes finite-difference gradient checks meaningful.

pub mod gemm;
mod ops;
mod tape;
mod tensor;

pub use ops::basic::{first_argmax, sigmoid};
pub use ops::conv::{conv2d_forward, pad_replicate, Conv2dOpts};
pub use ops::resize::resize_bilinear;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Central finite-difference helpers shared by gradient-check tests.
pub mod check {
    use crate::Tensor;

    /// Central difference of `f` along element `index` of `x`.
    pub fn central_difference(x: &Tensor, index: usize, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
        let mut plus = x.clone();
        plus.data_mut()[index] += h;
        let mut minus = x.clone();
        minus.data_mut()[index] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    /// `|a - b| / max(|a|, |b|)`, or the absolute error when both are below `floor`.
    pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs());
        if scale < floor {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / scale
        }
    }
}
