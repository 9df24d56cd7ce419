//! Constrained noise-residual convolution.
//!
//! Every `(out, in)` kernel slice keeps its centre at `-1` and its remaining
//! 24 weights summing to `+1`, so the filter responds to local deviations
//! from the neighbourhood rather than to image content.

use mvss_tensor::{Conv2dOpts, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

pub const BAYAR_KERNEL: usize = 5;
const CENTER: usize = (BAYAR_KERNEL / 2) * BAYAR_KERNEL + BAYAR_KERNEL / 2;
const SLICE: usize = BAYAR_KERNEL * BAYAR_KERNEL;

/// Below this magnitude the non-centre sum cannot be normalised.
const DEGENERATE_SUM: f64 = 1e-12;
/// Sums this close to one are left untouched, making projection idempotent.
const ALREADY_NORMALISED: f64 = 1e-12;

/// A kernel slice that had to be reinitialised during projection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionWarning {
    pub out_channel: usize,
    pub in_channel: usize,
}

impl std::fmt::Display for ProjectionWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "bayar slice ({}, {}) had a zero neighbourhood sum and was reset to 1/24",
            self.out_channel, self.in_channel
        )
    }
}

/// Projects `kernel` (`[out, in, 5, 5]`) onto the constraint set in place.
pub fn bayar_project(kernel: &mut Tensor) -> Result<Vec<ProjectionWarning>> {
    if kernel.rank() != 4 || kernel.shape()[2] != BAYAR_KERNEL || kernel.shape()[3] != BAYAR_KERNEL {
        return Err(Error::Config(format!(
            "bayar kernel must be [out, in, 5, 5], got {:?}",
            kernel.shape()
        )));
    }
    let [_, in_ch, _, _] = kernel.dims4();
    let mut warnings = Vec::new();
    for (s, slice) in kernel.data_mut().chunks_mut(SLICE).enumerate() {
        slice[CENTER] = 0.0;
        let sum: f64 = slice.iter().sum();
        if !sum.is_finite() || sum.abs() < DEGENERATE_SUM {
            slice.fill(1.0 / (SLICE - 1) as f64);
            warnings.push(ProjectionWarning {
                out_channel: s / in_ch,
                in_channel: s % in_ch,
            });
        } else if (sum - 1.0).abs() > ALREADY_NORMALISED {
            for v in slice.iter_mut() {
                *v /= sum;
            }
        }
        slice[CENTER] = -1.0;
    }
    Ok(warnings)
}

/// Checks the constraint: centre exactly `-1`, neighbourhood sum within `tol` of `1`.
pub fn satisfies_constraint(kernel: &Tensor, tol: f64) -> bool {
    kernel.data().chunks(SLICE).all(|slice| {
        let sum: f64 = slice
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != CENTER)
            .map(|(_, v)| v)
            .sum();
        slice[CENTER] == -1.0 && (sum - 1.0).abs() <= tol
    })
}

/// Random projected kernel `[out, in, 5, 5]`.
pub fn init_kernel(rng: &mut impl Rng, out_channels: usize, in_channels: usize) -> Tensor {
    let mut k = Tensor::from_fn(&[out_channels, in_channels, BAYAR_KERNEL, BAYAR_KERNEL], |_| {
        rng.random_range(0.0..1.0)
    });
    bayar_project(&mut k).expect("shape is 5x5 by construction");
    k
}

/// Replicate-padded, stride-1 convolution with the (already projected) kernel.
pub fn bayar_forward<'t>(x: Var<'t>, kernel: Var<'t>) -> Var<'t> {
    x.pad_replicate(BAYAR_KERNEL / 2)
        .conv2d(kernel, None, Conv2dOpts::default())
}
