//! Fixed depthwise Sobel gradient-magnitude layer.

use mvss_tensor::{Tensor, Var};

/// Added under the square root so the magnitude stays differentiable at zero.
pub const SOBEL_EPS: f64 = 1e-8;

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Horizontal and vertical responses per element, replicate-padded.
fn responses(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.dims4();
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let (mut sx, mut sy) = (0.0, 0.0);
                for (u, (kx, ky)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                    let yy = (y + u).saturating_sub(1).min(h - 1);
                    for v in 0..3 {
                        let xs = (xx + v).saturating_sub(1).min(w - 1);
                        let val = plane[yy * w + xs];
                        sx += kx[v] * val;
                        sy += ky[v] * val;
                    }
                }
                gx[p * h * w + y * w + xx] = sx;
                gy[p * h * w + y * w + xx] = sy;
            }
        }
    }
    (gx, gy)
}

/// `sqrt(gx² + gy² + ε)` per channel; same shape as the input.
pub fn sobel_magnitude(x: &Tensor) -> Tensor {
    let (gx, gy) = responses(x);
    Tensor::new(
        x.shape(),
        gx.iter()
            .zip(&gy)
            .map(|(a, b)| (a * a + b * b + SOBEL_EPS).sqrt())
            .collect(),
    )
}

/// Differentiable Sobel layer.
pub fn sobel_forward<'t>(x: Var<'t>) -> Var<'t> {
    let input = x.value();
    assert!(input.shape()[1] >= 1, "sobel layer needs at least one channel");
    let (gx, gy) = responses(&input);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b + SOBEL_EPS).sqrt())
        .collect();
    let out = Tensor::new(input.shape(), mag.clone());
    let [n, c, h, w] = input.dims4();
    x.tape().op(out, &[x], move |grad, _| {
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let d = dx.data_mut();
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..h {
                for xx in 0..w {
                    let i = base + y * w + xx;
                    let scale = grad.data()[i] / mag[i];
                    let (dgx, dgy) = (gx[i] * scale, gy[i] * scale);
                    for (u, (kx, ky)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                        let yy = (y + u).saturating_sub(1).min(h - 1);
                        for v in 0..3 {
                            let xs = (xx + v).saturating_sub(1).min(w - 1);
                            d[base + yy * w + xs] += kx[v] * dgx + ky[v] * dgy;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvss_tensor::Tape;

    #[test]
    fn constant_channel_gives_sqrt_eps() {
        let x = Tensor::full(&[1, 2, 5, 5], 0.37);
        let y = sobel_magnitude(&x);
        assert!(y.data().iter().all(|&v| (v - SOBEL_EPS.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn horizontal_ramp_center_response_is_eight() {
        // every row reads [0, 1, 2]
        let x = Tensor::new(&[1, 1, 3, 3], vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        let (gx, gy) = responses(&x);
        assert_eq!(gx[4], 8.0);
        assert_eq!(gy[4], 0.0);
        assert!((sobel_magnitude(&x).data()[4] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn layer_matches_plain_function() {
        let x = Tensor::from_fn(&[2, 3, 4, 6], |i| (i as f64 * 0.71).sin());
        let tape = Tape::new();
        let v = sobel_forward(tape.leaf(x.clone()));
        assert_eq!(*v.value(), sobel_magnitude(&x));
    }
}
