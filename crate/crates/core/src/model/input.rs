use image::RgbImage;
use mvss_tensor::Tensor;

use crate::error::{Error, Result};

/// Spatial reduction of the fused attention map relative to the input.
pub const FUSION_STRIDE: usize = 16;

/// Batched RGB input `[batch, 3, height, width]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::Input(format!(
                "expected [batch, 3, height, width], got {:?}",
                tensor.shape()
            )));
        }
        let [n, c, h, w] = tensor.dims4();
        if n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if c != 3 {
            return Err(Error::Input(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % FUSION_STRIDE != 0 || w % FUSION_STRIDE != 0 {
            return Err(Error::Input(format!(
                "height and width must be positive multiples of {FUSION_STRIDE}, got {h}x{w}"
            )));
        }
        if let Some(bad) = tensor
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Input(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self(tensor))
    }

    /// Stacks 8-bit images of identical size, scaling to `[0, 1]`.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Result<Self> {
        let mut data = Vec::new();
        let mut dims = None;
        let mut n = 0;
        for img in images {
            let (w, h) = img.dimensions();
            match dims {
                None => dims = Some((w, h)),
                Some(d) if d != (w, h) => {
                    return Err(Error::Input(format!(
                        "batch mixes image sizes {}x{} and {w}x{h}",
                        d.0, d.1
                    )))
                }
                _ => {}
            }
            let plane = (w * h) as usize;
            let start = data.len();
            data.resize(start + 3 * plane, 0.0);
            for (i, px) in img.pixels().enumerate() {
                for ch in 0..3 {
                    data[start + ch * plane + i] = f64::from(px.0[ch]) / 255.0;
                }
            }
            n += 1;
        }
        let (w, h) = dims.ok_or_else(|| Error::Input("empty batch".into()))?;
        Self::new(Tensor::new(&[n, 3, h as usize, w as usize], data))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }
}

/// Converts one `[3, h, w]` slice in `[0, 1]` back to 8-bit RGB.
pub fn tensor_to_rgb(plane: &[f64], height: usize, width: usize) -> RgbImage {
    let n = height * width;
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        let px = |c: usize| (plane[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}
