//! Samples, synthetic forgeries, edge labels, augmentation and ingestion.

pub mod augment;
pub mod edge;
pub mod forge;
pub mod generate;
pub mod manifest;
pub mod perturb;
pub mod synth;

use image::{GrayImage, Luma, RgbImage};
use mvss_tensor::Tensor;

use crate::error::{Error, Result};
use crate::losses::BatchLabels;
use crate::model::ImageTensor;

pub use edge::edge_label_from_mask;
pub use forge::{ManipulationKind, ManipulationSpec, Region};

/// Grey levels above this are foreground when binarising 8-bit masks.
pub const MASK_THRESHOLD: u8 = 127;

/// Binary pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self { width, height, data }
    }

    /// Foreground where the grey level exceeds [`MASK_THRESHOLD`].
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().map(|p| u8::from(p.0[0] > MASK_THRESHOLD)).collect(),
        }
    }

    /// 0/255 rendering.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = u8::from(value);
    }

    /// Row-major 0/1 values.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn overlaps(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a != 0 && b != 0)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(x, self.height - 1 - y))
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a != 0 && b != 0);
            union += usize::from(a != 0 || b != 0);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Pixel mask, derived quarter-resolution edge label, and `max` of the mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleLabel {
    pub mask: Mask,
    pub edge: Mask,
    pub image_label: u8,
}

impl SampleLabel {
    pub fn from_mask(mask: Mask) -> Self {
        let edge = edge_label_from_mask(&mask);
        let image_label = u8::from(!mask.is_empty());
        Self {
            mask,
            edge,
            image_label,
        }
    }

    pub fn authentic(width: u32, height: u32) -> Self {
        Self::from_mask(Mask::new(width, height))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub label: SampleLabel,
    /// Manipulation tag, when known.
    pub kind: Option<String>,
}

impl Sample {
    pub fn new(image: RgbImage, mask: Mask) -> Result<Self> {
        if image.dimensions() != mask.dimensions() {
            return Err(Error::Input(format!(
                "image is {:?} but mask is {:?}",
                image.dimensions(),
                mask.dimensions()
            )));
        }
        Ok(Self {
            image,
            label: SampleLabel::from_mask(mask),
            kind: None,
        })
    }

    pub fn with_kind(mut self, kind: impl Into<String>) -> Self {
        self.kind = Some(kind.into());
        self
    }

    pub fn is_manipulated(&self) -> bool {
        self.label.image_label > 0
    }
}

/// Stacks samples into a network input and matching labels.
pub fn make_batch<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<(ImageTensor, BatchLabels)> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    let images = ImageTensor::from_images(samples.iter().map(|s| &s.image))?;
    let n = samples.len();
    let (h, w) = (images.height(), images.width());
    let edge_dims = samples[0].label.edge.dimensions();
    let mut masks = Vec::with_capacity(n * h * w);
    let mut edges = Vec::new();
    for s in &samples {
        if s.label.edge.dimensions() != edge_dims {
            return Err(Error::Input("edge labels differ in size within a batch".into()));
        }
        masks.extend(s.label.mask.to_f64());
        edges.extend(s.label.edge.to_f64());
    }
    let labels = BatchLabels::new(
        Tensor::new(&[n, 1, h, w], masks),
        Tensor::new(&[n, 1, edge_dims.1 as usize, edge_dims.0 as usize], edges),
    )?;
    Ok((images, labels))
}
