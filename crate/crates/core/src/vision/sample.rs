use alloc::format;
use alloc::vec::Vec;

use crate::{DType, Error, Result, Tensor};

/// Absolute pixel corners; `x` runs along width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BoundingBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        BoundingBox { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> f32 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_valid(&self, width: usize, height: usize) -> bool {
        0.0 <= self.x_min
            && self.x_min < self.x_max
            && self.x_max <= width as f32
            && 0.0 <= self.y_min
            && self.y_min < self.y_max
            && self.y_max <= height as f32
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    pub class_id: Option<i64>,
    pub boxes: Option<Vec<BoundingBox>>,
    /// `[H, W]` int32 class ids.
    pub mask: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image: Tensor,
    pub labels: LabelSet,
}

impl ImageSample {
    /// Validates shape, dtype, value range and label geometry.
    pub fn new(image: Tensor, labels: LabelSet) -> Result<Self> {
        let s = ImageSample { image, labels };
        s.validate()?;
        Ok(s)
    }

    /// Assembles a sample without validation.
    pub fn from_parts(image: Tensor, labels: LabelSet) -> Self {
        ImageSample { image, labels }
    }

    pub fn unlabeled(image: Tensor) -> Result<Self> {
        Self::new(image, LabelSet::default())
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.image.shape();
        if shape.len() != 3 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::Shape(format!("image must be [H, W, C] with H, W >= 1, got {:?}", shape)));
        }
        if shape[2] != 1 && shape[2] != 3 {
            return Err(Error::Channel(shape[2]));
        }
        match self.image.dtype() {
            DType::U8 => {}
            DType::F32 => {
                if self.image.data::<f32>()?.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Value("float images must lie in [0, 1]".into()));
                }
            }
            d => return Err(Error::Dtype(format!("images are u8 or f32, got {}", d))),
        }
        let (h, w) = (shape[0], shape[1]);
        if let Some(boxes) = &self.labels.boxes {
            if let Some(b) = boxes.iter().find(|b| !b.is_valid(w, h)) {
                return Err(Error::Value(format!("box {:?} is not inside a {}x{} image", b, w, h)));
            }
        }
        if let Some(m) = &self.labels.mask {
            if m.shape() != [h, w] || m.dtype() != DType::I32 {
                return Err(Error::Shape(format!("mask must be [{}, {}] int32, got {}{:?}", h, w, m.dtype(), m.shape())));
            }
        }
        Ok(())
    }
}
