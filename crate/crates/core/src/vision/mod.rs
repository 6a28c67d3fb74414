//! Label-aware image augmentation.
//!
//! Images are `[H, W, C]` tensors (C is 1 or 3) holding either `u8` in
//! 0..=255 or `f32` in [0, 1]. Geometric layers move boxes and masks along
//! with the pixels.

mod layers;
mod sample;

pub use layers::{
    compose, crop, cutout, denormalize, flip_horizontal, grayscale, normalize, random_brightness, random_crop,
    random_cutout, random_flip_horizontal, random_rotation_90, resize_bilinear, rotate_90, Compose, Cutout, Grayscale,
    Layer, Normalize, RandomBrightness, RandomCrop, RandomFlip, RandomRotation90, Resize,
};
pub use sample::{BoundingBox, ImageSample, LabelSet};
