//! Box-versus-mask agreement after augmentation.

use strata_core::vision::{random_crop, random_flip_horizontal, random_rotation_90, resize_bilinear, BoundingBox, ImageSample, LabelSet};
use strata_core::{Rng, Tensor};

pub const SIZE: usize = 64;

/// Mask of the pixels whose centres fall inside the box.
pub fn rasterize(b: &BoundingBox, h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
            out[r * w + c] = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
        }
    }
    out
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// A 64x64 image with one box of side at least 8 and the matching mask.
pub fn boxed_sample(rng: &mut Rng) -> ImageSample {
    let side = |rng: &mut Rng| {
        let lo = rng.below((SIZE - 8) as u64) as usize;
        let hi = lo + 8 + rng.below((SIZE - lo - 8) as u64 + 1) as usize;
        (lo as f32, hi as f32)
    };
    let (x0, x1) = side(rng);
    let (y0, y1) = side(rng);
    let b = BoundingBox::new(x0, y0, x1, y1);
    let mask: Vec<i32> = rasterize(&b, SIZE, SIZE).into_iter().map(i32::from).collect();
    let pixels: Vec<u8> = (0..SIZE * SIZE * 3).map(|_| rng.below(256) as u8).collect();
    let labels = LabelSet {
        class_id: Some(1),
        boxes: Some(vec![b]),
        mask: Some(Tensor::from_vec(&[SIZE, SIZE], mask).unwrap()),
    };
    ImageSample::new(Tensor::from_vec(&[SIZE, SIZE, 3], pixels).unwrap(), labels).unwrap()
}

/// IoU between the rasterised output box (empty if dropped) and the output mask.
pub fn agreement(s: &ImageSample) -> f64 {
    let (h, w) = (s.height(), s.width());
    let mask: Vec<bool> = s.labels.mask.as_ref().unwrap().data::<i32>().unwrap().iter().map(|&v| v == 1).collect();
    let boxes = s.labels.boxes.as_ref().unwrap();
    let drawn = boxes.first().map(|b| rasterize(b, h, w)).unwrap_or_else(|| vec![false; h * w]);
    iou(&drawn, &mask)
}

pub fn worst_iou(layer: impl Fn(&ImageSample, &mut Rng) -> ImageSample) -> f64 {
    let mut rng = Rng::new(64);
    (0..100).map(|_| agreement(&layer(&boxed_sample(&mut rng), &mut rng))).fold(1.0, f64::min)
}

pub fn flip_worst() -> f64 {
    worst_iou(|s, rng| random_flip_horizontal(s, 1.0, rng).unwrap())
}

pub fn crop_worst() -> f64 {
    worst_iou(|s, rng| {
        let (h, w) = (16 + rng.below(49) as usize, 16 + rng.below(49) as usize);
        random_crop(s, h, w, rng).unwrap()
    })
}

pub fn resize_worst() -> f64 {
    worst_iou(|s, rng| {
        let (h, w) = (32 + rng.below(65) as usize, 32 + rng.below(65) as usize);
        resize_bilinear(s, h, w).unwrap()
    })
}

pub fn rotation_worst() -> f64 {
    worst_iou(|s, rng| random_rotation_90(s, 1.0, rng).unwrap())
}
