use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use super::sample::{BoundingBox, ImageSample, LabelSet};
use crate::{DType, Element, Error, Result, Rng, Tensor};

fn pixels<T: Element>(data: &[T], c: usize, oh: usize, ow: usize, src: &dyn Fn(usize, usize) -> usize) -> Vec<T> {
    let mut out = Vec::with_capacity(oh * ow * c);
    for r in 0..oh {
        for col in 0..ow {
            let s = src(r, col) * c;
            out.extend_from_slice(&data[s..s + c]);
        }
    }
    out
}

/// Builds an `oh x ow` image (or mask) whose pixel `(r, c)` is source pixel
/// `src(r, c)` in row-major order. Works for every dtype.
fn remap(t: &Tensor, oh: usize, ow: usize, src: &dyn Fn(usize, usize) -> usize) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    let c = if shape.len() == 3 { shape[2] } else { 1 };
    shape[0] = oh;
    shape[1] = ow;
    match t.dtype() {
        DType::U8 => Tensor::from_vec(&shape, pixels(t.data::<u8>()?, c, oh, ow, src)),
        DType::F32 => Tensor::from_vec(&shape, pixels(t.data::<f32>()?, c, oh, ow, src)),
        DType::F64 => Tensor::from_vec(&shape, pixels(t.data::<f64>()?, c, oh, ow, src)),
        DType::I32 => Tensor::from_vec(&shape, pixels(t.data::<i32>()?, c, oh, ow, src)),
    }
}

/// Stores computed pixel values: `u8` rounds half-up and saturates.
fn store(shape: &[usize], dtype: DType, values: Vec<f64>) -> Result<Tensor> {
    match dtype {
        DType::U8 => Tensor::from_vec(shape, values.into_iter().map(|v| libm::floor(v + 0.5).clamp(0.0, 255.0) as u8).collect()),
        DType::F32 => Tensor::from_vec(shape, values.into_iter().map(|v| v as f32).collect()),
        d => Err(Error::Dtype(format!("images are u8 or f32, got {}", d))),
    }
}

fn remap_sample(s: &ImageSample, oh: usize, ow: usize, src: &dyn Fn(usize, usize) -> usize, boxes: Option<Vec<BoundingBox>>) -> Result<ImageSample> {
    let image = remap(&s.image, oh, ow, src)?;
    let mask = s.labels.mask.as_ref().map(|m| remap(m, oh, ow, src)).transpose()?;
    Ok(ImageSample::from_parts(image, LabelSet { class_id: s.labels.class_id, boxes, mask }))
}

/// BT.601 luma. `u8` values round half-up.
pub fn grayscale(s: &ImageSample) -> Result<ImageSample> {
    if s.channels() != 3 {
        return Err(Error::Channel(s.channels()));
    }
    let v = s.image.to_f64_vec();
    let luma: Vec<f64> = v.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
    let luma = if s.image.dtype() == DType::F32 { luma.into_iter().map(|y| y.clamp(0.0, 1.0)).collect() } else { luma };
    let image = store(&[s.height(), s.width(), 1], s.image.dtype(), luma)?;
    Ok(ImageSample::from_parts(image, s.labels.clone()))
}

pub fn flip_horizontal(s: &ImageSample) -> Result<ImageSample> {
    let (h, w) = (s.height(), s.width());
    let wf = w as f32;
    let boxes = s.labels.boxes.as_ref().map(|bs| {
        bs.iter().map(|b| BoundingBox::new(wf - b.x_max, b.y_min, wf - b.x_min, b.y_max)).collect()
    });
    remap_sample(s, h, w, &|r, c| r * w + (w - 1 - c), boxes)
}

pub fn random_flip_horizontal(s: &ImageSample, p: f64, rng: &mut Rng) -> Result<ImageSample> {
    if rng.chance(p) {
        flip_horizontal(s)
    } else {
        Ok(s.clone())
    }
}

/// Crops the `h x w` window at row `oy`, column `ox`. Boxes are translated,
/// clipped to the window, and dropped if nothing remains.
pub fn crop(s: &ImageSample, oy: usize, ox: usize, h: usize, w: usize) -> Result<ImageSample> {
    if h == 0 || w == 0 || oy + h > s.height() || ox + w > s.width() {
        return Err(Error::Shape(format!(
            "crop {}x{} at ({}, {}) does not fit a {}x{} image",
            h,
            w,
            oy,
            ox,
            s.height(),
            s.width()
        )));
    }
    let sw = s.width();
    let (fx, fy, fw, fh) = (ox as f32, oy as f32, w as f32, h as f32);
    let boxes = s.labels.boxes.as_ref().map(|bs| {
        bs.iter()
            .map(|b| {
                BoundingBox::new(
                    (b.x_min - fx).clamp(0.0, fw),
                    (b.y_min - fy).clamp(0.0, fh),
                    (b.x_max - fx).clamp(0.0, fw),
                    (b.y_max - fy).clamp(0.0, fh),
                )
            })
            .filter(|b| b.x_max > b.x_min && b.y_max > b.y_min)
            .collect()
    });
    remap_sample(s, h, w, &|r, c| (r + oy) * sw + c + ox, boxes)
}

/// Crop at a uniformly drawn offset.
pub fn random_crop(s: &ImageSample, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<ImageSample> {
    if out_h > s.height() || out_w > s.width() {
        return Err(Error::Shape(format!("crop {}x{} is larger than the {}x{} image", out_h, out_w, s.height(), s.width())));
    }
    let oy = rng.below((s.height() - out_h + 1) as u64) as usize;
    let ox = rng.below((s.width() - out_w + 1) as u64) as usize;
    crop(s, oy, ox, out_h, out_w)
}

/// Source coordinate and weights for half-pixel-centre sampling.
fn sample_axis(dst: usize, out: usize, inp: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
    let lo = libm::floor(src) as usize;
    let hi = (lo + 1).min(inp - 1);
    (lo, hi, src - lo as f64)
}

fn nearest(dst: usize, out: usize, inp: usize) -> usize {
    (((dst as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1)
}

/// Bilinear resampling with half-pixel centres; masks use nearest neighbour.
pub fn resize_bilinear(s: &ImageSample, out_h: usize, out_w: usize) -> Result<ImageSample> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!("cannot resize to {}x{}", out_h, out_w)));
    }
    let (h, w, c) = (s.height(), s.width(), s.channels());
    let v = s.image.to_f64_vec();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for r in 0..out_h {
        let (y0, y1, fy) = sample_axis(r, out_h, h);
        for col in 0..out_w {
            let (x0, x1, fx) = sample_axis(col, out_w, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| v[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    let image = store(&[out_h, out_w, c], s.image.dtype(), out)?;
    let (sx, sy) = (out_w as f32 / w as f32, out_h as f32 / h as f32);
    let (ow, oh) = (out_w as f32, out_h as f32);
    let boxes = s.labels.boxes.as_ref().map(|bs| {
        bs.iter()
            .map(|b| BoundingBox::new(b.x_min * sx, b.y_min * sy, (b.x_max * sx).min(ow), (b.y_max * sy).min(oh)))
            .collect()
    });
    let mask = s
        .labels
        .mask
        .as_ref()
        .map(|m| remap(m, out_h, out_w, &|r, col| nearest(r, out_h, h) * w + nearest(col, out_w, w)))
        .transpose()?;
    Ok(ImageSample::from_parts(image, LabelSet { class_id: s.labels.class_id, boxes, mask }))
}

fn check_stats(s: &ImageSample, mean: &[f32], std: &[f32]) -> Result<()> {
    if s.image.dtype() != DType::F32 {
        return Err(Error::Dtype(format!("normalize needs an f32 image, got {}", s.image.dtype())));
    }
    if mean.len() != s.channels() || std.len() != s.channels() {
        return Err(Error::Shape(format!("{} channels but {} means and {} stds", s.channels(), mean.len(), std.len())));
    }
    if std.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Value("every std must be positive".into()));
    }
    Ok(())
}

fn per_channel(s: &ImageSample, f: impl Fn(f32, usize) -> f32) -> Result<ImageSample> {
    let c = s.channels();
    let data: Vec<f32> = s.image.data::<f32>()?.iter().enumerate().map(|(i, &x)| f(x, i % c)).collect();
    Ok(ImageSample::from_parts(Tensor::from_vec(s.image.shape(), data)?, s.labels.clone()))
}

/// `(x - mean) / std` per channel. The result leaves the [0, 1] range, so it
/// is not re-validated.
pub fn normalize(s: &ImageSample, mean: &[f32], std: &[f32]) -> Result<ImageSample> {
    check_stats(s, mean, std)?;
    per_channel(s, |x, ch| (x - mean[ch]) / std[ch])
}

pub fn denormalize(s: &ImageSample, mean: &[f32], std: &[f32]) -> Result<ImageSample> {
    check_stats(s, mean, std)?;
    per_channel(s, |x, ch| x * std[ch] + mean[ch])
}

/// Adds a delta drawn from `[-max_delta, max_delta]` (in [0, 1] units) with
/// probability `p`, clamping to the dtype range.
pub fn random_brightness(s: &ImageSample, p: f64, max_delta: f64, rng: &mut Rng) -> Result<ImageSample> {
    if !rng.chance(p) {
        return Ok(s.clone());
    }
    let delta = rng.uniform(-max_delta, max_delta);
    let (scale, hi) = if s.image.dtype() == DType::U8 { (255.0, 255.0) } else { (1.0, 1.0) };
    let v: Vec<f64> = s.image.to_f64_vec().into_iter().map(|x| (x + delta * scale).clamp(0.0, hi)).collect();
    let image = store(s.image.shape(), s.image.dtype(), v)?;
    Ok(ImageSample::from_parts(image, s.labels.clone()))
}

/// Rotates clockwise by `k` quarter turns.
pub fn rotate_90(s: &ImageSample, k: usize) -> Result<ImageSample> {
    let mut out = s.clone();
    for _ in 0..k % 4 {
        let (h, w) = (out.height(), out.width());
        let hf = h as f32;
        let boxes = out.labels.boxes.as_ref().map(|bs| {
            bs.iter().map(|b| BoundingBox::new(hf - b.y_max, b.x_min, hf - b.y_min, b.x_max)).collect()
        });
        out = remap_sample(&out, w, h, &|r, c| (h - 1 - c) * w + r, boxes)?;
    }
    Ok(out)
}

/// With probability `p`, rotates by 1, 2 or 3 quarter turns.
pub fn random_rotation_90(s: &ImageSample, p: f64, rng: &mut Rng) -> Result<ImageSample> {
    if !rng.chance(p) {
        return Ok(s.clone());
    }
    rotate_90(s, 1 + rng.below(3) as usize)
}

/// Zeroes the image inside the `h x w` rectangle at `(y, x)`, clipped to the
/// image. Labels are kept.
pub fn cutout(s: &ImageSample, y: usize, x: usize, h: usize, w: usize) -> Result<ImageSample> {
    let (ih, iw, c) = (s.height(), s.width(), s.channels());
    let inside = |i: usize| {
        let (r, col) = (i / c / iw, i / c % iw);
        r >= y && r < y.saturating_add(h).min(ih) && col >= x && col < x.saturating_add(w).min(iw)
    };
    let v: Vec<f64> = s.image.to_f64_vec().into_iter().enumerate().map(|(i, p)| if inside(i) { 0.0 } else { p }).collect();
    let image = store(s.image.shape(), s.image.dtype(), v)?;
    Ok(ImageSample::from_parts(image, s.labels.clone()))
}

/// With probability `p`, cuts out an `h x w` patch centred on a uniform pixel.
pub fn random_cutout(s: &ImageSample, p: f64, h: usize, w: usize, rng: &mut Rng) -> Result<ImageSample> {
    if !rng.chance(p) {
        return Ok(s.clone());
    }
    let cy = rng.below(s.height() as u64) as usize;
    let cx = rng.below(s.width() as u64) as usize;
    let (y, hh) = (cy.saturating_sub(h / 2), h - (h / 2).saturating_sub(cy).min(h));
    let (x, ww) = (cx.saturating_sub(w / 2), w - (w / 2).saturating_sub(cx).min(w));
    cutout(s, y, x, hh, ww)
}

/// An augmentation step. Deterministic layers ignore the generator.
pub trait Layer: Send + Sync {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample>;
}

impl<F> Layer for F
where
    F: Fn(&ImageSample, &mut Rng) -> Result<ImageSample> + Send + Sync,
{
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        self(s, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Grayscale;

impl Layer for Grayscale {
    fn apply(&self, s: &ImageSample, _: &mut Rng) -> Result<ImageSample> {
        grayscale(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomFlip {
    pub p: f64,
}

impl Layer for RandomFlip {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        random_flip_horizontal(s, self.p, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomCrop {
    pub height: usize,
    pub width: usize,
}

impl Layer for RandomCrop {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        random_crop(s, self.height, self.width, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Resize {
    pub height: usize,
    pub width: usize,
}

impl Layer for Resize {
    fn apply(&self, s: &ImageSample, _: &mut Rng) -> Result<ImageSample> {
        resize_bilinear(s, self.height, self.width)
    }
}

#[derive(Debug, Clone)]
pub struct Normalize {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Layer for Normalize {
    fn apply(&self, s: &ImageSample, _: &mut Rng) -> Result<ImageSample> {
        normalize(s, &self.mean, &self.std)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomBrightness {
    pub p: f64,
    pub max_delta: f64,
}

impl Layer for RandomBrightness {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        random_brightness(s, self.p, self.max_delta, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomRotation90 {
    pub p: f64,
}

impl Layer for RandomRotation90 {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        random_rotation_90(s, self.p, rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Cutout {
    pub p: f64,
    pub height: usize,
    pub width: usize,
}

impl Layer for Cutout {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        random_cutout(s, self.p, self.height, self.width, rng)
    }
}

/// Applies layers in order, threading one generator through them.
pub struct Compose {
    layers: Vec<Box<dyn Layer>>,
}

impl Compose {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Compose {
    fn apply(&self, s: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        let mut out = s.clone();
        for layer in &self.layers {
            out = layer.apply(&out, rng)?;
        }
        Ok(out)
    }
}

pub fn compose(layers: Vec<Box<dyn Layer>>) -> Compose {
    Compose { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rgb(h: usize, w: usize, data: Vec<u8>) -> ImageSample {
        ImageSample::unlabeled(Tensor::from_vec(&[h, w, 3], data).unwrap()).unwrap()
    }

    fn boxed(w: usize, h: usize, b: BoundingBox) -> ImageSample {
        let labels = LabelSet { class_id: Some(1), boxes: Some(vec![b]), mask: None };
        ImageSample::new(Tensor::zeros(&[h, w, 1], DType::F32), labels).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        let g = grayscale(&rgb(1, 2, vec![255, 0, 0, 77, 77, 77])).unwrap();
        assert_eq!(g.image.data::<u8>().unwrap(), &[76, 77]);
        let gray = ImageSample::unlabeled(Tensor::zeros(&[2, 2, 1], DType::U8)).unwrap();
        assert_eq!(grayscale(&gray), Err(Error::Channel(1)));
    }

    #[test]
    fn flip_box() {
        let s = boxed(10, 6, BoundingBox::new(2.0, 1.0, 5.0, 4.0));
        let f = flip_horizontal(&s).unwrap();
        assert_eq!(f.labels.boxes.unwrap()[0], BoundingBox::new(5.0, 1.0, 8.0, 4.0));
    }

    #[test]
    fn crop_boxes() {
        let labels = LabelSet {
            class_id: None,
            boxes: Some(vec![BoundingBox::new(0.0, 0.0, 2.0, 2.0), BoundingBox::new(2.0, 2.0, 6.0, 6.0)]),
            mask: None,
        };
        let s = ImageSample::new(Tensor::zeros(&[10, 10, 3], DType::U8), labels).unwrap();
        let c = crop(&s, 3, 3, 4, 4).unwrap();
        assert_eq!(c.labels.boxes.unwrap(), vec![BoundingBox::new(0.0, 0.0, 3.0, 3.0)]);
        assert!(matches!(random_crop(&s, 11, 4, &mut Rng::new(0)), Err(Error::Shape(_))));
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let data: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        let mut s = rgb(2, 3, data);
        s.labels.boxes = Some(vec![BoundingBox::new(0.5, 0.0, 2.0, 1.5)]);
        let r = rotate_90(&s, 1).unwrap();
        assert_eq!(r.image.shape(), &[3, 2, 3]);
        assert_eq!(r.labels.boxes.as_ref().unwrap()[0], BoundingBox::new(0.5, 0.5, 2.0, 2.0));
        // Top-left pixel of the rotation is the old bottom-left.
        assert_eq!(&r.image.data::<u8>().unwrap()[..3], &[9, 10, 11]);
        assert_eq!(rotate_90(&s, 4).unwrap(), s);
        assert_eq!(rotate_90(&r, 3).unwrap(), s);
    }

    #[test]
    fn normalize_errors() {
        let s = rgb(1, 1, vec![1, 2, 3]);
        assert!(matches!(normalize(&s, &[0.0; 3], &[1.0; 3]), Err(Error::Dtype(_))));
        let f = ImageSample::unlabeled(Tensor::zeros(&[1, 1, 3], DType::F32)).unwrap();
        assert!(matches!(normalize(&f, &[0.0; 3], &[1.0, 0.0, 1.0]), Err(Error::Value(_))));
    }

    #[test]
    fn cutout_zeroes_patch() {
        let s = ImageSample::unlabeled(Tensor::full(&[4, 4, 1], DType::U8, 9.0)).unwrap();
        let c = cutout(&s, 1, 1, 2, 5).unwrap();
        let zeros = c.image.data::<u8>().unwrap().iter().filter(|&&v| v == 0).count();
        assert_eq!(zeros, 6);
    }
}
