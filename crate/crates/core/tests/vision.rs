//! Augmentation layers: label geometry, determinism and ranges.

mod support;

use proptest::prelude::*;
use strata_core::vision::{
    crop, flip_horizontal, normalize, denormalize, random_brightness, random_crop, random_cutout, random_flip_horizontal,
    random_rotation_90, resize_bilinear, rotate_90, BoundingBox, ImageSample, LabelSet,
};
use strata_core::{DType, Rng, Tensor};
use support::labels::{boxed_sample, crop_worst, flip_worst, resize_worst, rotation_worst};

#[test]
fn flip_keeps_boxes_and_masks_aligned() {
    let worst = flip_worst();
    assert!(worst >= 0.95, "{worst}");
}

#[test]
fn crop_keeps_boxes_and_masks_aligned() {
    let worst = crop_worst();
    assert!(worst >= 0.95, "{worst}");
}

#[test]
fn resize_keeps_boxes_and_masks_aligned() {
    let worst = resize_worst();
    assert!(worst >= 0.95, "{worst}");
}

#[test]
fn rotation_keeps_boxes_and_masks_aligned() {
    let worst = rotation_worst();
    assert!(worst >= 0.95, "{worst}");
}

#[test]
fn crop_examples() {
    let s = |b| ImageSample::new(Tensor::zeros(&[10, 10, 1], DType::F32), LabelSet { boxes: Some(vec![b]), ..Default::default() }).unwrap();
    let gone = crop(&s(BoundingBox::new(0.0, 0.0, 2.0, 2.0)), 3, 3, 4, 4).unwrap();
    assert_eq!(gone.labels.boxes, Some(vec![]));
    let kept = crop(&s(BoundingBox::new(2.0, 2.0, 6.0, 6.0)), 3, 3, 4, 4).unwrap();
    assert_eq!(kept.labels.boxes, Some(vec![BoundingBox::new(0.0, 0.0, 3.0, 3.0)]));
    let full = random_crop(&s(BoundingBox::new(2.0, 2.0, 6.0, 6.0)), 10, 10, &mut Rng::new(1)).unwrap();
    assert_eq!(full, s(BoundingBox::new(2.0, 2.0, 6.0, 6.0)));
    assert!(crop(&s(BoundingBox::new(2.0, 2.0, 6.0, 6.0)), 0, 0, 11, 4).is_err());
}

#[test]
fn resize_examples() {
    let mut rng = Rng::new(8);
    let v: Vec<f32> = (0..8 * 8).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    let s = ImageSample::unlabeled(Tensor::from_vec(&[8, 8, 1], v.clone()).unwrap()).unwrap();
    assert_eq!(resize_bilinear(&s, 8, 8).unwrap().image.to_f64_vec(), s.image.to_f64_vec());

    // Half-pixel-centre bilinear at float64.
    let out = resize_bilinear(&s, 5, 5).unwrap().image.to_f64_vec();
    let coord = |o: usize, n_out: usize, n_in: usize| {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), src - lo as f64)
    };
    for r in 0..5 {
        let (y0, y1, fy) = coord(r, 5, 8);
        for c in 0..5 {
            let (x0, x1, fx) = coord(c, 5, 8);
            let at = |y: usize, x: usize| v[y * 8 + x] as f64;
            let want = (at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx) * (1.0 - fy) + (at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx) * fy;
            assert!((out[r * 5 + c] - want).abs() < 1e-5);
        }
    }

    let ramp = ImageSample::unlabeled(Tensor::from_vec(&[2, 2, 1], vec![0u8, 100, 0, 100]).unwrap()).unwrap();
    let up = resize_bilinear(&ramp, 3, 7).unwrap().image.to_f64_vec();
    for row in up.chunks(7) {
        assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
    }
}

#[test]
fn flip_and_rotation_examples() {
    let mut rng = Rng::new(2);
    let s = boxed_sample(&mut rng);
    assert_eq!(flip_horizontal(&flip_horizontal(&s).unwrap()).unwrap(), s);
    assert_eq!(rotate_90(&s, 4).unwrap(), s);
    let f = flip_horizontal(&ImageSample::new(
        Tensor::zeros(&[6, 10, 1], DType::U8),
        LabelSet { boxes: Some(vec![BoundingBox::new(2.0, 1.0, 5.0, 4.0)]), ..Default::default() },
    ).unwrap())
    .unwrap();
    assert_eq!(f.labels.boxes, Some(vec![BoundingBox::new(5.0, 1.0, 8.0, 4.0)]));
}

#[test]
fn normalize_round_trip() {
    let mut rng = Rng::new(4);
    let v: Vec<f32> = (0..4 * 4 * 3).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    let s = ImageSample::unlabeled(Tensor::from_vec(&[4, 4, 3], v.clone()).unwrap()).unwrap();
    let (mean, std) = ([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]);
    let back = denormalize(&normalize(&s, &mean, &std).unwrap(), &mean, &std).unwrap();
    for (a, b) in back.image.to_f64_vec().iter().zip(&v) {
        assert!((a - *b as f64).abs() < 1e-6);
    }
    assert_eq!(normalize(&s, &[0.0; 3], &[1.0; 3]).unwrap(), s);
    let constant = ImageSample::unlabeled(Tensor::full(&[2, 2, 3], DType::F32, 0.5)).unwrap();
    assert!(normalize(&constant, &[0.5; 3], &std).unwrap().image.to_f64_vec().iter().all(|&x| x == 0.0));
    assert!(normalize(&constant, &[0.5; 3], &[1.0, 0.0, 1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn random_layers_are_seeded_and_p0_is_identity(seed in any::<u64>()) {
        let s = boxed_sample(&mut Rng::new(seed));
        let layers: Vec<Box<dyn Fn(&ImageSample, f64, &mut Rng) -> ImageSample>> = vec![
            Box::new(|s, p, r| random_flip_horizontal(s, p, r).unwrap()),
            Box::new(|s, p, r| random_rotation_90(s, p, r).unwrap()),
            Box::new(|s, p, r| random_brightness(s, p, 0.3, r).unwrap()),
            Box::new(|s, p, r| random_cutout(s, p, 9, 7, r).unwrap()),
        ];
        for layer in &layers {
            prop_assert_eq!(&layer(&s, 0.0, &mut Rng::new(seed)), &s);
            prop_assert_eq!(layer(&s, 0.7, &mut Rng::new(seed)), layer(&s, 0.7, &mut Rng::new(seed)));
        }
    }

    #[test]
    fn brightness_stays_in_range(seed in any::<u64>(), delta in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let f: Vec<f32> = (0..48).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
        let s = ImageSample::unlabeled(Tensor::from_vec(&[4, 4, 3], f).unwrap()).unwrap();
        let out = random_brightness(&s, 1.0, delta, &mut rng).unwrap();
        prop_assert!(out.image.to_f64_vec().iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(out.validate().is_ok());
        let u = boxed_sample(&mut rng);
        prop_assert!(random_brightness(&u, 1.0, delta, &mut rng).unwrap().validate().is_ok());
    }
}
