use alloc::vec;
use alloc::vec::Vec;

use super::idx::{self, IdxArray};
use super::*;
use crate::groups::GridAction;

fn task(mode: LabelMode) -> TaskSpec {
    TaskSpec { base_classes: 4, label_mode: mode, transform: Transform::None, canvas: [12, 12], seed: 7, noise: 0.0 }
}

fn quadrant_of(img: &[f64], h: usize, w: usize) -> usize {
    let mut mass = [0.0; 4];
    for x in 0..h {
        for y in 0..w {
            mass[(x / (h / 2)) * 2 + y / (w / 2)] += img[x * w + y];
        }
    }
    (0..4).fold(0, |b, q| if mass[q] > mass[b] { q } else { b })
}

#[test]
fn class_only_labels_ignore_quadrant() {
    let d = gen_glyph_quadrant(&task(LabelMode::ClassOnly), 64).unwrap();
    assert_eq!(d.classes, 4);
    for i in 0..60 {
        assert_eq!(d.labels[i], d.labels[i + 4]);
        assert_ne!(quadrant_of(d.image(i), 12, 12), quadrant_of(d.image(i + 4), 12, 12));
    }
}

#[test]
fn class_and_quadrant_has_sixteen_classes() {
    let d = gen_glyph_quadrant(&task(LabelMode::ClassAndQuadrant), 160).unwrap();
    assert_eq!(d.classes, 16);
    let mut counts = [0usize; 16];
    for (i, &y) in d.labels.iter().enumerate() {
        counts[y] += 1;
        assert_eq!(y / 4, quadrant_of(d.image(i), 12, 12));
    }
    assert!(counts.iter().all(|&c| c == 10));
}

#[test]
fn quadrants_are_uniform() {
    let d = gen_glyph_quadrant(&task(LabelMode::ClassOnly), 10_000).unwrap();
    let mut counts = [0f64; 4];
    for i in 0..d.len() {
        counts[quadrant_of(d.image(i), 12, 12)] += 1.0;
    }
    let sigma = math::sqrt(10_000.0 * 0.25 * 0.75);
    assert!(counts.iter().all(|&c| (c - 2500.0).abs() <= 3.0 * sigma));
}

#[test]
fn classes_balanced_within_one() {
    let mut t = task(LabelMode::ClassOnly);
    t.base_classes = 3;
    let d = gen_glyph_quadrant(&t, 101).unwrap();
    let mut counts = [0usize; 3];
    d.labels.iter().for_each(|&y| counts[y] += 1);
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
}

#[test]
fn generation_is_deterministic() {
    let mut t = task(LabelMode::ClassAndQuadrant);
    t.noise = 0.2;
    t.transform = Transform::RandomRotateUniform;
    assert_eq!(gen_glyph_quadrant(&t, 50).unwrap(), gen_glyph_quadrant(&t, 50).unwrap());
    let mut u = t.clone();
    u.seed += 1;
    assert_ne!(gen_glyph_quadrant(&t, 50).unwrap(), gen_glyph_quadrant(&u, 50).unwrap());
}

#[test]
fn glyph_too_large_is_rejected() {
    let mut t = task(LabelMode::ClassOnly);
    t.canvas = [8, 8];
    assert!(gen_glyph_quadrant(&t, 4).is_err());
}

#[test]
fn glyphs_are_distinct_and_asymmetric() {
    let gs: Vec<Vec<f64>> = (0..12).map(glyph).collect();
    for i in 0..gs.len() {
        for j in 0..i {
            assert_ne!(gs[i], gs[j]);
        }
    }
    let shape = [1, GLYPH_SIZE, GLYPH_SIZE];
    for g in &gs[..8] {
        for k in 1..4 {
            assert_ne!(&rotate90(g, shape, k), g);
        }
    }
}

#[test]
fn zero_translation_is_identity_and_mass_preserved() {
    let mut t = task(LabelMode::ClassOnly);
    t.noise = 0.3;
    let d = gen_glyph_quadrant(&t, 20).unwrap();
    let shape = d.image_shape();
    assert_eq!(translate(d.image(0), shape, 0, 0), d.image(0));
    let moved = apply_transform(&d, Transform::RandomTranslate { max_px: 3 }, 1).unwrap();
    for i in 0..d.len() {
        let a: f64 = d.image(i).iter().sum();
        let b: f64 = moved.image(i).iter().sum();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn quarter_turns_follow_the_group_law() {
    let d = gen_glyph_quadrant(&task(LabelMode::ClassOnly), 1).unwrap();
    let img = d.image(0);
    let shape = d.image_shape();
    assert_eq!(rotate90(img, shape, 4), img);
    for a in 0..4 {
        for b in 0..4 {
            assert_eq!(rotate90(&rotate90(img, shape, a), shape, b), rotate90(img, shape, a + b));
        }
    }
    let act = GridAction::p4(12, 12).unwrap();
    let g = act.p4_element(1, 0, 0);
    let r = rotate90(img, shape, 1);
    for p in 0..144 {
        assert_eq!(r[act.apply_point(g, p)], img[p]);
    }
}

#[test]
fn bilinear_rotation_agrees_at_right_angles() {
    let mut t = task(LabelMode::ClassOnly);
    t.noise = 0.5;
    let d = gen_glyph_quadrant(&t, 1).unwrap();
    let (img, shape) = (d.image(0), d.image_shape());
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
    assert!(close(&rotate_bilinear(img, shape, 0.0), img));
    for k in 1..4 {
        let angle = k as f64 * core::f64::consts::FRAC_PI_2;
        assert!(close(&rotate_bilinear(img, shape, angle), &rotate90(img, shape, k)));
    }
}

#[test]
fn standardised_pixels_have_unit_moments() {
    let mut t = task(LabelMode::ClassOnly);
    t.noise = 0.1;
    let mut d = gen_glyph_quadrant(&t, 40).unwrap();
    standardise(&mut d);
    let (m, s) = pixel_stats(&d);
    assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
}

#[test]
fn idx_round_trip_and_errors() {
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
    let images = idx::encode(&IdxArray { dims: vec![3, 4, 5], data: pixels.clone() });
    let labels = idx::encode(&IdxArray { dims: vec![3], data: vec![2, 0, 1] });
    assert_eq!(&images[..4], &[0, 0, 8, 3]);
    assert_eq!(&labels[..4], &[0, 0, 8, 1]);
    let d = idx::dataset_from_bytes(&images, &labels).unwrap();
    assert_eq!(d.images.shape(), &[3, 1, 4, 5]);
    assert_eq!(d.labels, vec![2, 0, 1]);
    assert!(d.images.data().iter().zip(&pixels).all(|(&a, &b)| a == b as f64));

    let err = idx::dataset_from_bytes(&images[..images.len() - 1], &labels).unwrap_err();
    let msg = alloc::format!("{err}");
    assert!(msg.contains(&alloc::format!("{}", images.len())) && msg.contains(&alloc::format!("{}", images.len() - 1)));
    assert!(idx::dataset_from_bytes(&labels, &images).is_err());
    let short = idx::encode(&IdxArray { dims: vec![2], data: vec![0, 1] });
    assert!(idx::dataset_from_bytes(&images, &short).is_err());
}
