//! Synthetic symmetry-probing datasets, per-example transforms,
//! standardisation and IDX decoding.

mod glyphs;
pub mod idx;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub use glyphs::{glyph, GLYPH_SIZE};

/// Labelled images, `N x C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "dataset",
                shape: images.shape().to_vec(),
                reason: alloc::format!("expected N x C x H x W images for {} labels", labels.len()),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::IndexOutOfRange { what: "label", index: y, len: classes });
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `C x H x W`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn per(&self) -> usize {
        let [c, h, w] = self.image_shape();
        c * h * w
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.per();
        &self.images.data()[i * per..(i + 1) * per]
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * self.per());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let x = Tensor::new(alloc::vec![indices.len(), c, h, w], data).expect("consistent batch");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// How labels are formed from glyph and quadrant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LabelMode {
    ClassOnly,
    ClassAndQuadrant,
}

/// Per-example transform.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Transform {
    None,
    /// Circular shift by up to `max_px` pixels along each axis.
    RandomTranslate {
        max_px: usize,
    },
    /// Rotation by a uniformly drawn multiple of 90 degrees.
    RandomRotate90s,
    /// Rotation by a uniform angle with bilinear resampling.
    RandomRotateUniform,
}

/// Glyph-in-quadrant task.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TaskSpec {
    pub base_classes: usize,
    pub label_mode: LabelMode,
    pub transform: Transform,
    pub canvas: [usize; 2],
    pub seed: u64,
    /// Standard deviation of additive Gaussian pixel noise.
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise: f64,
}

impl TaskSpec {
    pub fn classes(&self) -> usize {
        match self.label_mode {
            LabelMode::ClassOnly => self.base_classes,
            LabelMode::ClassAndQuadrant => 4 * self.base_classes,
        }
    }
}

fn example_rng(seed: u64, stream: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 40).wrapping_add(index as u64));
    rng
}

/// Generate `n` examples. Example `i` shows glyph `i mod G` in quadrant
/// `(i / G) mod 4` (quadrants row-major), so glyphs and quadrants are
/// balanced; the position inside the quadrant and the noise are drawn from
/// a per-example stream.
pub fn gen_glyph_quadrant(task: &TaskSpec, n: usize) -> Result<Dataset> {
    let [h, w] = task.canvas;
    let g = task.base_classes;
    if g == 0 {
        return Err(Error::InvalidArgument("at least one glyph class is required".into()));
    }
    let (qh, qw) = (h / 2, w / 2);
    if GLYPH_SIZE > qh || GLYPH_SIZE > qw {
        return Err(Error::InvalidArgument(alloc::format!(
            "glyph of size {GLYPH_SIZE} does not fit a {qh}x{qw} quadrant"
        )));
    }
    if !(task.noise >= 0.0 && task.noise.is_finite()) {
        return Err(Error::InvalidArgument("noise must be finite and non-negative".into()));
    }
    let glyphs: Vec<Vec<f64>> = (0..g).map(glyph).collect();
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % g;
        let quadrant = (i / g) % 4;
        let mut rng = example_rng(task.seed, 0, i);
        let ox = (quadrant / 2) * qh + rng.random_range(0..=qh - GLYPH_SIZE);
        let oy = (quadrant % 2) * qw + rng.random_range(0..=qw - GLYPH_SIZE);
        let mut img = alloc::vec![0.0; h * w];
        for a in 0..GLYPH_SIZE {
            for b in 0..GLYPH_SIZE {
                img[(ox + a) * w + oy + b] = glyphs[class][a * GLYPH_SIZE + b];
            }
        }
        if task.noise > 0.0 {
            for v in img.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += task.noise * z;
            }
        }
        data.extend(img);
        labels.push(match task.label_mode {
            LabelMode::ClassOnly => class,
            LabelMode::ClassAndQuadrant => quadrant * g + class,
        });
    }
    let data = Dataset::new(Tensor::new(alloc::vec![n, 1, h, w], data)?, labels, task.classes())?;
    apply_transform(&data, task.transform, task.seed)
}

/// Rotate a `C x H x W` image by `k` quarter turns: pixel `(x, y)` moves to
/// `(y, W - 1 - x)` per turn, matching the grid action of the rotation group.
pub fn rotate90(img: &[f64], shape: [usize; 3], k: usize) -> Vec<f64> {
    let [c, h, w] = shape;
    let mut cur = img.to_vec();
    for _ in 0..k % 4 {
        let mut next = alloc::vec![0.0; cur.len()];
        for ch in 0..c {
            for x in 0..h {
                for y in 0..w {
                    next[(ch * h + y) * w + (w - 1 - x)] = cur[(ch * h + x) * w + y];
                }
            }
        }
        cur = next;
    }
    cur
}

/// Circular shift of a `C x H x W` image by `(dx, dy)`.
pub fn translate(img: &[f64], shape: [usize; 3], dx: isize, dy: isize) -> Vec<f64> {
    let [c, h, w] = shape;
    let mut out = alloc::vec![0.0; img.len()];
    for ch in 0..c {
        for x in 0..h {
            for y in 0..w {
                let tx = (x as isize + dx).rem_euclid(h as isize) as usize;
                let ty = (y as isize + dy).rem_euclid(w as isize) as usize;
                out[(ch * h + tx) * w + ty] = img[(ch * h + x) * w + y];
            }
        }
    }
    out
}

/// Rotation by `angle` radians about the image centre with bilinear
/// interpolation; samples falling outside the canvas read zero.
pub fn rotate_bilinear(img: &[f64], shape: [usize; 3], angle: f64) -> Vec<f64> {
    let [c, h, w] = shape;
    let (cx, cy) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, co) = (math::sin(angle), math::cos(angle));
    let read = |ch: usize, x: isize, y: isize| {
        if x < 0 || y < 0 || x >= h as isize || y >= w as isize {
            0.0
        } else {
            img[(ch * h + x as usize) * w + y as usize]
        }
    };
    let mut out = alloc::vec![0.0; img.len()];
    for x in 0..h {
        for y in 0..w {
            // Inverse map of the output pixel into the source.
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let sx = co * u - s * v + cx;
            let sy = s * u + co * v + cy;
            let (fx, fy) = (math::floor(sx), math::floor(sy));
            let (ax, ay) = (sx - fx, sy - fy);
            let (ix, iy) = (fx as isize, fy as isize);
            for ch in 0..c {
                out[(ch * h + x) * w + y] = (1.0 - ax) * (1.0 - ay) * read(ch, ix, iy)
                    + ax * (1.0 - ay) * read(ch, ix + 1, iy)
                    + (1.0 - ax) * ay * read(ch, ix, iy + 1)
                    + ax * ay * read(ch, ix + 1, iy + 1);
            }
        }
    }
    out
}

/// Apply `transform` to every example with a per-example draw.
pub fn apply_transform(data: &Dataset, transform: Transform, seed: u64) -> Result<Dataset> {
    let shape = data.image_shape();
    if matches!(transform, Transform::RandomRotate90s) && shape[1] != shape[2] {
        return Err(Error::InvalidArgument("quarter-turn rotations need a square canvas".into()));
    }
    if transform == Transform::None {
        return Ok(data.clone());
    }
    let mut out = Vec::with_capacity(data.images.len());
    for i in 0..data.len() {
        let mut rng = example_rng(seed, 1, i);
        let img = data.image(i);
        out.extend(match transform {
            Transform::None => img.to_vec(),
            Transform::RandomTranslate { max_px } => {
                let m = max_px as i64;
                let dx = rng.random_range(-m..=m);
                let dy = rng.random_range(-m..=m);
                translate(img, shape, dx as isize, dy as isize)
            }
            Transform::RandomRotate90s => rotate90(img, shape, rng.random_range(0..4)),
            Transform::RandomRotateUniform => {
                rotate_bilinear(img, shape, rng.random_range(0.0..2.0 * core::f64::consts::PI))
            }
        });
    }
    Dataset::new(Tensor::new(data.images.shape().to_vec(), out)?, data.labels.clone(), data.classes)
}

/// Single mean and standard deviation over all pixels.
pub fn pixel_stats(data: &Dataset) -> (f64, f64) {
    let d = data.images.data();
    let n = d.len().max(1) as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// `(x - mean) / std`, leaving the data centred only if `std` is zero.
pub fn standardise_with(data: &mut Dataset, mean: f64, std: f64) {
    let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
    for v in data.images.data_mut() {
        *v = (*v - mean) * inv;
    }
}

/// Standardise with the dataset's own statistics and return them.
pub fn standardise(data: &mut Dataset) -> (f64, f64) {
    let (m, s) = pixel_stats(data);
    standardise_with(data, m, s);
    (m, s)
}

#[cfg(test)]
mod tests;
