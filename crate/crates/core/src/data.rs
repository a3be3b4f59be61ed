//! Deterministic synthetic fine-grained dataset.
//!
//! Every scene shows one randomly posed ellipse over smooth value-noise
//! clutter. `n_parts` striped patches sit at jittered canonical positions on
//! the ellipse; part `k` always has the same hue, and the class decides only
//! the stripe orientation of each part. Each part shows two label bits, so a
//! single part narrows the class down and neighbouring parts pin it. Distractor
//! patches with the same hues and random orientations are scattered over the
//! background.
//!
//! All random draws happen in a fixed order that does not depend on the
//! label, so two renderings of one scene with different labels differ only
//! inside the part boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError};

/// Hues of the parts, cycled when there are more than four.
const PART_HUES: [[f32; 3]; 4] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.75, 0.30],
    [0.25, 0.35, 0.90],
    [0.90, 0.80, 0.20],
];

/// Stripe orientations: horizontal, vertical and the two diagonals.
pub const ORIENTATIONS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_class: usize,
    pub image_size: usize,
    pub n_parts: usize,
    /// Side of a part patch in pixels.
    pub part_size: usize,
    /// Relative amplitude of the part stripes.
    pub part_contrast: f32,
    /// Number of background distractor patches.
    pub clutter: usize,
    /// Std of the per-pixel Gaussian noise.
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_class: 8,
            image_size: 64,
            n_parts: 4,
            part_size: 12,
            part_contrast: 0.35,
            clutter: 3,
            noise_std: 0.04,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bits = self.code_bits();
        if self.n_class < 2 || self.n_parts == 0 || bits > self.n_parts || self.n_class > 1 << self.n_parts {
            return Err(TensorError::invalid(
                "synthetic spec",
                format!("{} classes cannot be coded on {} parts", self.n_class, self.n_parts),
            ));
        }
        if self.image_size < 16 || self.part_size < 2 || self.part_size * 4 > self.image_size {
            return Err(TensorError::invalid(
                "synthetic spec",
                format!("part size {} for image size {}", self.part_size, self.image_size),
            ));
        }
        Ok(())
    }

    fn code_bits(&self) -> usize {
        (usize::BITS - (self.n_class - 1).leading_zeros()) as usize
    }

    /// Stripe orientation index (see [`ORIENTATIONS`]) of every part for a
    /// label. Part `k` encodes label bits `k mod b` and `(k + 1) mod b`.
    pub fn part_code(&self, label: usize) -> Vec<u8> {
        let bits = self.code_bits();
        let bit = |i: usize| ((label >> (i % bits)) & 1) as u8;
        (0..self.n_parts).map(|k| bit(k) + 2 * bit(k + 1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[S, S, 3]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    /// Ground-truth part boxes `(x0, y0, x1, y1)`, for diagnostics only.
    pub part_boxes: Vec<[f32; 4]>,
}

fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x51_7CC1_B727_220A,
        Split::Test => 0x2545_F491_4F6C_DD1D,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Label of scene `index`; labels cycle so every class is equally frequent.
pub fn label_of(spec: &SyntheticSpec, index: usize) -> usize {
    index % spec.n_class
}

/// Smooth noise: a coarse random grid bilinearly interpolated to `size`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f32> {
    let g = cells + 1;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.random::<f32>()).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fy = y as f32 / size as f32 * cells as f32;
            let fx = x as f32 / size as f32 * cells as f32;
            let (iy, ix) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - iy as f32, fx - ix as f32);
            let v = |a: usize, b: usize| grid[a * g + b];
            let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
            let bot = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

struct Patch {
    x0: usize,
    y0: usize,
    side: usize,
    hue: [f32; 3],
    orientation: u8,
    phase: usize,
    brightness: f32,
}

fn paint_patch(img: &mut [f32], size: usize, p: &Patch, contrast: f32) {
    for y in p.y0..(p.y0 + p.side).min(size) {
        for x in p.x0..(p.x0 + p.side).min(size) {
            let (dx, dy) = (x - p.x0, y - p.y0);
            let along = match p.orientation {
                0 => dy,
                1 => dx,
                2 => dx + dy,
                _ => dx + p.side - dy,
            };
            let sign = if (along + p.phase) / 2 % 2 == 0 { 1.0 } else { -1.0 };
            for c in 0..3 {
                let v = p.hue[c] * p.brightness * (1.0 + sign * contrast);
                img[(y * size + x) * 3 + c] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Renders scene `index` of a split with the given label.
pub fn render(spec: &SyntheticSpec, split: Split, index: usize, label: usize) -> Result<Sample> {
    spec.validate()?;
    if label >= spec.n_class {
        return Err(TensorError::invalid("render", format!("label {label} out of range")));
    }
    let s = spec.image_size;
    let sf = s as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(spec.seed, split, index));
    let mut img = vec![0.0f32; s * s * 3];

    // background
    let tint: [f32; 3] = [rng.random_range(0.35..0.6), rng.random_range(0.35..0.6), rng.random_range(0.35..0.6)];
    let fields: Vec<Vec<f32>> = (0..3).map(|_| value_noise(&mut rng, s, 4)).collect();
    for p in 0..s * s {
        for c in 0..3 {
            img[p * 3 + c] = tint[c] * (0.6 + 0.8 * fields[c][p]);
        }
    }

    // object pose
    let margin = 0.1 * sf;
    let cx = sf / 2.0 + rng.random_range(-margin..margin);
    let cy = sf / 2.0 + rng.random_range(-margin..margin);
    let a = sf * rng.random_range(0.28..0.36);
    let b = sf * rng.random_range(0.17..0.22);
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    let (sin, cos) = theta.sin_cos();
    let body: [f32; 3] = [rng.random_range(0.45..0.7), rng.random_range(0.4..0.6), rng.random_range(0.3..0.5)];
    let inside = |x: f32, y: f32| {
        let (dx, dy) = (x - cx, y - cy);
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    };

    // distractors, kept off the object
    let side = spec.part_size;
    let mut distractors = Vec::with_capacity(spec.clutter);
    for _ in 0..spec.clutter {
        let x0 = rng.random_range(0..=s - side);
        let y0 = rng.random_range(0..=s - side);
        let hue = PART_HUES[rng.random_range(0..PART_HUES.len())];
        let orientation = rng.random_range(0..ORIENTATIONS);
        let phase = rng.random_range(0..4);
        let brightness = rng.random_range(0.85..1.05);
        let c = (x0 as f32 + side as f32 / 2.0, y0 as f32 + side as f32 / 2.0);
        if !inside(c.0, c.1) {
            distractors.push(Patch {
                x0,
                y0,
                side,
                hue,
                orientation,
                phase,
                brightness,
            });
        }
    }
    for d in &distractors {
        paint_patch(&mut img, s, d, spec.part_contrast);
    }

    // body with a soft shading gradient
    let shade = rng.random_range(-0.15..0.15);
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            if inside(px, py) {
                let u = ((px - cx) * cos + (py - cy) * sin) / a;
                for c in 0..3 {
                    img[(y * s + x) * 3 + c] = (body[c] * (1.0 + shade * u)).clamp(0.0, 1.0);
                }
            }
        }
    }

    // parts: canonical spots in the object frame, jittered
    let code = spec.part_code(label);
    let mut part_boxes = Vec::with_capacity(spec.n_parts);
    let mut parts = Vec::with_capacity(spec.n_parts);
    for k in 0..spec.n_parts {
        let ang = std::f32::consts::TAU * k as f32 / spec.n_parts as f32;
        let (u, v) = (0.55 * a * ang.cos(), 0.55 * b * ang.sin());
        let jx = rng.random_range(-1.5..1.5);
        let jy = rng.random_range(-1.5..1.5);
        let px = cx + u * cos - v * sin + jx;
        let py = cy + u * sin + v * cos + jy;
        let half = side as f32 / 2.0;
        let x0 = (px - half).round().clamp(0.0, sf - side as f32) as usize;
        let y0 = (py - half).round().clamp(0.0, sf - side as f32) as usize;
        let phase = rng.random_range(0..4);
        let brightness = rng.random_range(0.85..1.05);
        part_boxes.push([x0 as f32, y0 as f32, (x0 + side) as f32, (y0 + side) as f32]);
        parts.push(Patch {
            x0,
            y0,
            side,
            hue: PART_HUES[k % PART_HUES.len()],
            orientation: code[k],
            phase,
            brightness,
        });
    }
    for p in &parts {
        paint_patch(&mut img, s, p, spec.part_contrast);
    }

    if spec.noise_std > 0.0 {
        let dist = Normal::new(0.0f32, spec.noise_std).expect("positive std");
        for v in img.iter_mut() {
            *v = (*v + dist.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    Ok(Sample {
        image: Tensor::new([s, s, 3], img)?,
        label,
        part_boxes,
    })
}

/// Scene `index` of a split with its own label.
pub fn sample(spec: &SyntheticSpec, split: Split, index: usize) -> Result<Sample> {
    render(spec, split, index, label_of(spec, index))
}

/// The first `count` scenes of a split.
pub fn generate(spec: &SyntheticSpec, split: Split, count: usize) -> Result<Vec<Sample>> {
    (0..count).map(|i| sample(spec, split, i)).collect()
}
