//! Region preprocessing for self-supervised proposal rescoring.
//!
//! For proposal `k`, pixels inside box `k` are kept, pixels inside any other
//! proposal receive additive Gaussian noise, and everything else is replaced
//! by a heavily blurred copy of the image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ProposalBox;
use crate::backbone::Backbone;
use crate::ops::softmax;
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRole {
    Keep,
    Noise,
    Blur,
}

/// Role of pixel `(y, x)` when box `k` is the one being kept.
pub fn pixel_role(boxes: &[ProposalBox], k: usize, y: usize, x: usize) -> PixelRole {
    if boxes[k].contains_pixel(y, x) {
        PixelRole::Keep
    } else if boxes.iter().enumerate().any(|(i, b)| i != k && b.contains_pixel(y, x)) {
        PixelRole::Noise
    } else {
        PixelRole::Blur
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as usize;
    let w: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    w
}

/// Separable Gaussian blur of an `[h, w, c]` image with radius `ceil(3 sigma)`.
/// Taps falling outside the image are dropped and the rest renormalized.
/// A non-positive sigma returns the image unchanged.
pub fn gaussian_blur(image: &Tensor<f32>, sigma: f32) -> Result<Tensor<f32>> {
    let [h, w, c] = image.dims3("gaussian_blur")?;
    if sigma <= 0.0 {
        return Ok(image.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let (mut acc, mut norm) = (0.0f32, 0.0f32);
                    for (t, &kw) in k.iter().enumerate() {
                        let off = t as isize - r;
                        let (yy, xx) = if horizontal {
                            (y as isize, x as isize + off)
                        } else {
                            (y as isize + off, x as isize)
                        };
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        acc += kw * src[(yy as usize * w + xx as usize) * c + ch];
                        norm += kw;
                    }
                    out[(y * w + x) * c + ch] = acc / norm;
                }
            }
        }
        out
    };
    let tmp = pass(image.data(), true);
    Tensor::new(image.shape(), pass(&tmp, false))
}

/// Deterministic per-pixel Gaussian noise field of the given shape.
pub fn noise_field(shape: &[usize], std: f32, seed: u64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    if std <= 0.0 {
        return Tensor::zeros(shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0f32, std).expect("positive std");
    Tensor::new(shape, (0..n).map(|_| dist.sample(&mut rng)).collect()).expect("shape matches")
}

/// Blur and noise settings for region preprocessing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStyle {
    pub blur_sigma: f32,
    pub noise_std: f32,
}

impl RegionStyle {
    /// Sigma `S / 16` and noise std 0.2 on a `[0, 1]` image.
    pub fn for_size(size: usize) -> Self {
        RegionStyle {
            blur_sigma: size as f32 / 16.0,
            noise_std: 0.2,
        }
    }
}

pub fn preprocess_region(
    image: &Tensor<f32>,
    boxes: &[ProposalBox],
    k: usize,
    style: RegionStyle,
    seed: u64,
) -> Result<Tensor<f32>> {
    let blurred = gaussian_blur(image, style.blur_sigma)?;
    preprocess_with_blur(image, &blurred, boxes, k, style.noise_std, seed)
}

/// Like [`preprocess_region`] with the blurred image supplied by the caller,
/// so the blur is shared between the `M` regions of one image.
pub fn preprocess_with_blur(
    image: &Tensor<f32>,
    blurred: &Tensor<f32>,
    boxes: &[ProposalBox],
    k: usize,
    noise_std: f32,
    seed: u64,
) -> Result<Tensor<f32>> {
    let [h, w, c] = image.dims3("preprocess_region")?;
    if k >= boxes.len() {
        return Err(TensorError::invalid(
            "preprocess_region",
            format!("region {k} out of range for {} boxes", boxes.len()),
        ));
    }
    let noise = noise_field(image.shape(), noise_std, seed);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let role = pixel_role(boxes, k, y, x);
            for ch in 0..c {
                let i = (y * w + x) * c + ch;
                out.data_mut()[i] = match role {
                    PixelRole::Keep => image.data()[i],
                    PixelRole::Noise => (image.data()[i] + noise.data()[i]).clamp(0.0, 1.0),
                    PixelRole::Blur => blurred.data()[i],
                };
            }
        }
    }
    Ok(out)
}

/// The `M` preprocessed images of one input, region `k` seeded with `seed + k`.
pub fn region_images(image: &Tensor<f32>, boxes: &[ProposalBox], style: RegionStyle, seed: u64) -> Result<Vec<Tensor<f32>>> {
    let blurred = gaussian_blur(image, style.blur_sigma)?;
    (0..boxes.len())
        .map(|k| preprocess_with_blur(image, &blurred, boxes, k, style.noise_std, seed.wrapping_add(k as u64)))
        .collect()
}

/// Probability of `true_class` assigned by the student to each preprocessed region.
pub fn rescore_regions(
    student: &Backbone,
    params: &ParamStore<f32>,
    image: &Tensor<f32>,
    boxes: &[ProposalBox],
    true_class: usize,
    style: RegionStyle,
    seed: u64,
) -> Result<Vec<f32>> {
    if true_class >= student.config.n_class {
        return Err(TensorError::invalid("rescore_regions", format!("class {true_class} out of range")));
    }
    region_images(image, boxes, style, seed)?
        .into_iter()
        .map(|img| {
            let mut tape = Tape::new();
            let x = tape.constant(img);
            let out = student.forward(&mut tape, params, x)?;
            Ok(softmax(tape.value(out.logits).data())[true_class])
        })
        .collect()
}
