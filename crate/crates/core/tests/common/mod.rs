//! Independent reference implementations used by the integration tests.
//! They favour obviously-correct loops over speed and share no code with
//! the library beyond its data types.
#![allow(dead_code)]

use daf_core::sppn::ProposalBox;
use daf_core::Tensor;

/// Nested-loop zero-padded convolution of `[h, w, cin]` with `[k, k, cin, cout]`.
pub fn conv2d_reference(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ks, cout) = (k.shape()[0], k.shape()[3]);
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    Tensor::from_fn([oh, ow, cout], |o| {
        let mut acc = 0.0;
        for ky in 0..ks {
            for kx in 0..ks {
                let iy = (o[0] * stride + ky) as i64 - pad as i64;
                let ix = (o[1] * stride + kx) as i64 - pad as i64;
                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                    continue;
                }
                for c in 0..cin {
                    acc += x.get(&[iy as usize, ix as usize, c]) * k.get(&[ky, kx, c, o[2]]);
                }
            }
        }
        acc
    })
}

/// Integer box `(x0, y0, x1, y1)` with a score and level, for NMS checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntBox {
    pub c: [i64; 4],
    pub score: f32,
    pub level: u8,
}

impl IntBox {
    pub fn area(&self) -> i64 {
        (self.c[2] - self.c[0]) * (self.c[3] - self.c[1])
    }

    pub fn to_proposal(self) -> ProposalBox {
        ProposalBox::new(
            self.c[0] as f32,
            self.c[1] as f32,
            self.c[2] as f32,
            self.c[3] as f32,
            self.score,
            self.level,
        )
    }
}

pub fn int_intersection(a: &IntBox, b: &IntBox) -> i64 {
    let w = (a.c[2].min(b.c[2]) - a.c[0].max(b.c[0])).max(0);
    let h = (a.c[3].min(b.c[3]) - a.c[1].max(b.c[1])).max(0);
    w * h
}

/// IoU above `num / den`, decided in exact integer arithmetic.
fn overlaps_beyond(a: &IntBox, b: &IntBox, num: i64, den: i64) -> bool {
    let inter = int_intersection(a, b);
    let union = a.area() + b.area() - inter;
    inter * den > num * union
}

/// Keep-set of greedy suppression, recomputed from its definition: a box
/// survives iff no better-ranked survivor overlaps it beyond the threshold.
pub fn nms_brute_force(boxes: &[IntBox], num: i64, den: i64) -> Vec<IntBox> {
    let mut ranked = boxes.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.level.cmp(&b.level))
            .then(a.c[1].cmp(&b.c[1]))
            .then(a.c[0].cmp(&b.c[0]))
            .then(a.c[3].cmp(&b.c[3]))
            .then(a.c[2].cmp(&b.c[2]))
    });
    let mut kept: Vec<IntBox> = Vec::new();
    for b in ranked {
        if kept.iter().all(|k| !overlaps_beyond(k, &b, num, den)) {
            kept.push(b);
        }
    }
    kept
}

/// Pixel sets of integer boxes on a grid, counted cell by cell.
pub fn rasterized_overlap_ratio(a: [i64; 4], b: [i64; 4], alpha: f64) -> f64 {
    let (lo, hi) = (a[0].min(a[1]).min(b[0]).min(b[1]), a[2].max(a[3]).max(b[2]).max(b[3]));
    let inside = |r: [i64; 4], x: i64, y: i64| r[0] <= x && x < r[2] && r[1] <= y && y < r[3];
    let (mut ia, mut ib, mut both) = (0i64, 0i64, 0i64);
    for y in lo..hi {
        for x in lo..hi {
            let (pa, pb) = (inside(a, x, y), inside(b, x, y));
            ia += pa as i64;
            ib += pb as i64;
            both += (pa && pb) as i64;
        }
    }
    alpha * both as f64 / (ia + ib) as f64
}

/// Wrongly ordered pairs by direct enumeration over all `(i, j)` with `c_i < c_j`.
pub fn wrong_pairs(scores: &[f64], confidences: &[f64]) -> (usize, usize) {
    let mut pairs = 0;
    let mut wrong = 0;
    for (i, ci) in confidences.iter().enumerate() {
        for (j, cj) in confidences.iter().enumerate() {
            if ci < cj {
                pairs += 1;
                if scores[i] >= scores[j] {
                    wrong += 1;
                }
            }
        }
    }
    (wrong, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Keep,
    Noise,
    Blur,
}

/// Role of pixel `(y, x)` when box `k` is kept; membership by pixel center.
pub fn role_reference(boxes: &[[f32; 4]], k: usize, y: usize, x: usize) -> Role {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    let member = |b: &[f32; 4]| {
        (b[0] as f64) <= cx && cx < b[2] as f64 && (b[1] as f64) <= cy && cy < b[3] as f64
    };
    if member(&boxes[k]) {
        Role::Keep
    } else if boxes.iter().enumerate().any(|(i, b)| i != k && member(b)) {
        Role::Noise
    } else {
        Role::Blur
    }
}
