//! Saliency part proposals: multi-level scoring heads, heatmap gating,
//! non-maximum suppression, top-M selection and region rescoring.

pub mod anchors;
pub mod nms;
pub mod region;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::heatmap::LocationHeatmap;
use crate::params::{normal, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

pub use anchors::{decode_box, Anchor, AnchorSet};
pub use nms::{iou, nms, proposal_order, sort_proposals};
pub use region::{gaussian_blur, noise_field, pixel_role, preprocess_region, region_images, rescore_regions, PixelRole, RegionStyle};

/// Per-anchor head outputs: score then `(dx, dy, dw, dh)`.
pub const HEAD_OUTPUTS: usize = 5;
/// Spatial extent of the head convolutions. Neighbouring cells keep a
/// score informative where a cell's own activations are all zero.
pub const HEAD_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
    pub score: f32,
    pub level: u8,
    /// Index of the generating anchor in its [`AnchorSet`].
    #[serde(skip)]
    pub anchor: usize,
}

impl ProposalBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32, score: f32, level: u8) -> Self {
        ProposalBox {
            x0,
            y0,
            x1,
            y1,
            score,
            level,
            anchor: 0,
        }
    }

    pub fn area(&self) -> f32 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Pixel `(y, x)` belongs to the box when its center lies in `[x0, x1) x [y0, y1)`.
    pub fn contains_pixel(&self, y: usize, x: usize) -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        self.x0 <= px && px < self.x1 && self.y0 <= py && py < self.y1
    }

    pub fn is_valid(&self, size: usize) -> bool {
        let s = size as f32;
        0.0 <= self.x0 && self.x0 < self.x1 && self.x1 <= s && 0.0 <= self.y0 && self.y0 < self.y1 && self.y1 <= s
    }

    pub fn coords(&self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Same-padded convolution heads, one per pyramid level.
#[derive(Debug, Clone)]
pub struct SppnHeads {
    prefix: String,
    channels: [usize; 3],
}

impl SppnHeads {
    pub fn new(prefix: impl Into<String>, channels: [usize; 3]) -> Self {
        SppnHeads {
            prefix: prefix.into(),
            channels,
        }
    }

    fn name(&self, l: usize, part: &str) -> String {
        format!("{}.level{l}.{part}", self.prefix)
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        for (l, &c) in self.channels.iter().enumerate() {
            p.insert(self.name(l, "w"), normal(rng, &[HEAD_KERNEL, HEAD_KERNEL, c, HEAD_OUTPUTS], 0.01));
            p.insert(self.name(l, "b"), Tensor::zeros([HEAD_OUTPUTS]));
        }
        p
    }

    /// Head outputs for every anchor, `[N, 5]`, levels concatenated finest first.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, levels: [Var; 3]) -> Result<Var> {
        let mut rows = Vec::with_capacity(3);
        for (l, &x) in levels.iter().enumerate() {
            let w = tape.param(&self.name(l, "w"), params.get(&self.name(l, "w")));
            let b = tape.param(&self.name(l, "b"), params.get(&self.name(l, "b")));
            let y = tape.conv2d(x, w, 1, HEAD_KERNEL / 2)?;
            let y = tape.add_bias(y, b)?;
            let n = tape.value(y).len() / HEAD_OUTPUTS;
            rows.push(tape.reshape(y, [n, HEAD_OUTPUTS])?);
        }
        tape.concat_rows(&rows)
    }
}

/// One scored, regressed and clipped box per anchor.
pub fn score_proposals<T: Scalar>(head: &Tensor<T>, anchors: &AnchorSet) -> Result<Vec<ProposalBox>> {
    let [n, k] = head.dims2("score_proposals")?;
    if n != anchors.len() || k != HEAD_OUTPUTS {
        return Err(TensorError::shape(
            "score_proposals",
            format!("head {:?} for {} anchors", head.shape(), anchors.len()),
        ));
    }
    Ok(head
        .data()
        .chunks(HEAD_OUTPUTS)
        .zip(&anchors.anchors)
        .enumerate()
        .map(|(i, (row, a))| {
            let off = [row[1].as_f64(), row[2].as_f64(), row[3].as_f64(), row[4].as_f64()];
            let [x0, y0, x1, y1] = decode_box(a, off, anchors.image_size);
            ProposalBox {
                x0: x0 as f32,
                y0: y0 as f32,
                x1: x1 as f32,
                y1: y1 as f32,
                score: row[0].as_f64() as f32,
                level: a.level,
                anchor: i,
            }
        })
        .collect())
}

/// Keeps the boxes whose center pixel lies in the heatmap's activated area.
pub fn filter_positives(boxes: &[ProposalBox], heatmap: &LocationHeatmap) -> Vec<ProposalBox> {
    let s = heatmap.size();
    boxes
        .iter()
        .filter(|b| {
            let (cx, cy) = b.center();
            let px = (cx.max(0.0) as usize).min(s - 1);
            let py = (cy.max(0.0) as usize).min(s - 1);
            heatmap.is_active(py, px)
        })
        .copied()
        .collect()
}

/// The `m` best NMS survivors. When fewer survive, the list is padded with
/// the best remaining candidates in ranking order, cycling if the candidate
/// pool itself is smaller than `m`.
pub fn select_top(candidates: &[ProposalBox], survivors: &[ProposalBox], m: usize) -> Result<Vec<ProposalBox>> {
    if m == 0 {
        return Err(TensorError::invalid("select_top", "M must be at least 1"));
    }
    if candidates.is_empty() && survivors.is_empty() {
        return Err(TensorError::invalid("select_top", "no proposals to select from"));
    }
    let mut ranked = survivors.to_vec();
    sort_proposals(&mut ranked);
    ranked.truncate(m);
    if ranked.len() < m {
        let mut rest = candidates.to_vec();
        sort_proposals(&mut rest);
        let pool: Vec<ProposalBox> = rest.iter().filter(|b| !ranked.contains(b)).copied().collect();
        let pool = if pool.is_empty() { ranked.clone() } else { pool };
        let mut i = 0;
        while ranked.len() < m {
            ranked.push(pool[i % pool.len()]);
            i += 1;
        }
    }
    Ok(ranked)
}

/// Heatmap-gated proposal selection for one image: gate, NMS, top-`m`.
/// An empty gated set falls back to the ungated proposals.
pub fn propose(
    boxes: &[ProposalBox],
    heatmap: Option<&LocationHeatmap>,
    iou_threshold: f32,
    m: usize,
) -> Result<Vec<ProposalBox>> {
    let gated = heatmap.map(|h| filter_positives(boxes, h)).unwrap_or_default();
    let pool: &[ProposalBox] = if gated.is_empty() { boxes } else { &gated };
    let survivors = nms(pool, iou_threshold);
    select_top(pool, &survivors, m)
}

/// Binary union mask of the boxes at `[size, size]`.
pub fn saliency_mask(boxes: &[ProposalBox], size: usize) -> Tensor<f32> {
    Tensor::from_fn([size, size], |i| {
        if boxes.iter().any(|b| b.contains_pixel(i[0], i[1])) {
            1.0
        } else {
            0.0
        }
    })
}
