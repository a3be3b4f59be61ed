//! Loss terms of the student, teacher and fusion objectives.
//!
//! Box losses operate on `[M, 4]` tensors of `(x0, y0, x1, y1)` so that
//! gradients reach the regression offsets through [`Tape::decode_boxes`].

use serde::{Deserialize, Serialize};

use crate::ops::{softmax, Target};
use crate::sppn::ProposalBox;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the student objective in the grand total.
    pub alpha: f64,
    /// Weight of the teacher objective.
    pub beta: f64,
    /// Weight of the fusion objective.
    pub gamma: f64,
    pub alpha_iou: f64,
    pub alpha_hint: f64,
    pub beta_soft: f64,
    pub margin: f64,
    pub temperature: f64,
    pub n_parts: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            alpha_iou: 1.0,
            alpha_hint: 0.1,
            beta_soft: 0.5,
            margin: 0.1,
            temperature: 4.0,
            n_parts: 4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.alpha,
            self.beta,
            self.gamma,
            self.alpha_iou,
            self.alpha_hint,
            self.beta_soft,
            self.margin,
        ];
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || self.n_parts == 0 || !(self.temperature > 0.0) {
            return Err(TensorError::invalid("loss weights", format!("{self:?}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Box overlap
// ---------------------------------------------------------------------------

fn overlap_1d<T: Scalar>(a0: T, a1: T, b0: T, b1: T) -> T {
    a1.min(b1) - a0.max(b0)
}

/// `sum_{i<j} alpha * |Bi n Bj| / (|Bi| + |Bj|)` over `[M, 4]` boxes.
pub fn overlap_penalty<T: Scalar>(boxes: &[T], alpha: T) -> T {
    let m = boxes.len() / 4;
    let mut total = T::zero();
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (&boxes[i * 4..i * 4 + 4], &boxes[j * 4..j * 4 + 4]);
            let iw = overlap_1d(a[0], a[2], b[0], b[2]);
            let ih = overlap_1d(a[1], a[3], b[1], b[3]);
            if iw > T::zero() && ih > T::zero() {
                let area_a = (a[2] - a[0]) * (a[3] - a[1]);
                let area_b = (b[2] - b[0]) * (b[3] - b[1]);
                total = total + alpha * iw * ih / (area_a + area_b);
            }
        }
    }
    total
}

struct OverlapFn<T> {
    alpha: T,
}

impl<T: Scalar> Backward<T> for OverlapFn<T> {
    fn name(&self) -> &'static str {
        "r_iou"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let b = inputs[0].data();
        let m = b.len() / 4;
        let g = grad.item() * self.alpha;
        let mut gx = vec![T::zero(); b.len()];
        for i in 0..m {
            for j in i + 1..m {
                let (pi, pj) = (i * 4, j * 4);
                let iw = overlap_1d(b[pi], b[pi + 2], b[pj], b[pj + 2]);
                let ih = overlap_1d(b[pi + 1], b[pi + 3], b[pj + 1], b[pj + 3]);
                if !(iw > T::zero() && ih > T::zero()) {
                    continue;
                }
                let inter = iw * ih;
                let (wi, hi) = (b[pi + 2] - b[pi], b[pi + 3] - b[pi + 1]);
                let (wj, hj) = (b[pj + 2] - b[pj], b[pj + 3] - b[pj + 1]);
                let denom = wi * hi + wj * hj;
                let d_inter = g / denom;
                let d_denom = -g * inter / (denom * denom);

                // each intersection bound comes from one of the two boxes
                let lower = |k: usize| if b[pi + k] >= b[pj + k] { pi + k } else { pj + k };
                let upper = |k: usize| if b[pi + k] <= b[pj + k] { pi + k } else { pj + k };
                let (x0, y0, x1, y1) = (lower(0), lower(1), upper(2), upper(3));
                gx[x0] = gx[x0] - d_inter * ih;
                gx[x1] = gx[x1] + d_inter * ih;
                gx[y0] = gx[y0] - d_inter * iw;
                gx[y1] = gx[y1] + d_inter * iw;

                // areas
                for (p, w, h) in [(pi, wi, hi), (pj, wj, hj)] {
                    gx[p] = gx[p] - d_denom * h;
                    gx[p + 2] = gx[p + 2] + d_denom * h;
                    gx[p + 1] = gx[p + 1] - d_denom * w;
                    gx[p + 3] = gx[p + 3] + d_denom * w;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Box area prior
// ---------------------------------------------------------------------------

/// `(1/M) sum_i |area(Bi) - S/n| / max(S, 1)`.
pub fn area_penalty<T: Scalar>(boxes: &[T], object_area: T, n_parts: usize) -> T {
    let m = boxes.len() / 4;
    let target = object_area / T::of(n_parts as f64);
    let denom = object_area.max(T::one());
    let total: T = boxes
        .chunks(4)
        .map(|b| ((b[2] - b[0]) * (b[3] - b[1]) - target).abs())
        .sum();
    total / (T::of(m as f64) * denom)
}

struct AreaFn<T> {
    object_area: T,
    n_parts: usize,
}

impl<T: Scalar> Backward<T> for AreaFn<T> {
    fn name(&self) -> &'static str {
        "r_area"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let b = inputs[0].data();
        let m = b.len() / 4;
        let target = self.object_area / T::of(self.n_parts as f64);
        let scale = grad.item() / (T::of(m as f64) * self.object_area.max(T::one()));
        let mut gx = Vec::with_capacity(b.len());
        for c in b.chunks(4) {
            let (w, h) = (c[2] - c[0], c[3] - c[1]);
            let diff = w * h - target;
            let s = if diff > T::zero() {
                scale
            } else if diff < T::zero() {
                -scale
            } else {
                T::zero()
            };
            gx.extend([-s * h, -s * w, s * h, s * w]);
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Pairwise ranking
// ---------------------------------------------------------------------------

/// Ordered pairs `(i, j)` with `confidence[i] < confidence[j]`.
fn ranked_pairs<T: Scalar>(confidences: &[T]) -> Vec<(usize, usize)> {
    let m = confidences.len();
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if confidences[i] < confidences[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Hinge surrogate `sum max(0, s_i - s_j + margin)` over pairs with
/// `c_i < c_j`, divided by the number of such pairs.
pub fn ranking_hinge<T: Scalar>(scores: &[T], confidences: &[T], margin: T) -> T {
    let pairs = ranked_pairs(confidences);
    if pairs.is_empty() {
        return T::zero();
    }
    let total: T = pairs
        .iter()
        .map(|&(i, j)| (scores[i] - scores[j] + margin).max(T::zero()))
        .sum();
    total / T::of(pairs.len() as f64)
}

/// Number of pairs with `c_i < c_j` that the scores order wrongly (`s_i >= s_j`).
pub fn ranking_hard_count<T: Scalar>(scores: &[T], confidences: &[T]) -> usize {
    ranked_pairs(confidences)
        .into_iter()
        .filter(|&(i, j)| scores[i] >= scores[j])
        .count()
}

pub fn ranking_pair_count<T: Scalar>(confidences: &[T]) -> usize {
    ranked_pairs(confidences).len()
}

struct RankingFn<T> {
    confidences: Vec<T>,
    margin: T,
}

impl<T: Scalar> Backward<T> for RankingFn<T> {
    fn name(&self) -> &'static str {
        "ranking"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let s = inputs[0].data();
        let pairs = ranked_pairs(&self.confidences);
        let mut gx = vec![T::zero(); s.len()];
        if !pairs.is_empty() {
            let w = grad.item() / T::of(pairs.len() as f64);
            for (i, j) in pairs {
                if s[i] - s[j] + self.margin > T::zero() {
                    gx[i] = gx[i] + w;
                    gx[j] = gx[j] - w;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Squared distance
// ---------------------------------------------------------------------------

struct SquaredDistanceFn;

impl<T: Scalar> Backward<T> for SquaredDistanceFn {
    fn name(&self) -> &'static str {
        "squared_distance"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let two_g = grad.item() * T::of(2.0);
        let d = inputs[0].zip_map(inputs[1], "squared_distance", |a, b| two_g * (a - b)).unwrap();
        vec![needs[0].then(|| d.clone()), needs[1].then(|| d.map(|v| -v))]
    }
}

fn box_tensor_check<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<usize> {
    let [m, four] = t.dims2(op)?;
    if four != 4 {
        return Err(TensorError::shape(op, format!("expected [M, 4] boxes, got {:?}", t.shape())));
    }
    Ok(m)
}

impl<T: Scalar> Tape<T> {
    pub fn r_iou_loss(&mut self, boxes: Var, alpha: T) -> Result<Var> {
        box_tensor_check(self.value(boxes), "r_iou_loss")?;
        let v = overlap_penalty(self.value(boxes).data(), alpha);
        Ok(self.record(Tensor::scalar(v), vec![boxes], OverlapFn { alpha }))
    }

    pub fn r_area_loss(&mut self, boxes: Var, object_area: T, n_parts: usize) -> Result<Var> {
        box_tensor_check(self.value(boxes), "r_area_loss")?;
        if n_parts == 0 || object_area < T::zero() {
            return Err(TensorError::invalid("r_area_loss", "need n_parts >= 1 and a non-negative object area"));
        }
        let v = area_penalty(self.value(boxes).data(), object_area, n_parts);
        Ok(self.record(Tensor::scalar(v), vec![boxes], AreaFn { object_area, n_parts }))
    }

    /// Ranking surrogate for `M` proposal scores against detached confidences.
    pub fn ranking_loss(&mut self, scores: Var, confidences: &[T], margin: T) -> Result<Var> {
        let s = self.value(scores);
        if s.len() != confidences.len() || s.len() < 2 {
            return Err(TensorError::shape(
                "ranking_loss",
                format!("{} scores for {} confidences (need >= 2)", s.len(), confidences.len()),
            ));
        }
        let v = ranking_hinge(s.data(), confidences, margin);
        Ok(self.record(
            Tensor::scalar(v),
            vec![scores],
            RankingFn {
                confidences: confidences.to_vec(),
                margin,
            },
        ))
    }

    /// `sum (a - b)^2`.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).zip_map(self.value(b), "squared_distance", |x, y| (x - y) * (x - y))?;
        Ok(self.record(Tensor::scalar(d.sum()), vec![a, b], SquaredDistanceFn))
    }

    /// Cross-entropy of the mean of the region logits.
    pub fn concentrate_loss(&mut self, region_logits: &[Var], true_class: usize) -> Result<Var> {
        if region_logits.is_empty() {
            return Err(TensorError::invalid("concentrate_loss", "no region logits"));
        }
        let w = T::one() / T::of(region_logits.len() as f64);
        let terms: Vec<(Var, T)> = region_logits.iter().map(|&v| (v, w)).collect();
        let mean = self.weighted_sum(&terms)?;
        self.softmax_cross_entropy(mean, &Target::Class(true_class))
    }
}

/// Inputs of the hint-distillation loss.
pub struct HintInputs<'a, T: Scalar> {
    /// Teacher hint activations (treated as a fixed target).
    pub hint: Var,
    /// Student guided-layer activations.
    pub guide: Var,
    pub regressor_w: Var,
    pub regressor_b: Var,
    pub student_logits: Var,
    pub teacher_logits: &'a Tensor<T>,
}

/// `(alpha/2) ||hint - r(guide)||^2 + beta * CE(softmax(student / T), softmax(teacher / T))`.
pub fn hint_loss<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &HintInputs<'_, T>,
    alpha_hint: T,
    beta_soft: T,
    temperature: T,
) -> Result<Var> {
    let r = tape.conv2d(inputs.guide, inputs.regressor_w, 1, 0)?;
    let r = tape.add_bias(r, inputs.regressor_b)?;
    if tape.value(r).shape() != tape.value(inputs.hint).shape() {
        return Err(TensorError::shape(
            "hint_loss",
            format!(
                "regressed guide {:?} vs hint {:?}",
                tape.value(r).shape(),
                tape.value(inputs.hint).shape()
            ),
        ));
    }
    let sq = tape.squared_distance(inputs.hint, r)?;
    let inv_t = T::one() / temperature;
    let soft_target = softmax(&inputs.teacher_logits.map(|z| z * inv_t).into_data());
    let scaled = tape.scale(inputs.student_logits, inv_t);
    let ce = tape.softmax_cross_entropy(scaled, &Target::Soft(soft_target))?;
    tape.weighted_sum(&[(sq, alpha_hint / T::of(2.0)), (ce, beta_soft)])
}

/// R_IOU on plain boxes.
pub fn r_iou_loss(boxes: &[ProposalBox], alpha: f64) -> f64 {
    let flat: Vec<f64> = boxes.iter().flat_map(|b| b.coords().map(f64::from)).collect();
    overlap_penalty(&flat, alpha)
}

/// R_Area on plain boxes.
pub fn r_area_loss(boxes: &[ProposalBox], object_area: f64, n_parts: usize) -> f64 {
    let flat: Vec<f64> = boxes.iter().flat_map(|b| b.coords().map(f64::from)).collect();
    area_penalty(&flat, object_area, n_parts)
}

/// Raw per-term values for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ranking: f64,
    pub area: f64,
    pub iou: f64,
    pub hint: f64,
    pub pred: f64,
    pub con: f64,
    pub teacher_pred: f64,
    pub csf_pred: f64,
}

impl LossParts {
    pub fn add_scaled(&mut self, other: &LossParts, w: f64) {
        self.ranking += w * other.ranking;
        self.area += w * other.area;
        self.iou += w * other.iou;
        self.hint += w * other.hint;
        self.pred += w * other.pred;
        self.con += w * other.con;
        self.teacher_pred += w * other.teacher_pred;
        self.csf_pred += w * other.csf_pred;
    }

    /// First non-finite term, if any.
    pub fn non_finite(&self) -> Option<(&'static str, f64)> {
        [
            ("ranking", self.ranking),
            ("area", self.area),
            ("iou", self.iou),
            ("hint", self.hint),
            ("pred", self.pred),
            ("con", self.con),
            ("teacher_pred", self.teacher_pred),
            ("csf_pred", self.csf_pred),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ranking: f64,
    pub area: f64,
    pub iou: f64,
    pub hint: f64,
    pub pred: f64,
    pub con: f64,
    pub student_total: f64,
    pub teacher_total: f64,
    pub csf_total: f64,
    pub grand_total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,ranking,area,iou,hint,pred,con,student_total,teacher_total,csf_total,grand_total";

    pub fn csv_row(&self, step: usize) -> String {
        let v = [
            self.ranking,
            self.area,
            self.iou,
            self.hint,
            self.pred,
            self.con,
            self.student_total,
            self.teacher_total,
            self.csf_total,
            self.grand_total,
        ];
        let cols: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        format!("{step},{}", cols.join(","))
    }
}

pub fn total_losses(parts: &LossParts, weights: &LossWeights) -> LossReport {
    let student_total = parts.ranking + parts.area + parts.iou + parts.hint + parts.pred + parts.con;
    let teacher_total = parts.teacher_pred;
    let csf_total = parts.csf_pred;
    LossReport {
        ranking: parts.ranking,
        area: parts.area,
        iou: parts.iou,
        hint: parts.hint,
        pred: parts.pred,
        con: parts.con,
        student_total,
        teacher_total,
        csf_total,
        grand_total: weights.alpha * student_total + weights.beta * teacher_total + weights.gamma * csf_total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pb(c: [f32; 4]) -> ProposalBox {
        ProposalBox::new(c[0], c[1], c[2], c[3], 0.0, 1)
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(r_iou_loss(&[pb([0.0, 0.0, 4.0, 4.0]), pb([5.0, 5.0, 9.0, 9.0])], 1.0), 0.0);
        let b = pb([3.0, 2.0, 11.0, 7.0]);
        assert!((r_iou_loss(&[b, b], 1.0) - 0.5).abs() < 1e-12);
        let v = r_iou_loss(&[pb([0.0, 0.0, 10.0, 10.0]), pb([5.0, 0.0, 15.0, 10.0])], 1.0);
        assert!((v - 0.25).abs() < 1e-12);
        let three = [pb([0.0, 0.0, 10.0, 10.0]), pb([5.0, 0.0, 15.0, 10.0]), pb([1.0, 3.0, 6.0, 9.0])];
        let swapped = [three[2], three[0], three[1]];
        assert!((r_iou_loss(&three, 2.0) - r_iou_loss(&swapped, 2.0)).abs() < 1e-12);
        assert!((r_iou_loss(&three, 2.0) - 2.0 * r_iou_loss(&three, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn area_examples() {
        let b = pb([0.0, 0.0, 10.0, 10.0]);
        assert_eq!(r_area_loss(&[b, b], 400.0, 4), 0.0);
        let c = pb([0.0, 0.0, 6.0, 5.0]);
        assert!((r_area_loss(&[b, c], 0.0, 4) - 65.0).abs() < 1e-12);
        let d = pb([0.0, 0.0, 20.0, 10.0]);
        assert!((r_area_loss(&[d], 400.0, 4) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(ranking_hinge(&[0.9, 0.5, 0.1], &[0.8, 0.4, 0.2], 0.1), 0.0);
        assert!((ranking_hinge::<f64>(&[0.1, 0.9], &[0.9, 0.1], 0.1) - 0.9).abs() < 1e-12);
        assert_eq!(ranking_hard_count(&[0.1, 0.9], &[0.9, 0.1]), 1);
        assert_eq!(ranking_hinge(&[0.1, 0.9], &[0.5, 0.5], 0.1), 0.0);
    }

    #[test]
    fn concentrate_examples() {
        let mut tape = Tape::<f64>::new();
        let v = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.1]);
        let a = tape.constant(v.clone());
        let l = tape.concentrate_loss(&[a, a, a], 2).unwrap();
        let (ce, _) = crate::ops::softmax_cross_entropy(&v, &Target::Class(2)).unwrap();
        assert!((tape.value(l).item() - ce).abs() < 1e-12);

        let neg = tape.constant(v.map(|x| -x));
        let l = tape.concentrate_loss(&[a, neg], 0).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    fn hint_setup(tape: &mut Tape<f64>, guide_val: Tensor<f64>, hint_val: Tensor<f64>) -> (Var, Var, Var, Var) {
        let hint = tape.constant(hint_val);
        let guide = tape.input(guide_val);
        let w = tape.input(Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap());
        let b = tape.input(Tensor::zeros([1]));
        (hint, guide, w, b)
    }

    #[test]
    fn hint_examples() {
        let mut tape = Tape::<f64>::new();
        let f = Tensor::new([2, 1, 1], vec![0.3, 1.2]).unwrap();
        let (hint, guide, w, b) = hint_setup(&mut tape, f.clone(), f.clone());
        let teacher = Tensor::from_vec(vec![2.0, -1.0, 0.5]);
        let student = tape.input(teacher.clone());
        let inputs = HintInputs {
            hint,
            guide,
            regressor_w: w,
            regressor_b: b,
            student_logits: student,
            teacher_logits: &teacher,
        };
        let l = hint_loss(&mut tape, &inputs, 1.0, 1.0, 4.0).unwrap();
        let p = softmax(&teacher.map(|z| z / 4.0).into_data());
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((tape.value(l).item() - entropy).abs() < 1e-12);

        // ||hint - r(guide)||^2 = 1 + 1 + 1 = 3 with alpha 2 -> 3
        let mut tape = Tape::<f64>::new();
        let (hint, guide, w, b) = hint_setup(
            &mut tape,
            Tensor::new([3, 1, 1], vec![0.0, 0.0, 0.0]).unwrap(),
            Tensor::new([3, 1, 1], vec![1.0, -1.0, 1.0]).unwrap(),
        );
        let student = tape.input(teacher.clone());
        let inputs = HintInputs {
            hint,
            guide,
            regressor_w: w,
            regressor_b: b,
            student_logits: student,
            teacher_logits: &teacher,
        };
        let l = hint_loss(&mut tape, &inputs, 2.0, 0.0, 4.0).unwrap();
        assert!((tape.value(l).item() - 3.0).abs() < 1e-12);
        let l = hint_loss(&mut tape, &inputs, 0.0, 0.0, 4.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn hint_rejects_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let (hint, guide, w, b) = hint_setup(&mut tape, Tensor::zeros([2, 2, 1]), Tensor::zeros([2, 2, 3]));
        let t = Tensor::from_vec(vec![0.0, 1.0]);
        let s = tape.input(t.clone());
        let inputs = HintInputs {
            hint,
            guide,
            regressor_w: w,
            regressor_b: b,
            student_logits: s,
            teacher_logits: &t,
        };
        assert!(hint_loss(&mut tape, &inputs, 1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn totals() {
        let w = LossWeights::default();
        assert_eq!(total_losses(&LossParts::default(), &w), LossReport::default());
        let parts = LossParts {
            pred: 1.0,
            teacher_pred: 2.0,
            csf_pred: 3.0,
            ..LossParts::default()
        };
        assert_eq!(total_losses(&parts, &w).grand_total, 6.0);
        let no_csf = LossWeights { gamma: 0.0, ..w.clone() };
        let other = LossParts { csf_pred: 99.0, ..parts };
        assert_eq!(total_losses(&parts, &no_csf).grand_total, total_losses(&other, &no_csf).grand_total);
        let r = total_losses(
            &LossParts {
                ranking: 0.5,
                area: 0.25,
                iou: 0.125,
                hint: 1.0,
                pred: 2.0,
                con: 4.0,
                ..LossParts::default()
            },
            &w,
        );
        assert_eq!(r.student_total, 7.875);
    }
}
