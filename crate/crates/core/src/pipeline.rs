//! Training, evaluation and ablation over the synthetic benchmark.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::container::ContainerError;
use crate::csf::Fusion;
use crate::data::{generate, Sample, Split, SyntheticSpec};
use crate::heatmap::{location_heatmap, LocationHeatmap};
use crate::losses::{hint_loss, total_losses, HintInputs, LossParts, LossReport, LossWeights};
use crate::ops::{softmax, Target};
use crate::params::{step_lr, GradAccumulator, ParamStore, Sgd};
use crate::sppn::{
    propose, region_images, saliency_mask, score_proposals, AnchorSet, ProposalBox, RegionStyle, SppnHeads,
};
use crate::tape::{Tape, Var};
use crate::teacher::{build_input, Regressor, Teacher, TeacherConfig};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Sppn,
    SppnLhm,
    SppnLhmTeacher,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Sppn,
        Variant::SppnLhm,
        Variant::SppnLhmTeacher,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Sppn => "sppn",
            Variant::SppnLhm => "sppn_lhm",
            Variant::SppnLhmTeacher => "sppn_lhm_teacher",
            Variant::Full => "full",
        }
    }

    pub fn uses_sppn(self) -> bool {
        self != Variant::Baseline
    }

    pub fn uses_heatmap(self) -> bool {
        self >= Variant::SppnLhm
    }

    pub fn uses_teacher(self) -> bool {
        self >= Variant::SppnLhmTeacher
    }

    pub fn uses_distillation(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TensorError::invalid("variant", format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Number of proposals kept per image.
    pub m: usize,
    pub nms_threshold: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub variant: Variant,
    pub data: SyntheticSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub student_channels: [usize; 3],
    pub teacher: TeacherConfig,
    /// Learned fusion layer; plain averaging when false.
    pub learned_fusion: bool,
    /// First epoch in which the teacher and fusion terms are trained.
    pub teacher_start_epoch: usize,
    /// Divide the hint regression term by the number of hint elements.
    pub hint_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            lr_decay: 0.5,
            lr_decay_every: 50,
            momentum: 0.9,
            weight_decay: 1e-4,
            m: 3,
            nms_threshold: 0.25,
            weights: LossWeights::default(),
            seed: 0,
            epochs: 80,
            batch_size: 8,
            variant: Variant::Full,
            data: SyntheticSpec::default(),
            n_train: 200,
            n_test: 200,
            student_channels: [8, 16, 32],
            teacher: TeacherConfig::default(),
            learned_fusion: true,
            teacher_start_epoch: 0,
            hint_mean: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(TensorError::invalid("train config", what.to_string()));
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return bad("learning rate, decay and decay period must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight decay be non-negative");
        }
        if self.m < 2 {
            return bad("M must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return bad("NMS threshold must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.n_train == 0 {
            return bad("batch size and training set must be non-empty");
        }
        self.weights.validate()?;
        self.data.validate()?;
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr, self.lr_decay, self.lr_decay_every, epoch)
    }
}

/// Network definitions; parameters live in [`Model::params`].
#[derive(Debug, Clone)]
pub struct Nets {
    pub student: Backbone,
    pub heads: SppnHeads,
    pub teacher: Teacher,
    pub regressor: Regressor,
    pub fusion: Fusion,
    pub anchors: AnchorSet,
}

impl Nets {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let s = config.data.image_size;
        let student = Backbone::new(
            "student",
            BackboneConfig {
                stage_channels: config.student_channels,
                input_size: s,
                n_class: config.data.n_class,
                in_channels: 3,
            },
        )?;
        let teacher = Teacher::new("teacher", config.teacher.clone(), s, config.data.n_class)?;
        let level_sizes = [0, 1, 2].map(|l| student.config.level_size(l));
        Ok(Nets {
            heads: SppnHeads::new("sppn", config.student_channels),
            regressor: Regressor::new("regressor", config.student_channels[1], config.teacher.stage_channels[1]),
            fusion: Fusion::new("csf", config.data.n_class, config.learned_fusion),
            anchors: AnchorSet::new(s, level_sizes),
            student,
            teacher,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub nets: Nets,
    pub params: ParamStore<f32>,
}

impl Model {
    /// Fresh parameters; each network draws from its own seeded stream so
    /// every variant starts from the same student weights.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let nets = Nets::new(config)?;
        let rng = |k: u64| ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k);
        let mut params = nets.student.init(&mut rng(1));
        params.merge(nets.heads.init(&mut rng(2)));
        params.merge(nets.teacher.init(&mut rng(3)));
        params.merge(nets.regressor.init(&mut rng(4)));
        params.merge(nets.fusion.init());
        Ok(Model { nets, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), ContainerError> {
        self.params.save(path)
    }

    /// Loads a checkpoint written by [`Model::save`] for the same configuration.
    pub fn load(config: &TrainConfig, path: impl AsRef<Path>) -> std::result::Result<Self, ContainerError> {
        let mut model = Model::new(config)?;
        let loaded = ParamStore::load(path)?;
        for (name, t) in model.params.iter() {
            match loaded.try_get(name) {
                Some(l) if l.shape() == t.shape() => {}
                _ => return Err(ContainerError::Missing(name.clone())),
            }
        }
        model.params = loaded;
        Ok(model)
    }
}

/// Everything the pipeline derives from one image before the teacher.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heatmap: Option<LocationHeatmap>,
    pub proposals: Vec<ProposalBox>,
}

fn region_style(config: &TrainConfig) -> RegionStyle {
    RegionStyle::for_size(config.data.image_size)
}

/// Region noise seed for one image visit.
fn region_seed(config: &TrainConfig, epoch: usize, index: usize) -> u64 {
    config.seed.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ ((epoch as u64) << 40) ^ (index as u64).wrapping_mul(0x9E37_79B9)
}

fn check_finite(term: &'static str, v: f64, index: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TensorError::invalid(
            "train_step",
            format!("non-finite {term} loss ({v}) on sample {index}"),
        ))
    }
}

struct ImageTerms {
    parts: LossParts,
    total: Var,
}

/// Builds every loss term for one image on `tape`.
fn image_losses(
    model: &Model,
    config: &TrainConfig,
    tape: &mut Tape<f32>,
    sample: &Sample,
    seed: u64,
    teacher_active: bool,
) -> Result<ImageTerms> {
    let nets = &model.nets;
    let p = &model.params;
    let w = &config.weights;
    let variant = config.variant;
    let s = config.data.image_size;
    let label = sample.label;
    let mut parts = LossParts::default();
    let mut student_terms: Vec<(Var, f32)> = Vec::new();
    let mut other_terms: Vec<(Var, f32)> = Vec::new();

    let x = tape.constant(sample.image.clone());
    let out = nets.student.forward(tape, p, x)?;
    let pred = tape.softmax_cross_entropy(out.logits, &Target::Class(label))?;
    parts.pred = tape.value(pred).item() as f64;
    student_terms.push((pred, 1.0));

    let mut attention = None;
    if variant.uses_sppn() {
        let heatmap = if variant.uses_heatmap() {
            Some(location_heatmap(&out.pyramid(tape), s)?)
        } else {
            None
        };
        let detached = out.levels.map(|v| tape.detach(v));
        let head = nets.heads.forward(tape, p, detached)?;
        let boxes = score_proposals(tape.value(head), &nets.anchors)?;
        let chosen = propose(&boxes, heatmap.as_ref(), config.nms_threshold as f32, config.m)?;

        let mut region_logits = Vec::with_capacity(chosen.len());
        let mut confidences = Vec::with_capacity(chosen.len());
        for img in region_images(&sample.image, &chosen, region_style(config), seed)? {
            let rx = tape.constant(img);
            let r = nets.student.forward(tape, p, rx)?;
            confidences.push(softmax(tape.value(r.logits).data())[label]);
            region_logits.push(r.logits);
        }
        let con = tape.concentrate_loss(&region_logits, label)?;
        parts.con = tape.value(con).item() as f64;
        student_terms.push((con, 1.0));

        let rows: Vec<usize> = chosen.iter().map(|b| b.anchor).collect();
        let sel = tape.gather_rows(head, &rows)?;
        let scores = tape.columns(sel, 0, 1)?;
        let scores = tape.reshape(scores, [rows.len()])?;
        let ranking = tape.ranking_loss(scores, &confidences, w.margin as f32)?;
        parts.ranking = tape.value(ranking).item() as f64;
        student_terms.push((ranking, 1.0));

        let offsets = tape.columns(sel, 1, 5)?;
        let anchors: Vec<_> = rows.iter().map(|&r| nets.anchors.anchors[r]).collect();
        let decoded = tape.decode_boxes(offsets, &anchors, s)?;
        let iou = tape.r_iou_loss(decoded, w.alpha_iou as f32)?;
        parts.iou = tape.value(iou).item() as f64;
        student_terms.push((iou, 1.0));
        if let Some(h) = &heatmap {
            let area = tape.r_area_loss(decoded, h.object_area as f32, w.n_parts)?;
            parts.area = tape.value(area).item() as f64;
            student_terms.push((area, 1.0));
        }
        attention = Some(Attention {
            heatmap,
            proposals: chosen,
        });
    }

    if variant.uses_teacher() && teacher_active {
        let att = attention.as_ref().expect("teacher variants propose parts");
        let heatmap = att.heatmap.as_ref().expect("teacher variants build the heatmap");
        let mask = saliency_mask(&att.proposals, s);
        let tin = tape.constant(build_input(&sample.image, heatmap, &mask)?);
        let tout = nets.teacher.forward(tape, p, tin)?;
        let tpred = tape.softmax_cross_entropy(tout.logits, &Target::Class(label))?;
        parts.teacher_pred = tape.value(tpred).item() as f64;
        other_terms.push((tpred, w.beta as f32));

        let sl = tape.detach(out.logits);
        let tl = tape.detach(tout.logits);
        let fused = nets.fusion.forward(tape, p, sl, tl)?;
        let fpred = tape.softmax_cross_entropy(fused, &Target::Class(label))?;
        parts.csf_pred = tape.value(fpred).item() as f64;
        other_terms.push((fpred, w.gamma as f32));

        if variant.uses_distillation() {
            let hint = tape.detach(tout.hint);
            let (rw, rb) = nets.regressor.vars(tape, p);
            let teacher_logits = tape.value(tout.logits).clone();
            let alpha_hint = if config.hint_mean {
                w.alpha_hint / tape.value(hint).len() as f64
            } else {
                w.alpha_hint
            };
            let inputs = HintInputs {
                hint,
                guide: out.levels[1],
                regressor_w: rw,
                regressor_b: rb,
                student_logits: out.logits,
                teacher_logits: &teacher_logits,
            };
            let ht = hint_loss(tape, &inputs, alpha_hint as f32, w.beta_soft as f32, w.temperature as f32)?;
            parts.hint = tape.value(ht).item() as f64;
            student_terms.push((ht, 1.0));
        }
    }

    let alpha = w.alpha as f32;
    let mut terms: Vec<(Var, f32)> = student_terms.into_iter().map(|(v, k)| (v, k * alpha)).collect();
    terms.extend(other_terms);
    let total = tape.weighted_sum(&terms)?;
    Ok(ImageTerms { parts, total })
}

/// Optimizer state carried across steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub sgd: Sgd<f32>,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model: Model::new(config)?,
            sgd: Sgd::new(config.momentum as f32, config.weight_decay as f32),
            step: 0,
        })
    }
}

/// One optimizer step over a batch: per-image losses averaged over the batch.
/// `indices` are the dataset positions of the batch, used for region seeds.
pub fn train_step(
    trainer: &mut Trainer,
    config: &TrainConfig,
    batch: &[&Sample],
    indices: &[usize],
    epoch: usize,
    lr: f64,
) -> Result<LossReport> {
    if batch.is_empty() || batch.len() != indices.len() {
        return Err(TensorError::invalid("train_step", "empty or mismatched batch"));
    }
    let weight = 1.0 / batch.len() as f64;
    let mut grads = GradAccumulator::new();
    let mut parts = LossParts::default();
    let teacher_active = epoch >= config.teacher_start_epoch;
    for (sample, &index) in batch.iter().zip(indices) {
        let mut tape = Tape::new();
        let terms = image_losses(
            &trainer.model,
            config,
            &mut tape,
            sample,
            region_seed(config, epoch, index),
            teacher_active,
        )?;
        if let Some((term, v)) = terms.parts.non_finite() {
            check_finite(term, v, index)?;
        }
        let g = tape.backward(terms.total)?;
        grads.add(&g, weight as f32);
        parts.add_scaled(&terms.parts, weight);
    }
    trainer.sgd.step(&mut trainer.model.params, &grads, lr as f32);
    trainer.step += 1;
    Ok(total_losses(&parts, &config.weights))
}

/// Per-step record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

impl Trainer {
    /// One pass over `train_set` in a per-epoch shuffled order.
    pub fn run_epoch(
        &mut self,
        config: &TrainConfig,
        train_set: &[Sample],
        epoch: usize,
        mut on_step: impl FnMut(usize, &StepLog),
    ) -> Result<Vec<StepLog>> {
        let lr = config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA5A5_0000 ^ epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut logs = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let report = train_step(self, config, &batch, chunk, epoch, lr)?;
            let log = StepLog { epoch, lr, report };
            on_step(self.step, &log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains from scratch on `train_set`, calling `on_step` after every step.
pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    mut on_step: impl FnMut(usize, &StepLog),
) -> Result<(Model, Vec<StepLog>)> {
    let mut trainer = Trainer::new(config)?;
    let mut logs = Vec::new();
    for epoch in 0..config.epochs {
        logs.extend(trainer.run_epoch(config, train_set, epoch, &mut on_step)?);
    }
    Ok((trainer.model, logs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub student_acc: f64,
    /// Absent for variants without a teacher.
    pub teacher_acc: Option<f64>,
    pub fused_acc: f64,
}

/// Per-image predictions of every available head.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub student_logits: Vec<f32>,
    pub teacher_logits: Option<Vec<f32>>,
    pub fused_logits: Vec<f32>,
    pub attention: Option<Attention>,
}

/// Student, heatmap and proposals for one image, without gradients.
pub fn attend(model: &Model, config: &TrainConfig, image: &Tensor<f32>) -> Result<(Vec<f32>, Attention)> {
    let nets = &model.nets;
    let s = config.data.image_size;
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let out = nets.student.forward(&mut tape, &model.params, x)?;
    let heatmap = location_heatmap(&out.pyramid(&tape), s)?;
    let head = nets.heads.forward(&mut tape, &model.params, out.levels)?;
    let boxes = score_proposals(tape.value(head), &nets.anchors)?;
    let gate = config.variant.uses_heatmap().then_some(&heatmap);
    let proposals = propose(&boxes, gate, config.nms_threshold as f32, config.m)?;
    Ok((
        tape.value(out.logits).data().to_vec(),
        Attention {
            heatmap: Some(heatmap),
            proposals,
        },
    ))
}

pub fn predict(model: &Model, config: &TrainConfig, image: &Tensor<f32>) -> Result<Prediction> {
    let nets = &model.nets;
    if !config.variant.uses_sppn() {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let out = nets.student.forward(&mut tape, &model.params, x)?;
        let logits = tape.value(out.logits).data().to_vec();
        return Ok(Prediction {
            fused_logits: logits.clone(),
            student_logits: logits,
            teacher_logits: None,
            attention: None,
        });
    }
    let (student_logits, attention) = attend(model, config, image)?;
    if !config.variant.uses_teacher() {
        return Ok(Prediction {
            fused_logits: student_logits.clone(),
            student_logits,
            teacher_logits: None,
            attention: Some(attention),
        });
    }
    let heatmap = attention.heatmap.as_ref().expect("attend builds the heatmap");
    let mask = saliency_mask(&attention.proposals, config.data.image_size);
    let mut tape = Tape::new();
    let tin = tape.constant(build_input(image, heatmap, &mask)?);
    let tout = nets.teacher.forward(&mut tape, &model.params, tin)?;
    let teacher_logits = tape.value(tout.logits).data().to_vec();
    let fused_logits = nets.fusion.fuse_scores(&model.params, &student_logits, &teacher_logits)?;
    Ok(Prediction {
        student_logits,
        teacher_logits: Some(teacher_logits),
        fused_logits,
        attention: Some(attention),
    })
}

fn argmax(v: &[f32]) -> usize {
    Tensor::from_vec(v.to_vec()).argmax()
}

/// Top-1 accuracies over a dataset.
pub fn evaluate(model: &Model, config: &TrainConfig, dataset: &[Sample]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(TensorError::invalid("evaluate", "empty dataset"));
    }
    let (mut s, mut t, mut f) = (0usize, 0usize, 0usize);
    let mut has_teacher = false;
    for sample in dataset {
        let p = predict(model, config, &sample.image)?;
        s += (argmax(&p.student_logits) == sample.label) as usize;
        f += (argmax(&p.fused_logits) == sample.label) as usize;
        if let Some(tl) = &p.teacher_logits {
            has_teacher = true;
            t += (argmax(tl) == sample.label) as usize;
        }
    }
    let n = dataset.len() as f64;
    Ok(Metrics {
        student_acc: s as f64 / n,
        teacher_acc: has_teacher.then(|| t as f64 / n),
        fused_acc: f as f64 / n,
    })
}

pub const METRICS_HEADER: &str = "variant,student_acc,teacher_acc,fused_acc";

pub fn metrics_row(variant: Variant, m: &Metrics) -> String {
    let teacher = m.teacher_acc.map(|v| format!("{v:.4}")).unwrap_or_default();
    format!("{variant},{:.4},{teacher},{:.4}", m.student_acc, m.fused_acc)
}

pub fn metrics_csv(rows: &[(Variant, Metrics)]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (v, m) in rows {
        out.push_str(&metrics_row(*v, m));
        out.push('\n');
    }
    out
}

pub fn losses_csv(logs: &[StepLog]) -> String {
    let mut out = format!("{},epoch,lr\n", LossReport::CSV_HEADER);
    for (i, l) in logs.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", l.report.csv_row(i + 1), l.epoch, l.lr));
    }
    out
}

/// Polyline plot of the grand total loss per step.
pub fn loss_curve_svg(logs: &[StepLog]) -> String {
    let (w, h, pad) = (640.0, 320.0, 32.0);
    let values: Vec<f64> = logs.iter().map(|l| l.report.grand_total).collect();
    let max = values.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let n = values.len().max(2) - 1;
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = pad + (w - 2.0 * pad) * i as f64 / n as f64;
            let y = h - pad - (h - 2.0 * pad) * v / max;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            "<line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
            "<text x=\"{pad}\" y=\"20\" font-size=\"12\">total loss (max {max:.3}), {steps} steps</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        pad = pad,
        b = h - pad,
        r = w - pad,
        max = max,
        steps = values.len(),
        pts = points.join(" "),
    )
}

/// Train and test splits described by a configuration.
pub fn datasets(config: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    Ok((
        generate(&config.data, Split::Train, config.n_train)?,
        generate(&config.data, Split::Test, config.n_test)?,
    ))
}

/// Trains and evaluates each variant with the shared seed and data.
pub fn ablation_run(config: &TrainConfig, variants: &[Variant]) -> Result<Vec<(Variant, Metrics)>> {
    let (train_set, test_set) = datasets(config)?;
    variants
        .iter()
        .map(|&variant| {
            let c = TrainConfig {
                variant,
                ..config.clone()
            };
            let (model, _) = train(&c, &train_set, |_, _| {})?;
            Ok((variant, evaluate(&model, &c, &test_set)?))
        })
        .collect()
}

/// Parses comma-separated variant names.
pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            data: SyntheticSpec {
                n_class: 4,
                image_size: 32,
                part_size: 6,
                ..SyntheticSpec::default()
            },
            n_train: 4,
            n_test: 4,
            epochs: 1,
            batch_size: 2,
            student_channels: [4, 6, 8],
            teacher: TeacherConfig {
                stage_channels: [4, 6, 8],
                groups: 2,
                ..TeacherConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("teacher_only".parse::<Variant>().is_err());
        assert!(!Variant::Baseline.uses_sppn() && !Variant::Baseline.uses_teacher());
        assert!(Variant::Full.uses_distillation() && !Variant::SppnLhmTeacher.uses_distillation());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { m: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.01);
        assert_eq!(c.lr_at(49), 0.01);
        assert_eq!(c.lr_at(50), 0.005);
        assert_eq!(c.lr_at(120), 0.0025);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let config = tiny();
        let (train_set, _) = datasets(&config).unwrap();
        let mut trainer = Trainer::new(&config).unwrap();
        let before = trainer.model.params.clone();
        let batch: Vec<&Sample> = train_set.iter().take(2).collect();
        let report = train_step(&mut trainer, &config, &batch, &[0, 1], 0, 0.0).unwrap();
        assert_eq!(trainer.model.params, before);
        assert!(report.grand_total > 0.0);
        let six = report.ranking + report.area + report.iou + report.hint + report.pred + report.con;
        assert_eq!(report.student_total, six);
        assert!(report.teacher_total > 0.0 && report.csf_total > 0.0 && report.hint > 0.0);
    }

    #[test]
    fn identical_runs_identical_reports() {
        let config = tiny();
        let (train_set, test_set) = datasets(&config).unwrap();
        let (m1, l1) = train(&config, &train_set, |_, _| {}).unwrap();
        let (m2, l2) = train(&config, &train_set, |_, _| {}).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1.params, m2.params);
        let e = evaluate(&m1, &config, &test_set).unwrap();
        assert!((0.0..=1.0).contains(&e.student_acc) && e.teacher_acc.is_some());
        assert!(evaluate(&m1, &config, &[]).is_err());
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let config = TrainConfig {
            variant: Variant::Baseline,
            n_test: 200,
            ..TrainConfig::default()
        };
        let test_set = generate(&config.data, Split::Test, config.n_test).unwrap();
        let acc = evaluate(&Model::new(&config).unwrap(), &config, &test_set).unwrap().student_acc;
        assert!((acc - 0.125).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = tiny();
        let (train_set, test_set) = datasets(&config).unwrap();
        let (model, _) = train(&config, &train_set, |_, _| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.daft");
        model.save(&path).unwrap();
        let loaded = Model::load(&config, &path).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(
            evaluate(&model, &config, &test_set).unwrap(),
            evaluate(&loaded, &config, &test_set).unwrap()
        );
    }

    #[test]
    fn csv_shapes() {
        let m = Metrics {
            student_acc: 0.5,
            teacher_acc: None,
            fused_acc: 0.5,
        };
        let csv = metrics_csv(&[(Variant::Baseline, m)]);
        assert_eq!(csv, "variant,student_acc,teacher_acc,fused_acc\nbaseline,0.5000,,0.5000\n");
        assert!(parse_variants("baseline,full").unwrap() == vec![Variant::Baseline, Variant::Full]);
        assert!(parse_variants("baseline,nope").is_err());
    }
}
