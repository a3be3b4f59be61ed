//! Teacher network over the image stacked with the two attention maps.
//!
//! The teacher reuses the three-stage backbone with five input channels.
//! Its stage-3 map is filtered by the saliency channel, pooled into a
//! grouped bilinear vector and classified linearly. The stage-2 map is the
//! hint for distillation into the student.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::heatmap::LocationHeatmap;
use crate::paf::{adapt_mask, bilinear_len};
use crate::params::{he_normal, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{concat_channels, Result, Scalar, Tensor, TensorError};

pub const TEACHER_CHANNELS: usize = 5;
/// Channel of the teacher input holding the saliency mask.
pub const MASK_CHANNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub stage_channels: [usize; 3],
    pub groups: usize,
    /// Constant multiplier on the unit-norm bilinear vector before the classifier.
    pub feature_scale: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            stage_channels: [8, 16, 32],
            groups: 2,
            feature_scale: 10.0,
        }
    }
}

/// Stacks `(R, G, B, heatmap, mask)` into the `[S, S, 5]` teacher input.
pub fn build_input(image: &Tensor<f32>, heatmap: &LocationHeatmap, mask: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [h, w, c] = image.dims3("build_input")?;
    let hm = &heatmap.values;
    if c != 3 || hm.shape() != [h, w] || mask.shape() != [h, w] {
        return Err(TensorError::shape(
            "build_input",
            format!("image {:?}, heatmap {:?}, mask {:?}", image.shape(), hm.shape(), mask.shape()),
        ));
    }
    let out = concat_channels(&[image, &hm.reshape([h, w, 1])?, &mask.reshape([h, w, 1])?])?;
    if out.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(TensorError::invalid("build_input", "values must lie in [0, 1]"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct TeacherOutput {
    /// Stage-2 activations.
    pub hint: Var,
    /// Stage-3 activations after part attention filtering.
    pub filtered: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Teacher {
    pub backbone: Backbone,
    pub config: TeacherConfig,
    prefix: String,
}

impl Teacher {
    pub fn new(prefix: impl Into<String>, config: TeacherConfig, input_size: usize, n_class: usize) -> Result<Self> {
        let prefix = prefix.into();
        if config.groups == 0 || config.groups > config.stage_channels[2] {
            return Err(TensorError::invalid(
                "teacher",
                format!("{} groups for {} channels", config.groups, config.stage_channels[2]),
            ));
        }
        let backbone = Backbone::new(
            prefix.clone(),
            BackboneConfig {
                stage_channels: config.stage_channels,
                input_size,
                n_class,
                in_channels: TEACHER_CHANNELS,
            },
        )?;
        Ok(Teacher { backbone, config, prefix })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn feature_len(&self) -> usize {
        bilinear_len(self.config.stage_channels[2], self.config.groups)
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = self.backbone.init_stages(rng);
        let (d, g, n) = (self.config.stage_channels[2], self.config.groups, self.backbone.config.n_class);
        p.insert(self.name("group"), Tensor::zeros([d, g]));
        p.insert(self.name("cls.w"), he_normal(rng, &[self.feature_len(), n], self.feature_len()));
        p.insert(self.name("cls.b"), Tensor::zeros([n]));
        p
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, input: Var) -> Result<TeacherOutput> {
        let levels = self.backbone.features(tape, params, input)?;
        let [h, w, _] = tape.value(levels[2]).dims3("teacher")?;
        let mask = adapt_mask(&tape.value(input).channel(MASK_CHANNEL)?, h, w)?;
        let mask = tape.constant(mask);
        let filtered = tape.filter_features(levels[2], mask)?;
        let group = tape.param(&self.name("group"), params.get(&self.name("group")));
        let feature = tape.group_bilinear(filtered, group)?;
        let feature = tape.scale(feature, T::of(self.config.feature_scale));
        let cw = tape.param(&self.name("cls.w"), params.get(&self.name("cls.w")));
        let cb = tape.param(&self.name("cls.b"), params.get(&self.name("cls.b")));
        let logits = tape.linear(feature, cw, cb)?;
        Ok(TeacherOutput {
            hint: levels[1],
            filtered,
            logits,
        })
    }
}

/// `1x1` convolution mapping the student's stage-2 channels onto the teacher's.
#[derive(Debug, Clone)]
pub struct Regressor {
    prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Regressor {
    pub fn new(prefix: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        Regressor {
            prefix: prefix.into(),
            in_channels,
            out_channels,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        p.insert(
            self.name("w"),
            he_normal(rng, &[1, 1, self.in_channels, self.out_channels], self.in_channels),
        );
        p.insert(self.name("b"), Tensor::zeros([self.out_channels]));
        p
    }

    /// Kernel and bias variables.
    pub fn vars<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>) -> (Var, Var) {
        let w = tape.param(&self.name("w"), params.get(&self.name("w")));
        let b = tape.param(&self.name("b"), params.get(&self.name("b")));
        (w, b)
    }
}
