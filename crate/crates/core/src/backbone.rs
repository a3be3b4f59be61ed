//! Three-stage convolutional feature extractor with a linear classification head.
//!
//! Each stage is `conv3x3 -> bias -> relu -> maxpool2`; the three pooled
//! stage outputs form the feature pyramid consumed by the heatmap, the
//! proposal heads and the teacher's part attention filter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{he_normal, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Result, Scalar, Tensor, TensorError};

/// Subtracted from every input channel before the first convolution.
pub const INPUT_MEAN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 3],
    pub input_size: usize,
    pub n_class: usize,
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: [8, 16, 32],
            input_size: 64,
            n_class: 8,
            in_channels: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(TensorError::invalid(
                "backbone",
                format!("input size {} is not a positive multiple of 8", self.input_size),
            ));
        }
        if self.stage_channels.contains(&0) || self.n_class < 2 || self.in_channels == 0 {
            return Err(TensorError::invalid("backbone", format!("degenerate config {self:?}")));
        }
        Ok(())
    }

    /// Spatial extent of the pyramid level `l` (0-based).
    pub fn level_size(&self, l: usize) -> usize {
        self.input_size >> (l + 1)
    }
}

/// Post-ReLU stage activations, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T: Scalar = f32> {
    pub levels: [Tensor<T>; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneOutput {
    pub levels: [Var; 3],
    pub logits: Var,
}

impl BackboneOutput {
    pub fn pyramid<T: Scalar>(&self, tape: &Tape<T>) -> FeaturePyramid<T> {
        FeaturePyramid {
            levels: self.levels.map(|v| tape.value(v).clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    prefix: String,
}

impl Backbone {
    pub fn new(prefix: impl Into<String>, config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Backbone {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = self.init_stages(rng);
        let cin = self.config.stage_channels[2];
        p.insert(self.name("head.w"), he_normal(rng, &[cin, self.config.n_class], cin));
        p.insert(self.name("head.b"), Tensor::zeros([self.config.n_class]));
        p
    }

    /// Convolution stage parameters only, for networks with their own head.
    pub fn init_stages<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        let mut cin = self.config.in_channels;
        for (l, &cout) in self.config.stage_channels.iter().enumerate() {
            p.insert(self.name(&format!("conv{l}.w")), he_normal(rng, &[3, 3, cin, cout], 9 * cin));
            p.insert(self.name(&format!("conv{l}.b")), Tensor::zeros([cout]));
            cin = cout;
        }
        p
    }

    /// Runs the three stages only.
    pub fn features<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, image: Var) -> Result<[Var; 3]> {
        let s = self.config.input_size;
        let shape = tape.value(image).shape().to_vec();
        if shape != [s, s, self.config.in_channels] {
            return Err(TensorError::shape(
                "backbone",
                format!("expected image [{s}, {s}, {}], got {shape:?}", self.config.in_channels),
            ));
        }
        // centre the [0, 1] input so the first pre-activations start unbiased
        let shift = tape.constant(Tensor::full([self.config.in_channels], T::of(-INPUT_MEAN)));
        let mut x = tape.add_bias(image, shift)?;
        let mut levels = [image; 3];
        for (l, level) in levels.iter_mut().enumerate() {
            let w = tape.param(&self.name(&format!("conv{l}.w")), params.get(&self.name(&format!("conv{l}.w"))));
            let b = tape.param(&self.name(&format!("conv{l}.b")), params.get(&self.name(&format!("conv{l}.b"))));
            let c = tape.conv2d(x, w, 1, 1)?;
            let c = tape.add_bias(c, b)?;
            let c = tape.relu(c);
            x = tape.max_pool2(c)?;
            *level = x;
        }
        Ok(levels)
    }

    /// Global average pooling of `features` followed by the linear head.
    pub fn head<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, features: Var) -> Result<Var> {
        let pooled = tape.mean(features, &[0, 1])?;
        let w = tape.param(&self.name("head.w"), params.get(&self.name("head.w")));
        let b = tape.param(&self.name("head.b"), params.get(&self.name("head.b")));
        tape.linear(pooled, w, b)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamStore<T>, image: Var) -> Result<BackboneOutput> {
        let levels = self.features(tape, params, image)?;
        let logits = self.head(tape, params, levels[2])?;
        Ok(BackboneOutput { levels, logits })
    }
}
