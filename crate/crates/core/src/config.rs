//! Run configuration: every training, model, projection and loss knob as
//! `section.key = value` lines. Printing is canonical, so
//! `print(parse(print(c))) == print(c)`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, MmdKernel, Similarity};
use crate::models::{EncoderVariant, MapperInit, ModelConfig};
use crate::nn::AdamConfig;
use crate::projection::{Face, ProjectionConfig, ProjectionMode};
use crate::scalar::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Supervised regression only.
    ROnly,
    /// Regression plus MMD between source and target encoder features.
    T1Mmd,
    /// Regression plus the vanilla adversarial loss.
    T2Adv,
    /// Regression plus a differentiable rank surrogate.
    T3Srocc,
    /// Regression plus the conditional cross-entropy loss.
    All,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [LossVariant::ROnly, LossVariant::T1Mmd, LossVariant::T2Adv, LossVariant::T3Srocc, LossVariant::All];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::ROnly => "r_only",
            LossVariant::T1Mmd => "t1_mmd",
            LossVariant::T2Adv => "t2_adv",
            LossVariant::T3Srocc => "t3_srocc",
            LossVariant::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str().eq_ignore_ascii_case(s))
    }
}

/// How the reversal weight evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSchedule {
    Constant,
    /// `λ·(2/(1+exp(−10p)) − 1)` at training progress `p ∈ [0, 1)`.
    Ramp,
}

impl LambdaSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaSchedule::Constant => "constant",
            LambdaSchedule::Ramp => "ramp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [LambdaSchedule::Constant, LambdaSchedule::Ramp].into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    pub fn at(self, lambda: f64, progress: f64) -> f64 {
        match self {
            LambdaSchedule::Constant => lambda,
            LambdaSchedule::Ramp => lambda * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub input_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub variant: LossVariant,
    pub seed: u64,
    pub precision: Precision,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            input_size: 224,
            epochs: 30,
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::Constant,
            variant: LossVariant::All,
            seed: 0,
            precision: Precision::F32,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// `output_size` always equals `train.input_size`.
    pub projection: ProjectionConfig,
    pub loss: LossConfig,
    /// Face used by single-face projection; kept even in six-face mode so
    /// the two keys may be given in any order.
    pub face: Face,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            train,
            model: ModelConfig::default(),
            projection: ProjectionConfig {
                output_size: train.input_size,
                ..Default::default()
            },
            loss: LossConfig::default(),
            face: Face::PosZ,
        }
    }
}

pub fn mode_str(mode: ProjectionMode) -> &'static str {
    match mode {
        ProjectionMode::SixFace => "2d2",
        ProjectionMode::SingleFace(_) => "2d1",
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| usage(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    /// Small defaults used by tests and the acceptance suite.
    pub fn desk_scale() -> Self {
        let mut c = RunConfig::default();
        c.set_input_size(64);
        c.projection.face_resolution = 64;
        c
    }

    pub fn set_input_size(&mut self, s: usize) {
        self.train.input_size = s;
        self.projection.output_size = s;
    }

    pub fn face(&self) -> Face {
        match self.projection.mode {
            ProjectionMode::SingleFace(f) => f,
            ProjectionMode::SixFace => self.face,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size < 4 {
            return Err(usage(format!("train.batch_size {} < 4", t.batch_size)));
        }
        if t.input_size < 32 {
            return Err(usage(format!("train.input_size {} < 32", t.input_size)));
        }
        if t.epochs == 0 {
            return Err(usage("train.epochs must be positive"));
        }
        if !(t.lambda >= 0.0) {
            return Err(usage("train.lambda must be non-negative"));
        }
        if !(t.adam.lr > 0.0) {
            return Err(usage("train.lr must be positive"));
        }
        if self.projection.output_size != t.input_size {
            return Err(usage("projection output size must equal train.input_size"));
        }
        self.projection.validate()?;
        self.loss.validate()
    }

    /// Canonical `(key, value)` list in print order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let p = &self.projection;
        let l = &self.loss;
        let bg = p.background;
        vec![
            ("train.batch_size", t.batch_size.to_string()),
            ("train.input_size", t.input_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.lambda", t.lambda.to_string()),
            ("train.lambda_schedule", t.lambda_schedule.as_str().to_string()),
            ("train.variant", t.variant.as_str().to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.precision", t.precision.as_str().to_string()),
            ("model.encoder", self.model.encoder.as_str().to_string()),
            (
                "model.channels",
                self.model.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("model.feature_dim", self.model.feature_dim.to_string()),
            ("model.mapper_init", self.model.mapper_init.as_str().to_string()),
            ("projection.mode", mode_str(p.mode).to_string()),
            ("projection.face", self.face().as_str().to_string()),
            ("projection.face_resolution", p.face_resolution.to_string()),
            ("projection.background", format!("{},{},{}", bg[0], bg[1], bg[2])),
            ("projection.splat_radius", p.splat_radius.to_string()),
            ("loss.mu1", l.mu1.to_string()),
            ("loss.mu2", l.mu2.to_string()),
            ("loss.epsilon", l.epsilon.to_string()),
            ("loss.similarity", l.similarity.as_str().to_string()),
            ("loss.mmd_kernel", l.mmd_kernel.as_str().to_string()),
            ("loss.delta", l.delta.to_string()),
            ("loss.t3_tau", l.t3_tau.to_string()),
        ]
    }

    pub fn to_canonical(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.input_size" => self.set_input_size(num(key, v)?),
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.lr" => self.train.adam.lr = num(key, v)?,
            "train.adam_beta1" => self.train.adam.beta1 = num(key, v)?,
            "train.adam_beta2" => self.train.adam.beta2 = num(key, v)?,
            "train.adam_eps" => self.train.adam.eps = num(key, v)?,
            "train.lambda" => self.train.lambda = num(key, v)?,
            "train.lambda_schedule" => {
                self.train.lambda_schedule = LambdaSchedule::parse(v).ok_or_else(|| usage(format!("unknown lambda schedule `{v}`")))?
            }
            "train.variant" => {
                self.train.variant = LossVariant::parse(v).ok_or_else(|| usage(format!("unknown variant `{v}`")))?
            }
            "train.seed" => self.train.seed = num(key, v)?,
            "train.precision" => {
                self.train.precision = Precision::parse(v).ok_or_else(|| usage(format!("unknown precision `{v}`")))?
            }
            "model.encoder" => {
                self.model.encoder = EncoderVariant::parse(v).ok_or_else(|| usage(format!("unknown encoder `{v}`")))?
            }
            "model.channels" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 9 {
                    return Err(usage(format!("model.channels needs 9 values, got `{v}`")));
                }
                for (slot, p) in self.model.channels.iter_mut().zip(parts) {
                    *slot = num(key, p)?;
                }
            }
            "model.feature_dim" => self.model.feature_dim = num(key, v)?,
            "model.mapper_init" => {
                self.model.mapper_init = MapperInit::parse(v).ok_or_else(|| usage(format!("unknown mapper init `{v}`")))?
            }
            "projection.mode" => {
                self.projection.mode = match v.to_ascii_lowercase().as_str() {
                    "2d2" | "2d-2" | "sixface" => ProjectionMode::SixFace,
                    "2d1" | "2d-1" | "singleface" => ProjectionMode::SingleFace(self.face()),
                    _ => return Err(usage(format!("unknown projection mode `{v}`"))),
                }
            }
            "projection.face" => {
                let f = Face::parse(v).ok_or_else(|| usage(format!("unknown face `{v}`")))?;
                self.face = f;
                if let ProjectionMode::SingleFace(_) = self.projection.mode {
                    self.projection.mode = ProjectionMode::SingleFace(f);
                }
            }
            "projection.face_resolution" => self.projection.face_resolution = num(key, v)?,
            "projection.background" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(usage(format!("projection.background needs r,g,b, got `{v}`")));
                }
                for (slot, p) in self.projection.background.iter_mut().zip(parts) {
                    *slot = num(key, p)?;
                }
            }
            "projection.splat_radius" => self.projection.splat_radius = num(key, v)?,
            "loss.mu1" => self.loss.mu1 = num(key, v)?,
            "loss.mu2" => self.loss.mu2 = num(key, v)?,
            "loss.epsilon" => self.loss.epsilon = num(key, v)?,
            "loss.similarity" => self.loss.similarity = Similarity::parse(v)?,
            "loss.mmd_kernel" => {
                self.loss.mmd_kernel = MmdKernel::parse(v).ok_or_else(|| usage(format!("unknown kernel `{v}`")))?
            }
            "loss.delta" => self.loss.delta = num(key, v)?,
            "loss.t3_tau" => self.loss.t3_tau = num(key, v)?,
            _ => return Err(usage(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses `section.key = value` lines over the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected `section.key = value`, got `{line}`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Digest of everything that determines how a sample becomes a
    /// prediction: model architecture, input size and projection.
    pub fn inference_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if (k.starts_with("model.") && k != "model.mapper_init") || k.starts_with("projection.") || k == "train.input_size" || k == "train.precision" {
                h.update(k.as_bytes());
                h.update(b"=");
                h.update(v.as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().into()
    }

    /// Text used to key the projection cache.
    pub fn projection_key(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| k.starts_with("projection.") || *k == "train.input_size")
            .map(|(k, v)| format!("{k}={v};"))
            .collect()
    }
}
