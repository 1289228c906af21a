//! The four networks: hierarchical encoder G, mapper M, discriminator D and
//! regressor R, all sharing one parameter store.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Linear, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Params, Tensor};

pub const CHANNELS: [usize; 9] = [32, 32, 64, 64, 64, 64, 64, 64, 64];
pub const STRIDES: [usize; 9] = [2, 1, 2, 1, 2, 1, 2, 1, 2];
pub const HSCNN_TAPS: [usize; 4] = [3, 5, 7, 9];
pub const FEATURE_DIM: usize = 128;
pub const HEAD_WIDTH: usize = 64;
pub const MIN_INPUT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderVariant {
    /// Fused pooled features of blocks 3, 5, 7 and 9.
    Hscnn,
    /// Pooled features of block 9 only.
    ScnnSingleTap,
}

impl EncoderVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderVariant::Hscnn => "hscnn",
            EncoderVariant::ScnnSingleTap => "scnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hscnn" => Some(EncoderVariant::Hscnn),
            "scnn" | "scnn_single_tap" => Some(EncoderVariant::ScnnSingleTap),
            _ => None,
        }
    }

    /// 1-based indices of the tapped blocks.
    pub fn taps(self) -> &'static [usize] {
        match self {
            EncoderVariant::Hscnn => &HSCNN_TAPS,
            EncoderVariant::ScnnSingleTap => &HSCNN_TAPS[3..],
        }
    }
}

/// Starting weights of the mapper M.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapperInit {
    Glorot,
    /// Identity weights and zero biases, so `M(G(x)) = G(x)` before training.
    Identity,
}

impl MapperInit {
    pub fn as_str(self) -> &'static str {
        match self {
            MapperInit::Glorot => "glorot",
            MapperInit::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [MapperInit::Glorot, MapperInit::Identity].into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderVariant,
    pub channels: [usize; 9],
    pub feature_dim: usize,
    pub mapper_init: MapperInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderVariant::Hscnn,
            channels: CHANNELS,
            feature_dim: FEATURE_DIM,
            mapper_init: MapperInit::Glorot,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

/// Encoder G.
#[derive(Debug, Clone)]
pub struct Hscnn {
    pub blocks: Vec<ConvBlock>,
    pub taps: Vec<usize>,
    pub fuse: [Conv2d; 2],
    pub feature_dim: usize,
}

impl Hscnn {
    pub fn new<T: Scalar>(params: &mut Params<T>, config: &ModelConfig, seed: u64) -> Self {
        let mut blocks = Vec::with_capacity(9);
        let mut in_c = 3;
        for (i, (&c, &s)) in config.channels.iter().zip(&STRIDES).enumerate() {
            let name = format!("g.block{}", i + 1);
            blocks.push(ConvBlock {
                conv: Conv2d::new(params, &format!("{name}.conv"), in_c, c, 3, s, 1, seed),
                bn: BatchNorm::new(params, &format!("{name}.bn"), c),
            });
            in_c = c;
        }
        let taps = config.encoder.taps().to_vec();
        let fused: usize = taps.iter().map(|&t| config.channels[t - 1]).sum();
        let f = config.feature_dim;
        let fuse = [
            Conv2d::new(params, "g.fuse1", fused, f, 1, 1, 0, seed),
            Conv2d::new(params, "g.fuse2", f, f, 1, 1, 0, seed),
        ];
        Hscnn {
            blocks,
            taps,
            fuse,
            feature_dim: f,
        }
    }

    /// `(N, 3, S, S) -> (N, F)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(format!("encoder expects (N, 3, S, S), got {s:?}")));
        }
        if s[2] < MIN_INPUT || s[3] < MIN_INPUT {
            return Err(Error::shape(format!(
                "encoder input {}x{} is below the {MIN_INPUT}x{MIN_INPUT} minimum",
                s[2], s[3]
            )));
        }
        let n = s[0];
        let mut h = x;
        let mut pooled = Vec::with_capacity(self.taps.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let c = b.conv.forward(g, p, h)?;
            let c = b.bn.forward(g, p, c, mode)?;
            h = g.relu(c);
            if self.taps.contains(&(i + 1)) {
                pooled.push(g.global_avg_pool(h)?);
            }
        }
        let cat = if pooled.len() == 1 { pooled[0] } else { g.concat(&pooled)? };
        let width = g.shape(cat)[1];
        let mut z = g.reshape(cat, &[n, width, 1, 1])?;
        for conv in &self.fuse {
            let c = conv.forward(g, p, z)?;
            z = g.relu(c);
        }
        g.reshape(z, &[n, self.feature_dim])
    }
}

/// Two affine layers, each followed by a rectifier unless `last_linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: [Linear; 2],
    pub last_relu: bool,
}

impl Mlp {
    fn new<T: Scalar>(params: &mut Params<T>, name: &str, dims: [usize; 3], last_relu: bool, seed: u64) -> Self {
        Mlp {
            layers: [
                Linear::new(params, &format!("{name}.fc1"), dims[0], dims[1], seed),
                Linear::new(params, &format!("{name}.fc2"), dims[1], dims[2], seed),
            ],
            last_relu,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Params<T>, x: Var) -> Result<Var> {
        let h = self.layers[0].forward(g, p, x)?;
        let h = g.relu(h);
        let y = self.layers[1].forward(g, p, h)?;
        Ok(if self.last_relu { g.relu(y) } else { y })
    }
}

/// G, M, D and R with their parameters.
#[derive(Debug, Clone)]
pub struct Networks<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub encoder: Hscnn,
    pub mapper: Mlp,
    pub discriminator: Mlp,
    pub regressor: Mlp,
}

/// Outputs of one pass through the pipeline, with G's output shared by
/// both regression paths.
#[derive(Debug, Clone, Copy)]
pub struct PipelineVars {
    pub g_feats: Var,
    pub m_feats: Var,
    /// `R(M(G(x)))` as `(N, 1)`.
    pub scores: Var,
}

impl<T: Scalar> Networks<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut params = Params::new();
        let f = config.feature_dim;
        let encoder = Hscnn::new(&mut params, &config, seed);
        let mapper = Mlp::new(&mut params, "m", [f, f, f], true, seed);
        if config.mapper_init == MapperInit::Identity {
            for layer in &mapper.layers {
                let w = params.get_mut(layer.weight).data_mut();
                w.fill(T::zero());
                for i in 0..f {
                    w[i * f + i] = T::one();
                }
            }
        }
        let discriminator = Mlp::new(&mut params, "d", [f, HEAD_WIDTH, 1], false, seed);
        let regressor = Mlp::new(&mut params, "r", [f, HEAD_WIDTH, 1], false, seed);
        Networks {
            config,
            params,
            encoder,
            mapper,
            discriminator,
            regressor,
        }
    }

    pub fn encode(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.encoder.forward(g, &self.params, x, mode)
    }

    pub fn map(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        self.mapper.forward(g, &self.params, f)
    }

    /// Probability, `(N, 1)`, that features came from the source domain.
    pub fn discriminate(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        let logit = self.discriminator.forward(g, &self.params, f)?;
        Ok(g.sigmoid(logit))
    }

    pub fn regress(&self, g: &mut Graph<T>, f: Var) -> Result<Var> {
        self.regressor.forward(g, &self.params, f)
    }

    /// Features and `(N, 1)` scores, through the mapper or straight from G.
    pub fn forward_pipeline(&self, g: &mut Graph<T>, x: Var, use_mapper: bool, mode: Mode) -> Result<(Var, Var)> {
        let gf = self.encode(g, x, mode)?;
        let f = if use_mapper { self.map(g, gf)? } else { gf };
        let s = self.regress(g, f)?;
        Ok((f, s))
    }

    pub fn forward_both(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<PipelineVars> {
        let g_feats = self.encode(g, x, mode)?;
        let m_feats = self.map(g, g_feats)?;
        let scores = self.regress(g, m_feats)?;
        Ok(PipelineVars { g_feats, m_feats, scores })
    }

    /// Frozen `R(M(G(x)))` for an `(N, 3, S, S)` batch.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::inference();
        let x = g.input(images);
        let (_, s) = self.forward_pipeline(&mut g, x, true, Mode::Eval)?;
        Ok(g.value(s).to_vec())
    }

    /// Frozen `R(f)` for precomputed features.
    pub fn regress_values(&self, feats: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::inference();
        let x = g.input(feats);
        let s = self.regress(&mut g, x)?;
        Ok(g.value(s).to_vec())
    }
}
