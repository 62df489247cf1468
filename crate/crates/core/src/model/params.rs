use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn ff_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(SeftError::invalid("model needs at least 2 layers"));
        }
        if self.vocab < 2 {
            return Err(SeftError::invalid("vocabulary needs at least 2 labels"));
        }
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(SeftError::invalid(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.context_len == 0 {
            return Err(SeftError::invalid("context_len must be positive"));
        }
        Ok(())
    }
}

/// Which sublayer of a block a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleMask {
    /// Self-attention projections only.
    Sam,
    /// Fully-connected sublayer only.
    Fcm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockTensor {
    AttnNormGain,
    AttnNormBias,
    Query,
    Key,
    Value,
    AttnOut,
    MlpNormGain,
    MlpNormBias,
    MlpIn,
    MlpInBias,
    MlpOut,
    MlpOutBias,
}

impl BlockTensor {
    pub const ALL: [BlockTensor; 12] = [
        BlockTensor::AttnNormGain,
        BlockTensor::AttnNormBias,
        BlockTensor::Query,
        BlockTensor::Key,
        BlockTensor::Value,
        BlockTensor::AttnOut,
        BlockTensor::MlpNormGain,
        BlockTensor::MlpNormBias,
        BlockTensor::MlpIn,
        BlockTensor::MlpInBias,
        BlockTensor::MlpOut,
        BlockTensor::MlpOutBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockTensor::AttnNormGain => "attn_norm.gain",
            BlockTensor::AttnNormBias => "attn_norm.bias",
            BlockTensor::Query => "attn.query",
            BlockTensor::Key => "attn.key",
            BlockTensor::Value => "attn.value",
            BlockTensor::AttnOut => "attn.out",
            BlockTensor::MlpNormGain => "mlp_norm.gain",
            BlockTensor::MlpNormBias => "mlp_norm.bias",
            BlockTensor::MlpIn => "mlp.in",
            BlockTensor::MlpInBias => "mlp.in_bias",
            BlockTensor::MlpOut => "mlp.out",
            BlockTensor::MlpOutBias => "mlp.out_bias",
        }
    }

    /// Whether `mask` lets this tensor train. Norm parameters follow the block.
    pub fn allowed_by(self, mask: ModuleMask) -> bool {
        use BlockTensor::*;
        match self {
            AttnNormGain | AttnNormBias | MlpNormGain | MlpNormBias => true,
            Query | Key | Value | AttnOut => mask != ModuleMask::Fcm,
            MlpIn | MlpInBias | MlpOut | MlpOutBias => mask != ModuleMask::Sam,
        }
    }

    fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let (d, ff) = (cfg.dim, cfg.ff_dim());
        use BlockTensor::*;
        match self {
            AttnNormGain | AttnNormBias | MlpNormGain | MlpNormBias | MlpOutBias => (1, d),
            Query | Key | Value | AttnOut => (d, d),
            MlpIn => (d, ff),
            MlpInBias => (1, ff),
            MlpOut => (ff, d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Embedding,
    Block(usize, BlockTensor),
    FinalNormGain,
    FinalNormBias,
    Head,
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::Embedding => "embedding".into(),
            ParamId::Block(l, t) => format!("blocks.{l}.{}", t.name()),
            ParamId::FinalNormGain => "final_norm.gain".into(),
            ParamId::FinalNormBias => "final_norm.bias".into(),
            ParamId::Head => "head".into(),
        }
    }

    pub fn parse(name: &str) -> Option<ParamId> {
        match name {
            "embedding" => return Some(ParamId::Embedding),
            "final_norm.gain" => return Some(ParamId::FinalNormGain),
            "final_norm.bias" => return Some(ParamId::FinalNormBias),
            "head" => return Some(ParamId::Head),
            _ => {}
        }
        let rest = name.strip_prefix("blocks.")?;
        let (layer, tensor) = rest.split_once('.')?;
        let layer = layer.parse().ok()?;
        let tensor = BlockTensor::ALL.into_iter().find(|t| t.name() == tensor)?;
        Some(ParamId::Block(layer, tensor))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub(crate) tensors: [Vec<f64>; 12],
}

impl Block {
    pub fn tensor(&self, t: BlockTensor) -> &[f64] {
        &self.tensors[t.index()]
    }
}

/// Weights of the toy decoder.
///
/// Matrices are row-major and applied on the right (`x · W`): the embedding
/// is `V x d`, attention projections `d x d`, the MLP `d x 4d` then `4d x d`,
/// and the LM head `d x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub(crate) config: ModelConfig,
    pub(crate) embedding: Vec<f64>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm_gain: Vec<f64>,
    pub(crate) final_norm_bias: Vec<f64>,
    pub(crate) head: Vec<f64>,
}

impl ModelParams {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim as f64;
        let ff = config.ff_dim() as f64;
        let residual_scale = 1.0 / (2.0 * config.layers as f64).sqrt();

        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };

        let embedding = draw(config.vocab * config.dim, 1.0);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let tensors = BlockTensor::ALL.map(|t| {
                let (r, c) = t.shape(&config);
                match t {
                    BlockTensor::AttnNormGain | BlockTensor::MlpNormGain => vec![1.0; r * c],
                    BlockTensor::AttnNormBias
                    | BlockTensor::MlpNormBias
                    | BlockTensor::MlpInBias
                    | BlockTensor::MlpOutBias => vec![0.0; r * c],
                    BlockTensor::Query
                    | BlockTensor::Key
                    | BlockTensor::Value
                    | BlockTensor::MlpIn => draw(r * c, 1.0 / d.sqrt()),
                    BlockTensor::AttnOut => draw(r * c, residual_scale / d.sqrt()),
                    BlockTensor::MlpOut => draw(r * c, residual_scale / ff.sqrt()),
                }
            });
            blocks.push(Block { tensors });
        }
        let head = draw(config.dim * config.vocab, 1.0 / d.sqrt());
        Ok(Self {
            config,
            embedding,
            blocks,
            final_norm_gain: vec![1.0; config.dim],
            final_norm_bias: vec![0.0; config.dim],
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn block(&self, layer: usize) -> &Block {
        &self.blocks[layer]
    }

    /// All parameter ids in canonical order.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::Embedding];
        for l in 0..self.config.layers {
            ids.extend(BlockTensor::ALL.iter().map(|&t| ParamId::Block(l, t)));
        }
        ids.extend([
            ParamId::FinalNormGain,
            ParamId::FinalNormBias,
            ParamId::Head,
        ]);
        ids
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let c = &self.config;
        match id {
            ParamId::Embedding => (c.vocab, c.dim),
            ParamId::Block(_, t) => t.shape(c),
            ParamId::FinalNormGain | ParamId::FinalNormBias => (1, c.dim),
            ParamId::Head => (c.dim, c.vocab),
        }
    }

    pub fn tensor(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Embedding => &self.embedding,
            ParamId::Block(l, t) => &self.blocks[l].tensors[t.index()],
            ParamId::FinalNormGain => &self.final_norm_gain,
            ParamId::FinalNormBias => &self.final_norm_bias,
            ParamId::Head => &self.head,
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Embedding => &mut self.embedding,
            ParamId::Block(l, t) => &mut self.blocks[l].tensors[t.index()],
            ParamId::FinalNormGain => &mut self.final_norm_gain,
            ParamId::FinalNormBias => &mut self.final_norm_bias,
            ParamId::Head => &mut self.head,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.ids().into_iter().map(|id| self.tensor(id).len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter, in canonical order.
    pub fn checksum(&self) -> u64 {
        checksum_ids(self, &self.ids())
    }

    /// Checksum restricted to one block.
    pub fn block_checksum(&self, layer: usize) -> u64 {
        let ids: Vec<_> = BlockTensor::ALL
            .iter()
            .map(|&t| ParamId::Block(layer, t))
            .collect();
        checksum_ids(self, &ids)
    }

    pub fn embedding_matrix(&self) -> Matrix {
        Matrix::new(self.config.vocab, self.config.dim, self.embedding.clone())
            .expect("embedding shape is fixed by config")
    }

    pub fn head_matrix(&self) -> Matrix {
        Matrix::new(self.config.dim, self.config.vocab, self.head.clone())
            .expect("head shape is fixed by config")
    }
}

fn checksum_ids(params: &ModelParams, ids: &[ParamId]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &id in ids {
        for v in params.tensor(id) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
