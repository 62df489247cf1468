//! Small pre-norm causal decoder with exact, freeze-aware backpropagation.
//!
//! There is no positional encoding: attention is causal, and the synthetic
//! tasks are order-free, so the first latent of the medium token is exactly
//! its embedding row.

mod backward;
mod checkpoint;
mod forward;
mod optim;
mod params;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::linalg::Vector;
use crate::semantics::SemanticBases;

pub use checkpoint::{load_checkpoint, params_from_trace, save_checkpoint, to_trace_file};
pub use forward::{forward_with_latents, BatchForward, SequenceForward};
pub use optim::{adam_step, Adam, AdamConfig, MomentSlot};
pub use params::{Block, BlockTensor, ModelConfig, ModelParams, ModuleMask, ParamId};

/// One training or evaluation example: a token sequence and the next-token label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    StandardCe,
    SemanticCe,
    SemanticCos,
}

/// Loss to optimize. The semantic losses read the last-layer latent and
/// compare it with fixed output-side bases.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    StandardCe,
    SemanticCe(&'a SemanticBases),
    SemanticCos(&'a SemanticBases),
}

impl<'a> Objective<'a> {
    pub fn new(kind: LossKind, bases: Option<&'a SemanticBases>) -> Result<Self> {
        match (kind, bases) {
            (LossKind::StandardCe, _) => Ok(Objective::StandardCe),
            (LossKind::SemanticCe, Some(b)) => Ok(Objective::SemanticCe(b)),
            (LossKind::SemanticCos, Some(b)) => Ok(Objective::SemanticCos(b)),
            (_, None) => Err(SeftError::invalid("semantic losses need semantic bases")),
        }
    }

    /// Whether the LM head and final norm take part in the loss.
    pub fn uses_head(&self) -> bool {
        matches!(self, Objective::StandardCe)
    }
}

/// Whether the trainable blocks form a suffix starting at `eof`, or just block `eof`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    Suffix,
    SingleBlock,
}

/// Freeze boundary for one training step: blocks `0..eof` are frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FreezeDecision {
    pub eof: usize,
    pub module_mask: ModuleMask,
    pub scope: TrainScope,
}

impl FreezeDecision {
    pub fn suffix(eof: usize, module_mask: ModuleMask) -> Self {
        Self {
            eof,
            module_mask,
            scope: TrainScope::Suffix,
        }
    }

    pub fn full() -> Self {
        Self::suffix(0, ModuleMask::Both)
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.eof >= layers {
            return Err(SeftError::invalid(format!(
                "eof {} must be below the layer count {layers}",
                self.eof
            )));
        }
        Ok(())
    }

    /// Backward traversal depth as a fraction of a full pass: `(m - eof) / m`.
    pub fn cost_units(&self, layers: usize) -> f64 {
        (layers - self.eof) as f64 / layers as f64
    }

    pub fn block_trainable(&self, layer: usize) -> bool {
        match self.scope {
            TrainScope::Suffix => layer >= self.eof,
            TrainScope::SingleBlock => layer == self.eof,
        }
    }

    pub fn embedding_trainable(&self) -> bool {
        self.scope == TrainScope::Suffix && self.eof == 0
    }

    pub fn is_trainable(&self, id: ParamId, uses_head: bool) -> bool {
        match id {
            ParamId::Embedding => self.embedding_trainable(),
            ParamId::Block(l, t) => self.block_trainable(l) && t.allowed_by(self.module_mask),
            ParamId::FinalNormGain | ParamId::FinalNormBias | ParamId::Head => uses_head,
        }
    }
}

/// Gradients for the trainable subset of parameters only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    tensors: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Vec<f64>) {
        self.tensors.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.tensors.get(&id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.tensors.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.tensors.iter().map(|(&id, g)| (id, g.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.tensors.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub gradients: Gradients,
    pub cost_units: f64,
}

/// Forward the batch, then backpropagate only as deep as `freeze` allows.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[Example],
    objective: Objective<'_>,
    freeze: FreezeDecision,
) -> Result<StepOutput> {
    let fwd = BatchForward::run(params, batch)?;
    fwd.backward(params, objective, freeze)
}

/// Scores used for greedy next-token prediction. The LM head decides for
/// the standard loss; similarity logits against the output bases decide otherwise.
pub fn prediction_scores(
    params: &ModelParams,
    tokens: &[usize],
    objective: Objective<'_>,
) -> Result<Vector> {
    let fwd = SequenceForward::run(params, tokens)?;
    match objective {
        Objective::StandardCe => Vector::new(fwd.logits().to_vec()),
        Objective::SemanticCe(b) | Objective::SemanticCos(b) => b.similarity_logits(
            crate::semantics::BaseSide::Output,
            fwd.last_latent(params.config.layers),
        ),
    }
}

pub fn predict(params: &ModelParams, tokens: &[usize], objective: Objective<'_>) -> Result<usize> {
    Ok(argmax(&prediction_scores(params, tokens, objective)?))
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
