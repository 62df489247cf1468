use crate::error::{Result, SeftError};
use crate::linalg::{self, softmax, softmax_cross_entropy};
use crate::semantics::BaseSide;

use super::forward::{gelu_grad, BatchForward, BlockCache, NormCache, SequenceForward};
use super::params::{Block, BlockTensor, ModelParams, ParamId};
use super::{FreezeDecision, Gradients, Objective, StepOutput};

type BlockSlots = [Option<Vec<f64>>; 12];

/// Zero-initialized gradient buffers for exactly the trainable tensors.
struct GradAccum {
    embedding: Option<Vec<f64>>,
    blocks: Vec<Option<BlockSlots>>,
    final_gain: Option<Vec<f64>>,
    final_bias: Option<Vec<f64>>,
    head: Option<Vec<f64>>,
}

impl GradAccum {
    fn new(params: &ModelParams, freeze: FreezeDecision, uses_head: bool) -> Self {
        let zeros = |id: ParamId| {
            freeze
                .is_trainable(id, uses_head)
                .then(|| vec![0.0; params.tensor(id).len()])
        };
        let blocks = (0..params.config.layers)
            .map(|l| {
                freeze
                    .block_trainable(l)
                    .then(|| BlockTensor::ALL.map(|t| zeros(ParamId::Block(l, t))))
            })
            .collect();
        Self {
            embedding: zeros(ParamId::Embedding),
            blocks,
            final_gain: zeros(ParamId::FinalNormGain),
            final_bias: zeros(ParamId::FinalNormBias),
            head: zeros(ParamId::Head),
        }
    }

    fn into_gradients(self, scale: f64) -> Gradients {
        let mut out = Gradients::new();
        let mut put = |id: ParamId, g: Option<Vec<f64>>| {
            if let Some(mut g) = g {
                g.iter_mut().for_each(|v| *v *= scale);
                out.insert(id, g);
            }
        };
        put(ParamId::Embedding, self.embedding);
        for (l, slots) in self.blocks.into_iter().enumerate() {
            if let Some(slots) = slots {
                for (t, g) in BlockTensor::ALL.into_iter().zip(slots) {
                    put(ParamId::Block(l, t), g);
                }
            }
        }
        put(ParamId::FinalNormGain, self.final_gain);
        put(ParamId::FinalNormBias, self.final_bias);
        put(ParamId::Head, self.head);
        out
    }
}

/// `out (inner x cols) += a^T (inner x rows) · dy (rows x cols)`.
fn acc_at_b(out: &mut [f64], a: &[f64], rows: usize, inner: usize, dy: &[f64], cols: usize) {
    for r in 0..rows {
        let dy_row = &dy[r * cols..(r + 1) * cols];
        if dy_row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (i, &x) in a[r * inner..(r + 1) * inner].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &g) in out[i * cols..(i + 1) * cols].iter_mut().zip(dy_row) {
                *o += x * g;
            }
        }
    }
}

/// `dy (rows x cols) · w^T`, with `w` stored `inner x cols`.
fn mul_bt(dy: &[f64], rows: usize, cols: usize, w: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * inner];
    for r in 0..rows {
        let dy_row = &dy[r * cols..(r + 1) * cols];
        if dy_row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for i in 0..inner {
            out[r * inner + i] = linalg::dot(dy_row, &w[i * cols..(i + 1) * cols]);
        }
    }
    out
}

fn acc_colsum(out: &mut [f64], dy: &[f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for (o, &g) in out.iter_mut().zip(&dy[r * cols..(r + 1) * cols]) {
            *o += g;
        }
    }
}

fn norm_backward(
    dy: &[f64],
    cache: &NormCache,
    gain: &[f64],
    rows: usize,
    dim: usize,
    dgain: Option<&mut Vec<f64>>,
    dbias: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    if let Some(dg) = dgain {
        for r in 0..rows {
            for i in 0..dim {
                dg[i] += dy[r * dim + i] * cache.xhat[r * dim + i];
            }
        }
    }
    if let Some(db) = dbias {
        acc_colsum(db, dy, rows, dim);
    }
    let mut dx = vec![0.0; rows * dim];
    let n = dim as f64;
    for r in 0..rows {
        let xhat = &cache.xhat[r * dim..(r + 1) * dim];
        let dxhat: Vec<f64> = (0..dim).map(|i| dy[r * dim + i] * gain[i]).collect();
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = linalg::dot(&dxhat, xhat) / n;
        for i in 0..dim {
            dx[r * dim + i] = cache.rstd[r] * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
    dx
}

fn slot<'a>(slots: &'a mut Option<&mut BlockSlots>, t: BlockTensor) -> Option<&'a mut Vec<f64>> {
    slots.as_deref_mut().and_then(|s| s[t.index()].as_mut())
}

fn slot_pair<'a>(
    slots: &'a mut Option<&mut BlockSlots>,
    a: BlockTensor,
    b: BlockTensor,
) -> (Option<&'a mut Vec<f64>>, Option<&'a mut Vec<f64>>) {
    match slots.as_deref_mut() {
        None => (None, None),
        Some(s) => {
            let [x, y] = s
                .get_disjoint_mut([a.index(), b.index()])
                .expect("distinct slot indices");
            (x.as_mut(), y.as_mut())
        }
    }
}

/// Backpropagates `dy` through one block. Parameter gradients accumulate
/// into `slots` when the block is trainable; the input gradient is returned
/// only when `need_input` is set.
#[allow(clippy::too_many_arguments)]
fn block_backward(
    block: &Block,
    cache: &BlockCache,
    dy: &[f64],
    seq: usize,
    dim: usize,
    heads: usize,
    mut slots: Option<&mut BlockSlots>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let ff = 4 * dim;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let w = |t: BlockTensor| block.tensor(t);
    // MLP sublayer: out = h1 + gelu(c W1 + b1) W2 + b2
    if let Some(g) = slot(&mut slots, BlockTensor::MlpOut) {
        acc_at_b(g, &cache.g, seq, ff, dy, dim);
    }
    if let Some(g) = slot(&mut slots, BlockTensor::MlpOutBias) {
        acc_colsum(g, dy, seq, dim);
    }
    let mut du = mul_bt(dy, seq, dim, w(BlockTensor::MlpOut), ff);
    for (d, &u) in du.iter_mut().zip(&cache.u) {
        *d *= gelu_grad(u);
    }
    if let Some(g) = slot(&mut slots, BlockTensor::MlpIn) {
        acc_at_b(g, &cache.c, seq, dim, &du, ff);
    }
    if let Some(g) = slot(&mut slots, BlockTensor::MlpInBias) {
        acc_colsum(g, &du, seq, ff);
    }
    let dc = mul_bt(&du, seq, ff, w(BlockTensor::MlpIn), dim);
    let (mlp_gain, mlp_bias) = slot_pair(
        &mut slots,
        BlockTensor::MlpNormGain,
        BlockTensor::MlpNormBias,
    );
    let dh1_norm = norm_backward(
        &dc,
        &cache.norm2,
        w(BlockTensor::MlpNormGain),
        seq,
        dim,
        mlp_gain,
        mlp_bias,
    );
    let dh1: Vec<f64> = dy.iter().zip(&dh1_norm).map(|(a, b)| a + b).collect();

    // attention sublayer: h1 = x + softmax(q k^T / sqrt(dh)) v Wo
    if let Some(g) = slot(&mut slots, BlockTensor::AttnOut) {
        acc_at_b(g, &cache.ctx, seq, dim, &dh1, dim);
    }
    let dctx = mul_bt(&dh1, seq, dim, w(BlockTensor::AttnOut), dim);
    let mut dq = vec![0.0; seq * dim];
    let mut dk = vec![0.0; seq * dim];
    let mut dv = vec![0.0; seq * dim];
    let mut dp = vec![0.0; seq];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let dci = &dctx[i * dim + off..i * dim + off + dh];
            if dci.iter().all(|&v| v == 0.0) {
                continue;
            }
            let p = &cache.probs[(h * seq + i) * seq..(h * seq + i + 1) * seq];
            let mut weighted = 0.0;
            for j in 0..=i {
                let vj = &cache.v[j * dim + off..j * dim + off + dh];
                dp[j] = linalg::dot(dci, vj);
                weighted += p[j] * dp[j];
                for (o, &g) in dv[j * dim + off..j * dim + off + dh].iter_mut().zip(dci) {
                    *o += p[j] * g;
                }
            }
            for j in 0..=i {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * dim + off + c] += ds * cache.k[j * dim + off + c];
                    dk[j * dim + off + c] += ds * cache.q[i * dim + off + c];
                }
            }
        }
    }
    for (t, d) in [
        (BlockTensor::Query, &dq),
        (BlockTensor::Key, &dk),
        (BlockTensor::Value, &dv),
    ] {
        if let Some(g) = slot(&mut slots, t) {
            acc_at_b(g, &cache.a, seq, dim, d, dim);
        }
    }
    let trainable = slots.is_some();
    if !need_input && !trainable {
        return None;
    }
    let mut da = mul_bt(&dq, seq, dim, w(BlockTensor::Query), dim);
    for (t, d) in [(BlockTensor::Key, &dk), (BlockTensor::Value, &dv)] {
        for (o, x) in da.iter_mut().zip(mul_bt(d, seq, dim, w(t), dim)) {
            *o += x;
        }
    }
    let (attn_gain, attn_bias) = slot_pair(
        &mut slots,
        BlockTensor::AttnNormGain,
        BlockTensor::AttnNormBias,
    );
    let dx_norm = norm_backward(
        &da,
        &cache.norm1,
        w(BlockTensor::AttnNormGain),
        seq,
        dim,
        attn_gain,
        attn_bias,
    );
    need_input.then(|| dh1.iter().zip(&dx_norm).map(|(a, b)| a + b).collect())
}

fn cosine_grad(r: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let nr = linalg::norm(r);
    let nb = linalg::norm(b);
    let cos = linalg::dot(r, b) / (nr * nb);
    let grad = r
        .iter()
        .zip(b)
        .map(|(&ri, &bi)| bi / (nr * nb) - cos * ri / (nr * nr))
        .collect();
    (cos, grad)
}

/// Loss of one item and its gradient with respect to the last-layer
/// latent of the medium token. Head and final-norm gradients accumulate
/// into `acc` for the standard loss.
fn output_backward(
    params: &ModelParams,
    item: &SequenceForward,
    label: usize,
    objective: Objective<'_>,
    acc: &mut GradAccum,
) -> Result<(f64, Vec<f64>)> {
    let cfg = params.config;
    let (dim, vocab) = (cfg.dim, cfg.vocab);
    let r = item.latent(cfg.layers);
    match objective {
        Objective::StandardCe => {
            let loss = softmax_cross_entropy(&item.logits, label)?;
            let mut dlogits = softmax(&item.logits);
            dlogits[label] -= 1.0;
            if let Some(g) = acc.head.as_mut() {
                acc_at_b(g, &item.final_out, 1, dim, &dlogits, vocab);
            }
            let dz = mul_bt(&dlogits, 1, vocab, &params.head, dim);
            let dr = norm_backward(
                &dz,
                &item.final_norm,
                &params.final_norm_gain,
                1,
                dim,
                acc.final_gain.as_mut(),
                acc.final_bias.as_mut(),
            );
            Ok((loss, dr))
        }
        Objective::SemanticCe(bases) => {
            let logits = bases.similarity_logits(BaseSide::Output, r)?;
            let loss = softmax_cross_entropy(&logits, label)?;
            let mut dlogits = softmax(&logits);
            dlogits[label] -= 1.0;
            let mut dr = vec![0.0; dim];
            for (c, &g) in dlogits.iter().enumerate() {
                let (_, dcos) = cosine_grad(r, bases.output_base(c)?);
                for (o, x) in dr.iter_mut().zip(dcos) {
                    *o += g * x;
                }
            }
            Ok((loss, dr))
        }
        Objective::SemanticCos(bases) => {
            let loss = bases.semantic_cos_loss(r, label)?;
            let (_, dcos) = cosine_grad(r, bases.output_base(label)?);
            Ok((loss, dcos.into_iter().map(|x| -x).collect()))
        }
    }
}

impl BatchForward {
    /// Mean loss over the batch and gradients of the trainable parameters.
    /// Backward traversal stops at block `freeze.eof` unless the embedding
    /// is trainable.
    pub fn backward(
        &self,
        params: &ModelParams,
        objective: Objective<'_>,
        freeze: FreezeDecision,
    ) -> Result<StepOutput> {
        let cfg = params.config;
        freeze.validate(cfg.layers)?;
        let mut acc = GradAccum::new(params, freeze, objective.uses_head());
        let mut total = 0.0;
        for (item, &label) in self.items.iter().zip(&self.labels) {
            let (loss, dr) = output_backward(params, item, label, objective, &mut acc)?;
            if !loss.is_finite() {
                let layer = (0..=cfg.layers)
                    .find(|&k| item.latent(k).iter().any(|v| !v.is_finite()))
                    .unwrap_or(cfg.layers);
                return Err(SeftError::Divergence {
                    layer: Some(layer),
                    detail: format!("non-finite loss {loss}"),
                });
            }
            total += loss;

            let seq = item.seq_len();
            let mut dx = vec![0.0; seq * cfg.dim];
            dx[(seq - 1) * cfg.dim..].copy_from_slice(&dr);
            for l in (freeze.eof..cfg.layers).rev() {
                let need_input = l > freeze.eof || acc.embedding.is_some();
                let slots = acc.blocks[l].as_mut();
                match block_backward(
                    &params.blocks[l],
                    &item.blocks[l],
                    &dx,
                    seq,
                    cfg.dim,
                    cfg.heads,
                    slots,
                    need_input,
                ) {
                    Some(next) => dx = next,
                    None => break,
                }
            }
            if let Some(g) = acc.embedding.as_mut() {
                for (t, &tok) in item.tokens.iter().enumerate() {
                    for i in 0..cfg.dim {
                        g[tok * cfg.dim + i] += dx[t * cfg.dim + i];
                    }
                }
            }
        }
        let n = self.items.len() as f64;
        Ok(StepOutput {
            loss: total / n,
            gradients: acc.into_gradients(1.0 / n),
            cost_units: freeze.cost_units(cfg.layers),
        })
    }
}
