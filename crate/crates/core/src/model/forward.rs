use crate::error::{Result, SeftError};
use crate::linalg::Vector;
use crate::semantics::TransitionTrace;

use super::params::{Block, BlockTensor, ModelParams};
use super::Example;

pub(super) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `a (rows x inner) · w (inner x cols)`.
pub(super) fn matmul(a: &[f64], rows: usize, inner: usize, w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for (k, &x) in a[r * inner..(r + 1) * inner].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &wv) in out_row.iter_mut().zip(&w[k * cols..(k + 1) * cols]) {
                *o += x * wv;
            }
        }
    }
    out
}

pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(super) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone)]
pub(super) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Row-wise layer norm over `rows` rows of width `dim`.
pub(super) fn layer_norm(
    x: &[f64],
    rows: usize,
    dim: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * dim];
    let mut xhat = vec![0.0; rows * dim];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for i in 0..dim {
            let h = (row[i] - mean) * s;
            xhat[r * dim + i] = h;
            y[r * dim + i] = gain[i] * h + bias[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

#[derive(Debug, Clone)]
pub(super) struct BlockCache {
    pub norm1: NormCache,
    /// attention-norm output
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// heads x T x T, zero above the diagonal
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
    pub norm2: NormCache,
    /// mlp-norm output
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

fn block_forward(
    block: &Block,
    x: &[f64],
    seq: usize,
    dim: usize,
    heads: usize,
) -> (Vec<f64>, BlockCache) {
    let t = |bt: BlockTensor| block.tensor(bt);
    let ff = 4 * dim;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, norm1) = layer_norm(
        x,
        seq,
        dim,
        t(BlockTensor::AttnNormGain),
        t(BlockTensor::AttnNormBias),
    );
    let q = matmul(&a, seq, dim, t(BlockTensor::Query), dim);
    let k = matmul(&a, seq, dim, t(BlockTensor::Key), dim);
    let v = matmul(&a, seq, dim, t(BlockTensor::Value), dim);

    let mut probs = vec![0.0; heads * seq * seq];
    let mut ctx = vec![0.0; seq * dim];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..seq {
            let p = &mut probs[(h * seq + i) * seq..(h * seq + i + 1) * seq];
            let qi = &q[i * dim + off..i * dim + off + dh];
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k[j * dim + off..j * dim + off + dh];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                p[j] = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for pj in p.iter_mut().take(i + 1) {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            for j in 0..=i {
                p[j] /= sum;
                let vj = &v[j * dim + off..j * dim + off + dh];
                let out = &mut ctx[i * dim + off..i * dim + off + dh];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += p[j] * vv;
                }
            }
        }
    }
    let attn = matmul(&ctx, seq, dim, t(BlockTensor::AttnOut), dim);
    let h1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();

    let (c, norm2) = layer_norm(
        &h1,
        seq,
        dim,
        t(BlockTensor::MlpNormGain),
        t(BlockTensor::MlpNormBias),
    );
    let mut u = matmul(&c, seq, dim, t(BlockTensor::MlpIn), ff);
    let b1 = t(BlockTensor::MlpInBias);
    for r in 0..seq {
        for (x, b) in u[r * ff..(r + 1) * ff].iter_mut().zip(b1) {
            *x += b;
        }
    }
    let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
    let mlp = matmul(&g, seq, ff, t(BlockTensor::MlpOut), dim);
    let b2 = t(BlockTensor::MlpOutBias);
    let mut out = h1;
    for r in 0..seq {
        for i in 0..dim {
            out[r * dim + i] += mlp[r * dim + i] + b2[i];
        }
    }
    (
        out,
        BlockCache {
            norm1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            norm2,
            c,
            u,
            g,
        },
    )
}

/// Forward pass over one sequence with every intermediate kept for backprop.
#[derive(Debug, Clone)]
pub struct SequenceForward {
    pub(super) tokens: Vec<usize>,
    /// residual stream before block 0 and after each block: m+1 entries of T x d
    pub(super) residuals: Vec<Vec<f64>>,
    pub(super) blocks: Vec<BlockCache>,
    pub(super) final_norm: NormCache,
    pub(super) final_out: Vec<f64>,
    pub(super) logits: Vec<f64>,
}

impl SequenceForward {
    pub fn run(params: &ModelParams, tokens: &[usize]) -> Result<Self> {
        let cfg = params.config;
        if tokens.is_empty() || tokens.len() > cfg.context_len {
            return Err(SeftError::invalid(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                cfg.context_len
            )));
        }
        let (seq, dim) = (tokens.len(), cfg.dim);
        let mut x = Vec::with_capacity(seq * dim);
        for &tok in tokens {
            if tok >= cfg.vocab {
                return Err(SeftError::IndexOutOfRange {
                    what: "vocabulary",
                    index: tok,
                    len: cfg.vocab,
                });
            }
            x.extend_from_slice(&params.embedding[tok * dim..(tok + 1) * dim]);
        }
        let mut residuals = Vec::with_capacity(cfg.layers + 1);
        let mut caches = Vec::with_capacity(cfg.layers);
        residuals.push(x);
        for (l, block) in params.blocks.iter().enumerate() {
            let (out, cache) = block_forward(block, &residuals[l], seq, dim, cfg.heads);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(SeftError::Divergence {
                    layer: Some(l),
                    detail: "non-finite activations after block".into(),
                });
            }
            residuals.push(out);
            caches.push(cache);
        }
        let last = &residuals[cfg.layers][(seq - 1) * dim..seq * dim];
        let (final_out, final_norm) = layer_norm(
            last,
            1,
            dim,
            &params.final_norm_gain,
            &params.final_norm_bias,
        );
        let logits = matmul(&final_out, 1, dim, &params.head, cfg.vocab);
        Ok(Self {
            tokens: tokens.to_vec(),
            residuals,
            blocks: caches,
            final_norm,
            final_out,
            logits,
        })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// Medium-token latent after `layer` blocks (`0` is the embedding).
    pub fn latent(&self, layer: usize) -> &[f64] {
        let dim = self.residuals[0].len() / self.seq_len();
        let t = self.seq_len() - 1;
        &self.residuals[layer][t * dim..(t + 1) * dim]
    }

    pub fn last_latent(&self, layers: usize) -> &[f64] {
        self.latent(layers)
    }

    pub fn trace(&self, label: usize) -> Result<TransitionTrace> {
        let latents = (0..self.residuals.len())
            .map(|k| Vector::new(self.latent(k).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransitionTrace {
            medium_token: *self.tokens.last().expect("non-empty sequence"),
            label,
            latents,
        })
    }
}

/// Returns the next-token logits and the medium token's transition trace.
pub fn forward_with_latents(
    params: &ModelParams,
    tokens: &[usize],
    label: usize,
) -> Result<(Vector, TransitionTrace)> {
    let fwd = SequenceForward::run(params, tokens)?;
    Ok((Vector::new(fwd.logits.clone())?, fwd.trace(label)?))
}

/// Forward passes for a whole batch, retained so the same activations can
/// drive both deviation profiling and backpropagation.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub(super) items: Vec<SequenceForward>,
    pub(super) labels: Vec<usize>,
}

impl BatchForward {
    pub fn run(params: &ModelParams, batch: &[Example]) -> Result<Self> {
        if batch.is_empty() {
            return Err(SeftError::invalid("empty batch"));
        }
        let mut items = Vec::with_capacity(batch.len());
        for ex in batch {
            if ex.label >= params.config.vocab {
                return Err(SeftError::IndexOutOfRange {
                    what: "vocabulary",
                    index: ex.label,
                    len: params.config.vocab,
                });
            }
            items.push(SequenceForward::run(params, &ex.tokens)?);
        }
        Ok(Self {
            items,
            labels: batch.iter().map(|e| e.label).collect(),
        })
    }

    pub fn traces(&self) -> Result<Vec<TransitionTrace>> {
        self.items
            .iter()
            .zip(&self.labels)
            .map(|(f, &l)| f.trace(l))
            .collect()
    }

    pub fn items(&self) -> &[SequenceForward] {
        &self.items
    }
}
