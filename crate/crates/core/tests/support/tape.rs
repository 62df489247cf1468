//! Scalar reverse-mode differentiation and an unfrozen reference forward
//! pass of the toy decoder, written without any of the crate's model code.

#![allow(dead_code)]

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use seft::model::{BlockTensor, Example, ModelParams, ParamId};
use seft::semantics::SemanticBases;

#[derive(Default)]
pub struct Tape {
    // each node: up to two (parent, local derivative) pairs
    nodes: RefCell<Vec<[(usize, f64); 2]>>,
}

const NONE: (usize, f64) = (usize::MAX, 0.0);

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    pub val: f64,
}

impl Tape {
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, [NONE, NONE])
    }

    fn push(&self, val: f64, parents: [(usize, f64); 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(parents);
        Var {
            tape: self,
            idx: nodes.len() - 1,
            val,
        }
    }

    /// d out / d node for every node.
    pub fn gradient(&self, out: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[out.idx] = 1.0;
        for i in (0..=out.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &nodes[i] {
                if p != usize::MAX {
                    adj[p] += a * d;
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn idx(&self) -> usize {
        self.idx
    }

    fn unary(self, val: f64, d: f64) -> Var<'t> {
        self.tape.push(val, [(self.idx, d), NONE])
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(self.val * c, c)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.tape
            .push(self.val + o.val, [(self.idx, 1.0), (o.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.tape
            .push(self.val - o.val, [(self.idx, 1.0), (o.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.tape
            .push(self.val * o.val, [(self.idx, o.val), (o.idx, self.val)])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.val / o.val;
        self.tape
            .push(q, [(self.idx, 1.0 / o.val), (o.idx, -q / o.val)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

fn sum<'t>(xs: impl IntoIterator<Item = Var<'t>>) -> Var<'t> {
    xs.into_iter().reduce(|a, b| a + b).expect("non-empty sum")
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RefLoss {
    Standard,
    SemanticCe,
    SemanticCos,
}

/// Leaf variables for every parameter, keyed like `ModelParams::ids()`.
pub struct Leaves<'t> {
    pub ids: Vec<ParamId>,
    pub vars: Vec<Vec<Var<'t>>>,
}

impl<'t> Leaves<'t> {
    pub fn new(tape: &'t Tape, params: &ModelParams) -> Self {
        let ids = params.ids();
        let vars = ids
            .iter()
            .map(|&id| params.tensor(id).iter().map(|&v| tape.var(v)).collect())
            .collect();
        Self { ids, vars }
    }

    fn get(&self, id: ParamId) -> &[Var<'t>] {
        let i = self.ids.iter().position(|&x| x == id).expect("known id");
        &self.vars[i]
    }
}

fn layer_norm<'t>(x: &[Var<'t>], gain: &[Var<'t>], bias: &[Var<'t>]) -> Vec<Var<'t>> {
    let n = x.len() as f64;
    let mean = sum(x.iter().copied()).scale(1.0 / n);
    let centered: Vec<_> = x.iter().map(|&v| v - mean).collect();
    let var = sum(centered.iter().map(|&c| c * c)).scale(1.0 / n);
    let denom = var.offset(1e-5).sqrt();
    centered
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&c, (&g, &b))| (c / denom) * g + b)
        .collect()
}

/// `x (len n) · W (n x cols, row-major)`.
fn vecmat<'t>(x: &[Var<'t>], w: &[Var<'t>], cols: usize) -> Vec<Var<'t>> {
    (0..cols)
        .map(|j| sum(x.iter().enumerate().map(|(i, &xi)| xi * w[i * cols + j])))
        .collect()
}

fn gelu<'t>(x: Var<'t>) -> Var<'t> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = (x + (x * x * x).scale(0.044715)).scale(c);
    (x * inner.tanh().offset(1.0)).scale(0.5)
}

fn softmax_ce<'t>(logits: &[Var<'t>], label: usize) -> Var<'t> {
    // the shift is a constant: softmax does not depend on it
    let max = logits
        .iter()
        .map(|v| v.val)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = sum(logits.iter().map(|&l| l.offset(-max).exp()))
        .ln()
        .offset(max);
    lse - logits[label]
}

fn cosine<'t>(tape: &'t Tape, r: &[Var<'t>], base: &[f64]) -> Var<'t> {
    let b: Vec<Var<'t>> = base.iter().map(|&v| tape.var(v)).collect();
    let dot = sum(r.iter().zip(&b).map(|(&x, &y)| x * y));
    let nr = sum(r.iter().map(|&x| x * x));
    let nb = sum(b.iter().map(|&y| y * y));
    dot / (nr * nb).sqrt()
}

/// Mean loss over `batch`, built on the tape.
pub fn reference_loss<'t>(
    tape: &'t Tape,
    params: &ModelParams,
    leaves: &Leaves<'t>,
    batch: &[Example],
    loss: RefLoss,
    bases: &SemanticBases,
) -> Var<'t> {
    let cfg = *params.config();
    let (d, heads, vocab) = (cfg.dim, cfg.heads, cfg.vocab);
    let dh = d / heads;
    let ff = 4 * d;
    let emb = leaves.get(ParamId::Embedding);
    let mut losses = Vec::new();
    for ex in batch {
        let mut xs: Vec<Vec<Var<'t>>> = ex
            .tokens
            .iter()
            .map(|&t| emb[t * d..(t + 1) * d].to_vec())
            .collect();
        let seq = xs.len();
        for l in 0..cfg.layers {
            let p = |t: BlockTensor| leaves.get(ParamId::Block(l, t));
            let a: Vec<Vec<_>> = xs
                .iter()
                .map(|x| {
                    layer_norm(
                        x,
                        p(BlockTensor::AttnNormGain),
                        p(BlockTensor::AttnNormBias),
                    )
                })
                .collect();
            let q: Vec<Vec<_>> = a
                .iter()
                .map(|r| vecmat(r, p(BlockTensor::Query), d))
                .collect();
            let k: Vec<Vec<_>> = a
                .iter()
                .map(|r| vecmat(r, p(BlockTensor::Key), d))
                .collect();
            let v: Vec<Vec<_>> = a
                .iter()
                .map(|r| vecmat(r, p(BlockTensor::Value), d))
                .collect();
            let mut ctx: Vec<Vec<Var<'t>>> = Vec::with_capacity(seq);
            for i in 0..seq {
                let mut row = Vec::with_capacity(d);
                for h in 0..heads {
                    let cols = h * dh..(h + 1) * dh;
                    let scores: Vec<Var<'t>> = (0..=i)
                        .map(|j| {
                            sum(cols.clone().map(|c| q[i][c] * k[j][c]))
                                .scale(1.0 / (dh as f64).sqrt())
                        })
                        .collect();
                    let max = scores
                        .iter()
                        .map(|s| s.val)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<_> = scores.iter().map(|s| s.offset(-max).exp()).collect();
                    let z = sum(e.iter().copied());
                    let probs: Vec<_> = e.iter().map(|&x| x / z).collect();
                    for c in cols {
                        row.push(sum((0..=i).map(|j| probs[j] * v[j][c])));
                    }
                }
                ctx.push(row);
            }
            let mut next = Vec::with_capacity(seq);
            for i in 0..seq {
                let attn = vecmat(&ctx[i], p(BlockTensor::AttnOut), d);
                let h1: Vec<_> = xs[i].iter().zip(&attn).map(|(&x, &y)| x + y).collect();
                let c = layer_norm(
                    &h1,
                    p(BlockTensor::MlpNormGain),
                    p(BlockTensor::MlpNormBias),
                );
                let u: Vec<_> = vecmat(&c, p(BlockTensor::MlpIn), ff)
                    .into_iter()
                    .zip(p(BlockTensor::MlpInBias))
                    .map(|(x, &b)| gelu(x + b))
                    .collect();
                let mlp = vecmat(&u, p(BlockTensor::MlpOut), d);
                let out: Vec<_> = h1
                    .iter()
                    .zip(mlp.iter().zip(p(BlockTensor::MlpOutBias)))
                    .map(|(&h, (&m, &b))| h + m + b)
                    .collect();
                next.push(out);
            }
            xs = next;
        }
        let r = &xs[seq - 1];
        let item = match loss {
            RefLoss::Standard => {
                let z = layer_norm(
                    r,
                    leaves.get(ParamId::FinalNormGain),
                    leaves.get(ParamId::FinalNormBias),
                );
                let logits = vecmat(&z, leaves.get(ParamId::Head), vocab);
                softmax_ce(&logits, ex.label)
            }
            RefLoss::SemanticCe => {
                let logits: Vec<_> = (0..vocab)
                    .map(|c| cosine(tape, r, bases.output_base(c).unwrap()))
                    .collect();
                softmax_ce(&logits, ex.label)
            }
            RefLoss::SemanticCos => {
                -cosine(tape, r, bases.output_base(ex.label).unwrap()).offset(-1.0)
            }
        };
        losses.push(item);
    }
    sum(losses.iter().copied()).scale(1.0 / batch.len() as f64)
}

/// Loss value and gradient of every parameter tensor, canonical order.
pub fn reference_gradients(
    params: &ModelParams,
    batch: &[Example],
    loss: RefLoss,
    bases: &SemanticBases,
) -> (f64, Vec<(ParamId, Vec<f64>)>) {
    let tape = Tape::default();
    let leaves = Leaves::new(&tape, params);
    let out = reference_loss(&tape, params, &leaves, batch, loss, bases);
    let adj = tape.gradient(out);
    let grads = leaves
        .ids
        .iter()
        .zip(&leaves.vars)
        .map(|(&id, vars)| (id, vars.iter().map(|v| adj[v.idx()]).collect()))
        .collect();
    (out.val, grads)
}
