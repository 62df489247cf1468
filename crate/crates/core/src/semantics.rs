//! Vocabulary-defined semantics.
//!
//! Every vocabulary label has a base at the input side (its embedding row)
//! and at the output side (its row of the LM-head pseudoinverse). The
//! anchor for a medium token at layer `k` of an `m`-layer model sits on the
//! straight line between the medium token's input base and the ground
//! truth's output base, `(1 - k/m) r_in + (k/m) r_out`. Transition
//! deviations compare the factual per-layer latents to those anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::linalg::{self, Matrix, Vector, MIN_NORM};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBases {
    input: Matrix,
    output: Matrix,
}

impl SemanticBases {
    /// Derives bases from the embedding matrix (`V x d`) and the LM-head
    /// matrix (`d x V`). Output bases are rows of the head's pseudoinverse.
    pub fn build(embedding: &Matrix, lm_head: &Matrix) -> Result<Self> {
        let (vocab, dim) = embedding.shape();
        if lm_head.shape() != (dim, vocab) {
            return Err(SeftError::shape(format!(
                "embedding is {vocab}x{dim} so the LM head must be {dim}x{vocab}, got {}x{}",
                lm_head.rows(),
                lm_head.cols()
            )));
        }
        let pinv = linalg::pseudoinverse(lm_head, linalg::DEFAULT_PINV_TOL)?;
        Self::from_rows(embedding.clone(), pinv)
    }

    /// Wraps precomputed base rows, e.g. an already pseudoinverted head read from a trace file.
    pub fn from_rows(input: Matrix, output: Matrix) -> Result<Self> {
        if input.shape() != output.shape() {
            return Err(SeftError::shape(format!(
                "input bases are {:?} but output bases are {:?}",
                input.shape(),
                output.shape()
            )));
        }
        if input.rows() < 2 || input.cols() == 0 {
            return Err(SeftError::invalid("bases need V >= 2 and d >= 1"));
        }
        for (side, m) in [("input", &input), ("output", &output)] {
            for j in 0..m.rows() {
                if linalg::norm(m.row(j)) < MIN_NORM {
                    return Err(SeftError::Degenerate(format!(
                        "{side} base for label {j} has zero norm"
                    )));
                }
            }
        }
        Ok(Self { input, output })
    }

    pub fn vocab(&self) -> usize {
        self.input.rows()
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn input_base(&self, label: usize) -> Result<&[f64]> {
        self.check_label(label)?;
        Ok(self.input.row(label))
    }

    pub fn output_base(&self, label: usize) -> Result<&[f64]> {
        self.check_label(label)?;
        Ok(self.output.row(label))
    }

    pub fn input_matrix(&self) -> &Matrix {
        &self.input
    }

    pub fn output_matrix(&self) -> &Matrix {
        &self.output
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.vocab() {
            return Err(SeftError::IndexOutOfRange {
                what: "vocabulary",
                index: label,
                len: self.vocab(),
            });
        }
        Ok(())
    }

    fn check_dim(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.dim() {
            return Err(SeftError::shape(format!(
                "latent has dim {} but bases have dim {}",
                r.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Anchor at layer `k` of `m` on the route from `medium_token` to `label`.
    pub fn anchor(&self, medium_token: usize, label: usize, k: usize, m: usize) -> Result<Vector> {
        let start = self.input_base(medium_token)?;
        let end = self.output_base(label)?;
        if m == 0 || k > m {
            return Err(SeftError::invalid(format!(
                "anchor layer {k} outside 0..={m}"
            )));
        }
        if k == 0 {
            return Vector::new(start.to_vec());
        }
        if k == m {
            return Vector::new(end.to_vec());
        }
        let t = k as f64 / m as f64;
        Vector::new(
            start
                .iter()
                .zip(end)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }

    pub fn similarity_logits(&self, side: BaseSide, r: &[f64]) -> Result<Vector> {
        self.check_dim(r)?;
        if linalg::norm(r) < MIN_NORM {
            return Err(SeftError::Degenerate(
                "latent has zero norm; similarity logits undefined".into(),
            ));
        }
        let mut logits = Vec::with_capacity(self.vocab());
        for label in 0..self.vocab() {
            let cos = match side {
                BaseSide::Input => linalg::cosine_similarity(r, self.input.row(label))?,
                BaseSide::Output => linalg::cosine_similarity(r, self.output.row(label))?,
                BaseSide::Anchor {
                    layer,
                    layers,
                    medium_token,
                } => {
                    let anchor = self.anchor(medium_token, label, layer, layers)?;
                    linalg::cosine_similarity(r, &anchor).map_err(|_| {
                        SeftError::Degenerate(format!(
                            "anchor for label {label} at layer {layer} has zero norm"
                        ))
                    })?
                }
            };
            logits.push(cos);
        }
        Vector::new(logits)
    }

    /// Cross-entropy over output-side similarity logits. Raw cosines, no temperature.
    pub fn semantic_ce_loss(&self, r: &[f64], label: usize) -> Result<f64> {
        self.check_label(label)?;
        let logits = self.similarity_logits(BaseSide::Output, r)?;
        linalg::softmax_cross_entropy(&logits, label)
    }

    /// `1 - cos(r, output_base[label])`, in `[0, 2]`.
    pub fn semantic_cos_loss(&self, r: &[f64], label: usize) -> Result<f64> {
        let base = self.output_base(label)?;
        self.check_dim(r)?;
        Ok(1.0 - linalg::cosine_similarity(r, base)?)
    }

    pub fn deviation_profile(
        &self,
        trace: &TransitionTrace,
        measure: DeviationMeasure,
    ) -> Result<DeviationProfile> {
        let m = trace.layers();
        if m == 0 {
            return Err(SeftError::invalid("trace needs at least two latents"));
        }
        self.check_label(trace.medium_token)?;
        self.check_label(trace.label)?;
        let mut deviations = Vec::with_capacity(m + 1);
        for (k, latent) in trace.latents.iter().enumerate() {
            self.check_dim(latent)?;
            if linalg::norm(latent) < MIN_NORM {
                return Err(SeftError::Degenerate(format!(
                    "latent at layer {k} has zero norm"
                )));
            }
            let d = match measure {
                DeviationMeasure::CosineToAnchor => {
                    let anchor = self.anchor(trace.medium_token, trace.label, k, m)?;
                    1.0 - linalg::cosine_similarity(latent, &anchor)?
                }
                DeviationMeasure::CosineToOutputBase => {
                    1.0 - linalg::cosine_similarity(latent, self.output.row(trace.label))?
                }
                DeviationMeasure::CeToLabel => {
                    let side = BaseSide::Anchor {
                        layer: k,
                        layers: m,
                        medium_token: trace.medium_token,
                    };
                    let logits = self.similarity_logits(side, latent)?;
                    linalg::softmax_cross_entropy(&logits, trace.label)?
                }
            };
            deviations.push(d);
        }
        Ok(DeviationProfile {
            deviations,
            measure,
        })
    }
}

/// Which family of bases a similarity-logit vector is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseSide {
    Input,
    Output,
    /// Each label contributes its own anchor at `layer` of `layers`, starting from `medium_token`.
    Anchor {
        layer: usize,
        layers: usize,
        medium_token: usize,
    },
}

/// Per-layer latents `f_0..f_m` of the last (medium) token plus its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTrace {
    pub medium_token: usize,
    pub label: usize,
    pub latents: Vec<Vector>,
}

impl TransitionTrace {
    pub fn layers(&self) -> usize {
        self.latents.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMeasure {
    CosineToAnchor,
    CosineToOutputBase,
    CeToLabel,
}

impl DeviationMeasure {
    /// Cosine-family measures are bounded to `[0, 2]`; cross-entropy is not.
    pub fn is_cosine(self) -> bool {
        !matches!(self, DeviationMeasure::CeToLabel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub deviations: Vec<f64>,
    pub measure: DeviationMeasure,
}

impl DeviationProfile {
    pub fn layers(&self) -> usize {
        self.deviations.len().saturating_sub(1)
    }

    /// Layer-wise mean of several profiles taken with the same measure.
    pub fn mean(profiles: &[DeviationProfile]) -> Result<DeviationProfile> {
        let first = profiles
            .first()
            .ok_or_else(|| SeftError::invalid("mean of zero profiles"))?;
        let len = first.deviations.len();
        let mut acc = vec![0.0; len];
        for p in profiles {
            if p.deviations.len() != len || p.measure != first.measure {
                return Err(SeftError::shape("profiles differ in length or measure"));
            }
            for (a, d) in acc.iter_mut().zip(&p.deviations) {
                *a += d;
            }
        }
        let n = profiles.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(DeviationProfile {
            deviations: acc,
            measure: first.measure,
        })
    }
}
