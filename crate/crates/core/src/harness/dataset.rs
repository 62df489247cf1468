//! Synthetic next-token classification tasks.
//!
//! Token layout: ids `0..C` are the class label tokens, everything above is
//! content. Each task reserves a few content tokens for its rule and fills
//! the rest of the sequence with the remaining ones.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::model::Example;

pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Label is the class token that occurs most often in the sequence.
    MajorityLabel,
    /// Each class owns one trigger token; exactly one trigger appears.
    TriggerToken,
    /// Label is the count of a designated token, modulo C.
    Parity,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::MajorityLabel,
        TaskKind::TriggerToken,
        TaskKind::Parity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MajorityLabel => "majority_label",
            TaskKind::TriggerToken => "trigger_token",
            TaskKind::Parity => "parity",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = SeftError;

    /// Accepts the full names and the short forms `majority` and `trigger`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => return Ok(TaskKind::MajorityLabel),
            "trigger" => return Ok(TaskKind::TriggerToken),
            _ => {}
        }
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SeftError::invalid(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub classes: usize,
    pub seq_len: usize,
    pub vocab: usize,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, classes: usize, seed: u64) -> Self {
        Self {
            kind,
            classes,
            seq_len: 6,
            vocab: 24,
            train_n: 960,
            test_n: 240,
            seed,
        }
    }

    /// Content tokens the rule reserves, right after the label tokens.
    fn reserved(&self) -> usize {
        match self.kind {
            TaskKind::MajorityLabel => 0,
            TaskKind::TriggerToken => self.classes,
            TaskKind::Parity => 1,
        }
    }

    fn fillers(&self) -> std::ops::Range<usize> {
        self.classes + self.reserved()..self.vocab
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&self.classes) {
            return Err(SeftError::invalid(format!(
                "classes must be in {MIN_CLASSES}..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if self.fillers().is_empty() {
            return Err(SeftError::invalid(format!(
                "vocabulary {} too small for {} classes and {} reserved tokens",
                self.vocab,
                self.classes,
                self.reserved()
            )));
        }
        let min_len = match self.kind {
            TaskKind::MajorityLabel | TaskKind::TriggerToken => 1,
            TaskKind::Parity => self.classes - 1,
        };
        if self.seq_len < min_len.max(1) {
            return Err(SeftError::invalid(format!(
                "sequence length {} too short for {}",
                self.seq_len, self.kind
            )));
        }
        Ok(())
    }

    /// The rule oracle: the correct label of a token sequence, if the rule defines one.
    pub fn rule_label(&self, tokens: &[usize]) -> Option<usize> {
        let c = self.classes;
        match self.kind {
            TaskKind::MajorityLabel => {
                let mut counts = vec![0usize; c];
                for &t in tokens.iter().filter(|&&t| t < c) {
                    counts[t] += 1;
                }
                let top = *counts.iter().max()?;
                let mut winners = (0..c).filter(|&k| counts[k] == top);
                let first = winners.next()?;
                (top > 0 && winners.next().is_none()).then_some(first)
            }
            TaskKind::TriggerToken => {
                let mut found = tokens.iter().filter(|&&t| (c..2 * c).contains(&t));
                let first = *found.next()?;
                found.next().is_none().then_some(first - c)
            }
            TaskKind::Parity => Some(tokens.iter().filter(|&&t| t == c).count() % c),
        }
    }

    fn sample(&self, label: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let c = self.classes;
        let n = self.seq_len;
        let fillers = self.fillers();
        let mut tokens: Vec<usize> = Vec::with_capacity(n);
        match self.kind {
            TaskKind::MajorityLabel => {
                let major = rng.random_range(n.div_ceil(2)..=n);
                tokens.extend(std::iter::repeat_n(label, major));
                // Distractor markers stay strictly below the majority count.
                let others: Vec<usize> = (0..c).filter(|&k| k != label).collect();
                let mut per_class = vec![0usize; c];
                while tokens.len() < n && rng.random_bool(0.5) {
                    let k = others[rng.random_range(0..others.len())];
                    if per_class[k] + 1 < major {
                        per_class[k] += 1;
                        tokens.push(k);
                    } else {
                        break;
                    }
                }
            }
            TaskKind::TriggerToken => tokens.push(c + label),
            TaskKind::Parity => {
                let max_rounds = (n - label) / c;
                let count = label + c * rng.random_range(0..=max_rounds);
                tokens.extend(std::iter::repeat_n(c, count));
            }
        }
        while tokens.len() < n {
            tokens.push(rng.random_range(fillers.clone()));
        }
        tokens.shuffle(rng);
        tokens
    }

    fn split(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        labels.shuffle(rng);
        labels
            .into_iter()
            .map(|label| Example {
                tokens: self.sample(label, rng),
                label,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Deterministic from `spec.seed`; labels are balanced within one per split.
pub fn generate_dataset(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = spec.split(spec.train_n, &mut rng);
    let test = spec.split(spec.test_n, &mut rng);
    Ok(Dataset {
        spec: *spec,
        train,
        test,
    })
}
