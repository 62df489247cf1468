//! Freeze-boundary selection: the deviation-argmin policy, its quota-bound
//! and ablation variants, and the naive/LIFT baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::model::{FreezeDecision, ModuleMask, TrainScope};
use crate::semantics::{DeviationMeasure, DeviationProfile};

/// Deviations closer than this to the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    NaiveFull,
    NaiveHalf,
    LiftFront,
    LiftReverse,
    LiftVanilla,
    Seft,
    SeftHalf,
    SeftBaseVariant,
    SeftCelossVariant,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 9] = [
        PolicyKind::NaiveFull,
        PolicyKind::NaiveHalf,
        PolicyKind::LiftFront,
        PolicyKind::LiftReverse,
        PolicyKind::LiftVanilla,
        PolicyKind::Seft,
        PolicyKind::SeftHalf,
        PolicyKind::SeftBaseVariant,
        PolicyKind::SeftCelossVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::NaiveFull => "naive_full",
            PolicyKind::NaiveHalf => "naive_half",
            PolicyKind::LiftFront => "lift_front",
            PolicyKind::LiftReverse => "lift_reverse",
            PolicyKind::LiftVanilla => "lift_vanilla",
            PolicyKind::Seft => "seft",
            PolicyKind::SeftHalf => "seft_half",
            PolicyKind::SeftBaseVariant => "seft_base_variant",
            PolicyKind::SeftCelossVariant => "seft_celoss_variant",
        }
    }

    /// Deviation measure the policy selects on, if it uses profiles at all.
    pub fn measure(self) -> Option<DeviationMeasure> {
        match self {
            PolicyKind::Seft | PolicyKind::SeftHalf => Some(DeviationMeasure::CosineToAnchor),
            PolicyKind::SeftBaseVariant => Some(DeviationMeasure::CosineToOutputBase),
            PolicyKind::SeftCelossVariant => Some(DeviationMeasure::CeToLabel),
            _ => None,
        }
    }

    pub fn needs_profile(self) -> bool {
        self.measure().is_some()
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = SeftError;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SeftError::invalid(format!("unknown policy '{s}'")))
    }
}

/// Layer of least deviation among the interior layers `1..m`.
///
/// `d_0` is zero by construction and `d_m` is the terminal layer, so both are
/// excluded. Ties (within [`TIE_TOLERANCE`]) go to the larger index.
pub fn seft_select_eof(profile: &DeviationProfile, layers: usize) -> Result<usize> {
    if layers < 2 {
        return Err(SeftError::invalid(
            "boundary selection needs at least 2 layers",
        ));
    }
    if profile.deviations.len() != layers + 1 {
        return Err(SeftError::shape(format!(
            "profile has {} entries for {layers} layers",
            profile.deviations.len()
        )));
    }
    let interior = &profile.deviations[1..layers];
    let min = interior.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(SeftError::NonFinite("deviation profile".into()));
    }
    let pick = interior
        .iter()
        .rposition(|&d| d <= min + TIE_TOLERANCE)
        .expect("interior is non-empty");
    Ok(pick + 1)
}

/// Mutable selection state for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    kind: PolicyKind,
    layers: usize,
    module_mask: ModuleMask,
    cursor: usize,
    quotas: Option<Vec<usize>>,
    planned: Option<Vec<usize>>,
}

impl PolicyState {
    /// `batches` is the number of selections per cycle; only the quota-bound
    /// policy uses it.
    pub fn new(
        kind: PolicyKind,
        layers: usize,
        batches: usize,
        module_mask: ModuleMask,
    ) -> Result<Self> {
        if layers < 2 {
            return Err(SeftError::invalid("policies need at least 2 layers"));
        }
        let planned = (kind == PolicyKind::SeftHalf).then(|| {
            (0..layers)
                .map(|b| batches / layers + usize::from(b < batches % layers))
                .collect::<Vec<_>>()
        });
        Ok(Self {
            kind,
            layers,
            module_mask,
            cursor: if kind == PolicyKind::LiftReverse {
                layers - 1
            } else {
                0
            },
            quotas: planned.clone(),
            planned,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn quotas(&self) -> Option<&[usize]> {
        self.quotas.as_deref()
    }

    /// Refill the per-boundary quotas, e.g. at the start of an epoch.
    pub fn reset_quotas(&mut self) {
        self.quotas = self.planned.clone();
    }

    pub fn select(&mut self, profile: Option<&DeviationProfile>) -> Result<FreezeDecision> {
        let m = self.layers;
        let mask = self.module_mask;
        let suffix = |eof| FreezeDecision::suffix(eof, mask);
        let decision = match self.kind {
            PolicyKind::NaiveFull => suffix(0),
            PolicyKind::NaiveHalf => suffix(m / 2),
            PolicyKind::LiftFront => {
                let eof = self.cursor;
                self.cursor = (self.cursor + 1) % m;
                suffix(eof)
            }
            PolicyKind::LiftReverse => {
                let eof = self.cursor;
                self.cursor = (self.cursor + m - 1) % m;
                suffix(eof)
            }
            PolicyKind::LiftVanilla => {
                let eof = self.cursor;
                self.cursor = (self.cursor + 1) % m;
                FreezeDecision {
                    eof,
                    module_mask: self.module_mask,
                    scope: TrainScope::SingleBlock,
                }
            }
            PolicyKind::Seft | PolicyKind::SeftBaseVariant | PolicyKind::SeftCelossVariant => {
                suffix(seft_select_eof(self.require(profile)?, m)?)
            }
            PolicyKind::SeftHalf => {
                let natural = seft_select_eof(self.require(profile)?, m)?;
                suffix(self.route_to_quota(natural))
            }
        };
        Ok(decision)
    }

    fn require<'p>(&self, profile: Option<&'p DeviationProfile>) -> Result<&'p DeviationProfile> {
        profile.ok_or_else(|| {
            SeftError::invalid(format!("policy {} needs a deviation profile", self.kind))
        })
    }

    /// Nearest boundary with quota left; ties toward the larger boundary.
    fn route_to_quota(&mut self, natural: usize) -> usize {
        if self
            .quotas
            .as_ref()
            .is_none_or(|q| q.iter().all(|&c| c == 0))
        {
            self.reset_quotas();
        }
        let quotas = self.quotas.as_mut().expect("quota policy");
        let best = (0..quotas.len())
            .filter(|&b| quotas[b] > 0)
            .min_by_key(|&b| (b.abs_diff(natural), std::cmp::Reverse(b)));
        match best {
            Some(b) => {
                quotas[b] -= 1;
                b
            }
            // zero planned batches: fall back to the natural boundary
            None => natural,
        }
    }
}

/// Mean over batches of `eof / m`.
pub fn cost_saving(decisions: &[FreezeDecision], layers: usize) -> Result<f64> {
    if decisions.is_empty() {
        return Err(SeftError::invalid("cost saving of an empty run"));
    }
    if layers == 0 {
        return Err(SeftError::invalid("zero layers"));
    }
    let total: usize = decisions.iter().map(|d| d.eof).sum();
    Ok(total as f64 / (decisions.len() * layers) as f64)
}
