//! Budget plans over freeze boundaries and the budgeted scheduler.
//!
//! A plan hands each boundary `k` a quota proportional to `2^k`
//! (geometric) or `k + 1` (arithmetic). An infill schedule orders the quota
//! slots breadth-first (boundary by boundary) or depth-first (one share of
//! every boundary per round). The scheduler walks the slots and, for a slot
//! at boundary `b`, trains the first unused batch whose natural boundary is
//! at most `b`; leftovers are forced through at the last boundary walked.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::model::{FreezeDecision, ModuleMask};

/// Largest layer count whose geometric weights fit the exact integer path.
pub const MAX_PLAN_LAYERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    Geometric,
    Arithmetic,
}

impl Growth {
    pub fn name(self) -> &'static str {
        match self {
            Growth::Geometric => "geometric",
            Growth::Arithmetic => "arithmetic",
        }
    }

    fn weight(self, k: usize) -> u128 {
        match self {
            Growth::Geometric => 1u128 << k,
            Growth::Arithmetic => k as u128 + 1,
        }
    }
}

impl fmt::Display for Growth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Growth {
    type Err = SeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" | "geom" => Ok(Growth::Geometric),
            "arithmetic" | "arith" => Ok(Growth::Arithmetic),
            _ => Err(SeftError::invalid(format!("unknown growth '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfillOrder {
    BreadthFirst,
    DepthFirst,
}

impl InfillOrder {
    pub fn short_name(self) -> &'static str {
        match self {
            InfillOrder::BreadthFirst => "bf",
            InfillOrder::DepthFirst => "df",
        }
    }
}

impl FromStr for InfillOrder {
    type Err = SeftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bf" | "breadth_first" => Ok(InfillOrder::BreadthFirst),
            "df" | "depth_first" => Ok(InfillOrder::DepthFirst),
            _ => Err(SeftError::invalid(format!("unknown infill order '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub growth: Growth,
    /// Batches assigned to each freeze boundary `0..m`.
    pub quotas: Vec<usize>,
    pub total: usize,
}

impl BudgetPlan {
    pub fn layers(&self) -> usize {
        self.quotas.len()
    }

    /// `sum_k q_k (k/m) / N`: the cost saving if every slot is filled.
    pub fn expected_saving(&self) -> f64 {
        let m = self.layers() as f64;
        let weighted: f64 = self
            .quotas
            .iter()
            .enumerate()
            .map(|(k, &q)| q as f64 * k as f64)
            .sum();
        weighted / (m * self.total as f64)
    }
}

/// Quotas proportional to the growth sequence, floor-rounded, with the
/// rounding residue handed one unit at a time to the largest boundaries.
pub fn make_plan(growth: Growth, layers: usize, batches: usize) -> Result<BudgetPlan> {
    if layers < 2 {
        return Err(SeftError::invalid("a budget plan needs at least 2 layers"));
    }
    if layers > MAX_PLAN_LAYERS {
        return Err(SeftError::invalid(format!(
            "budget plans support at most {MAX_PLAN_LAYERS} layers"
        )));
    }
    if batches == 0 {
        return Err(SeftError::invalid("a budget plan needs at least one batch"));
    }
    let weights: Vec<u128> = (0..layers).map(|k| growth.weight(k)).collect();
    let total_weight: u128 = weights.iter().sum();
    let n = batches as u128;
    let mut quotas: Vec<usize> = weights
        .iter()
        .map(|&w| (n * w / total_weight) as usize)
        .collect();
    let mut residue = batches - quotas.iter().sum::<usize>();
    for k in (0..layers).rev().cycle() {
        if residue == 0 {
            break;
        }
        quotas[k] += 1;
        residue -= 1;
    }
    Ok(BudgetPlan {
        growth,
        quotas,
        total: batches,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillSchedule {
    pub order: InfillOrder,
    /// Boundary index of every slot, in fill order.
    pub slots: Vec<usize>,
}

pub fn infill_order(plan: &BudgetPlan, order: InfillOrder) -> InfillSchedule {
    let mut slots = Vec::with_capacity(plan.total);
    match order {
        InfillOrder::BreadthFirst => {
            for (b, &q) in plan.quotas.iter().enumerate() {
                slots.extend(std::iter::repeat_n(b, q));
            }
        }
        InfillOrder::DepthFirst => {
            let rounds = plan.quotas.iter().copied().max().unwrap_or(0);
            for r in 0..rounds {
                slots.extend((0..plan.layers()).filter(|&b| plan.quotas[b] > r));
            }
        }
    }
    InfillSchedule { order, slots }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Slot,
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub batch_id: usize,
    pub natural_eof: usize,
    pub boundary: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct LedgerRow {
    batch_id: usize,
    natural_eof: usize,
    assigned_boundary: usize,
    phase: Phase,
    cost_units: f64,
}

/// Outcome of a budgeted walk: who trained where, in training order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerLedger {
    pub layers: usize,
    pub assignments: Vec<Assignment>,
    /// Slots per boundary that no compatible batch could fill.
    pub unfilled: Vec<usize>,
    /// Quota left per boundary after the walk (equals `unfilled`).
    pub remaining_quotas: Vec<usize>,
    /// Batch ids in the order they were consumed.
    pub tabu: Vec<usize>,
}

impl SchedulerLedger {
    pub fn batch_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn unfilled_total(&self) -> usize {
        self.unfilled.iter().sum()
    }

    pub fn realized_saving(&self) -> f64 {
        if self.assignments.is_empty() {
            return 0.0;
        }
        let total: usize = self.assignments.iter().map(|a| a.boundary).sum();
        total as f64 / (self.layers * self.assignments.len()) as f64
    }

    pub fn counts(&self, phase: Phase) -> Vec<usize> {
        let mut counts = vec![0; self.layers];
        for a in self.assignments.iter().filter(|a| a.phase == phase) {
            counts[a.boundary] += 1;
        }
        counts
    }

    /// CSV with columns `batch_id,natural_eof,assigned_boundary,phase,cost_units`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut rows: Vec<&Assignment> = self.assignments.iter().collect();
        rows.sort_by_key(|a| a.batch_id);
        for a in rows {
            w.serialize(LedgerRow {
                batch_id: a.batch_id,
                natural_eof: a.natural_eof,
                assigned_boundary: a.boundary,
                phase: a.phase,
                cost_units: (self.layers - a.boundary) as f64 / self.layers as f64,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Plans which batch trains at which boundary, without training anything.
pub fn schedule_batches(
    natural_eofs: &[usize],
    plan: &BudgetPlan,
    schedule: &InfillSchedule,
) -> Result<SchedulerLedger> {
    let m = plan.layers();
    if let Some((i, &e)) = natural_eofs.iter().enumerate().find(|(_, &e)| e >= m) {
        return Err(SeftError::invalid(format!(
            "batch {i} has natural boundary {e} outside 0..{m}"
        )));
    }
    if let Some(&b) = schedule.slots.iter().find(|&&b| b >= m) {
        return Err(SeftError::invalid(format!(
            "slot boundary {b} outside 0..{m}"
        )));
    }

    // One FIFO of batch ids per natural boundary; the earliest compatible
    // batch for boundary b is the smallest front among queues 0..=b.
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); m];
    for (id, &e) in natural_eofs.iter().enumerate() {
        queues[e].push_back(id);
    }
    let mut remaining = plan.quotas.clone();
    let mut unfilled = vec![0; m];
    let mut assignments = Vec::with_capacity(natural_eofs.len());
    let mut last_boundary = None;

    for &b in &schedule.slots {
        last_boundary = Some(b);
        if remaining[b] == 0 {
            continue;
        }
        let pick = (0..=b)
            .filter_map(|e| queues[e].front().map(|&id| (id, e)))
            .min();
        match pick {
            Some((id, e)) => {
                queues[e].pop_front();
                remaining[b] -= 1;
                assignments.push(Assignment {
                    batch_id: id,
                    natural_eof: e,
                    boundary: b,
                    phase: Phase::Slot,
                });
            }
            None => unfilled[b] += 1,
        }
    }

    let mut leftovers: Vec<usize> = queues.into_iter().flatten().collect();
    leftovers.sort_unstable();
    if !leftovers.is_empty() {
        let forced = last_boundary.unwrap_or(m - 1);
        for id in leftovers {
            assignments.push(Assignment {
                batch_id: id,
                natural_eof: natural_eofs[id],
                boundary: forced,
                phase: Phase::Forced,
            });
        }
    }
    let tabu = assignments.iter().map(|a| a.batch_id).collect();
    Ok(SchedulerLedger {
        layers: m,
        assignments,
        unfilled,
        remaining_quotas: remaining,
        tabu,
    })
}

/// Walks the schedule and calls `train` for every assignment in order.
pub fn budgeted_training_run<F>(
    natural_eofs: &[usize],
    plan: &BudgetPlan,
    schedule: &InfillSchedule,
    module_mask: ModuleMask,
    mut train: F,
) -> Result<SchedulerLedger>
where
    F: FnMut(&Assignment, FreezeDecision) -> Result<()>,
{
    let ledger = schedule_batches(natural_eofs, plan, schedule)?;
    for a in &ledger.assignments {
        train(a, FreezeDecision::suffix(a.boundary, module_mask))?;
    }
    Ok(ledger)
}
