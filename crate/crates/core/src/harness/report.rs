//! Report files and the experiment grid.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::budget::{Growth, InfillOrder};
use crate::error::Result;
use crate::freezing::PolicyKind;

use super::dataset::{TaskKind, TaskSpec};
use super::experiment::{run_experiment, ExperimentConfig, PlanChoice, RunReport};
use super::violin::write_violin_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub task: TaskKind,
    pub policy: PolicyKind,
    pub plan: Option<PlanChoice>,
}

/// Baseline comparison cells plus the growth x order budget grid, per task.
pub fn default_grid(tasks: &[TaskKind]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &task in tasks {
        for policy in [
            PolicyKind::NaiveFull,
            PolicyKind::NaiveHalf,
            PolicyKind::LiftFront,
            PolicyKind::SeftHalf,
        ] {
            cells.push(GridCell {
                task,
                policy,
                plan: None,
            });
        }
        for growth in [Growth::Geometric, Growth::Arithmetic] {
            for order in [InfillOrder::BreadthFirst, InfillOrder::DepthFirst] {
                cells.push(GridCell {
                    task,
                    policy: PolicyKind::Seft,
                    plan: Some(PlanChoice { growth, order }),
                });
            }
        }
    }
    cells
}

/// Runs cells on up to `threads` workers; results come back in cell order.
pub fn run_grid(
    cfg: &ExperimentConfig,
    template: &TaskSpec,
    cells: &[GridCell],
    threads: usize,
) -> Vec<Result<RunReport>> {
    let threads = threads.clamp(1, cells.len().max(1));
    let mut results: Vec<Option<Result<RunReport>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = results
            .chunks_mut(cells.len().div_ceil(threads).max(1))
            .enumerate()
            .map(|(ci, slot)| {
                let start = ci * cells.len().div_ceil(threads).max(1);
                s.spawn(move || {
                    for (j, out) in slot.iter_mut().enumerate() {
                        let cell = cells[start + j];
                        let task = TaskSpec {
                            kind: cell.task,
                            ..*template
                        };
                        *out = Some(run_experiment(cfg, &task, cell.policy, cell.plan));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("grid worker panicked");
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SummaryRow<'a> {
    run: String,
    task: &'a str,
    policy: &'a str,
    plan: &'a str,
    task_seed: u64,
    model_seed: u64,
    accuracy: f64,
    label_accuracy: f64,
    cost_saving: f64,
    batches: usize,
    final_epoch_loss: f64,
    diverged: bool,
}

/// Writes `runs.csv`, `summary.json`, and per run a violin CSV and, for
/// budget runs, a scheduler ledger CSV.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[RunReport]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
    for r in reports {
        w.serialize(SummaryRow {
            run: r.run_label(),
            task: &r.task,
            policy: &r.policy,
            plan: r.plan.as_deref().unwrap_or(""),
            task_seed: r.task_seed,
            model_seed: r.model_seed,
            accuracy: r.accuracy,
            label_accuracy: r.label_accuracy,
            cost_saving: r.cost_saving,
            batches: r.batches,
            final_epoch_loss: r.final_epoch_loss,
            diverged: r.divergence.is_some(),
        })?;
    }
    w.flush()?;
    written.push("runs.csv".to_string());

    fs::write(
        dir.join("summary.json"),
        serde_json::to_vec_pretty(reports)?,
    )?;
    written.push("summary.json".to_string());

    for (i, r) in reports.iter().enumerate() {
        let name = format!("violin_{i:02}_{}.csv", r.run_label());
        let rows: Vec<_> = r
            .deviation_before
            .iter()
            .chain(&r.deviation_after)
            .cloned()
            .collect();
        write_violin_csv(&rows, fs::File::create(dir.join(&name))?)?;
        written.push(name);
        if let Some(ledger) = &r.ledger {
            let name = format!("ledger_{i:02}_{}.csv", r.run_label());
            ledger.write_csv(fs::File::create(dir.join(&name))?)?;
            written.push(name);
        }
    }
    Ok(written)
}
