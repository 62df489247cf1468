use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use seft::budget::{Growth, InfillOrder};
use seft::freezing::PolicyKind;
use seft::harness::{
    default_grid, run_grid, write_reports, ExperimentConfig, GridCell, PlanChoice, RunReport,
    TaskKind, TaskSpec,
};
use seft::model::{LossKind, ModuleMask};

use crate::manifest::{write_json, write_manifest};
use crate::{CliError, CliResult, OutArgs, Verbosity};

/// File holding the fully resolved configuration; pass it back through
/// `--config` to rerun.
pub const RESOLVED_FILE: &str = "config.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON configuration file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Freezing policy, e.g. naive_full, lift_front, seft_half.
    #[arg(long, value_parser = parse_with::<PolicyKind>)]
    policy: Option<PolicyKind>,

    /// Synthetic task: majority, trigger or parity (full names also accepted).
    #[arg(long, value_parser = parse_with::<TaskKind>)]
    task: Option<TaskKind>,

    /// Budget plan as growth/order, e.g. geometric/bf or arith/df.
    #[arg(long, value_parser = parse_plan)]
    plan: Option<PlanChoice>,

    /// Run the comparison grid (baselines plus every budget plan) on the task.
    #[arg(long)]
    grid: bool,

    /// Seed for both data and model initialization.
    #[arg(long)]
    seed: Option<u64>,

    /// Number of consecutive seeds to run, starting at the base seed.
    #[arg(long)]
    seeds: Option<u64>,

    /// Number of label classes (2 to 8).
    #[arg(long)]
    classes: Option<usize>,
    /// Decoder blocks m.
    #[arg(long)]
    layers: Option<usize>,
    /// Model width d.
    #[arg(long)]
    dim: Option<usize>,
    /// Attention heads; must divide the width.
    #[arg(long)]
    heads: Option<usize>,
    /// Passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training examples generated.
    #[arg(long)]
    train_n: Option<usize>,
    /// Test examples generated.
    #[arg(long)]
    test_n: Option<usize>,

    /// standard_ce, semantic_ce or semantic_cos.
    #[arg(long, value_parser = parse_json_name::<LossKind>)]
    loss: Option<LossKind>,

    /// Sublayers trained above the boundary: sam, fcm or both.
    #[arg(long, value_parser = parse_json_name::<ModuleMask>)]
    module_mask: Option<ModuleMask>,

    /// Worker threads for multi-run invocations.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    #[command(flatten)]
    out: OutArgs,
}

fn parse_with<T: FromStr<Err = seft::SeftError>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: seft::SeftError| e.to_string())
}

fn parse_json_name<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown value '{s}'"))
}

fn parse_plan(s: &str) -> Result<PlanChoice, String> {
    let (g, o) = s.split_once('/').unwrap_or((s, "bf"));
    Ok(PlanChoice {
        growth: parse_with::<Growth>(g)?,
        order: parse_with::<InfillOrder>(o)?,
    })
}

/// Task fields that may be left out of a config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: Option<TaskKind>,
    pub classes: Option<usize>,
    pub seq_len: Option<usize>,
    pub vocab: Option<usize>,
    pub train_n: Option<usize>,
    pub test_n: Option<usize>,
    pub seed: Option<u64>,
}

/// Config file schema. Every field is optional; defaults fill the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub task: TaskSection,
    pub experiment: ExperimentConfig,
    pub policy: Option<PolicyKind>,
    pub plan: Option<PlanChoice>,
    pub grid: bool,
    pub seeds: Option<u64>,
}

/// What a train invocation actually runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedTrain {
    pub task: TaskSpec,
    pub experiment: ExperimentConfig,
    pub policy: Option<PolicyKind>,
    pub plan: Option<PlanChoice>,
    pub grid: bool,
    pub seeds: u64,
}

impl ResolvedTrain {
    fn cells(&self) -> Vec<GridCell> {
        if self.grid {
            return default_grid(&[self.task.kind]);
        }
        let policy = self.policy.unwrap_or(if self.plan.is_some() {
            PolicyKind::Seft
        } else {
            PolicyKind::SeftHalf
        });
        vec![GridCell {
            task: self.task.kind,
            policy,
            plan: self.plan,
        }]
    }
}

fn resolve(args: &TrainArgs) -> CliResult<ResolvedTrain> {
    let file: TrainFile = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainFile::default(),
    };
    let kind = args
        .task
        .or(file.task.kind)
        .unwrap_or(TaskKind::TriggerToken);
    let seed = args.seed.or(file.task.seed).unwrap_or(0);
    let defaults = TaskSpec::new(kind, 6, seed);
    let t = &file.task;
    let task = TaskSpec {
        kind,
        classes: args.classes.or(t.classes).unwrap_or(defaults.classes),
        seq_len: t.seq_len.unwrap_or(defaults.seq_len),
        vocab: t.vocab.unwrap_or(defaults.vocab),
        train_n: args.train_n.or(t.train_n).unwrap_or(defaults.train_n),
        test_n: args.test_n.or(t.test_n).unwrap_or(defaults.test_n),
        seed,
    };
    let mut e = file.experiment;
    if let Some(s) = args.seed {
        e.model_seed = s;
    }
    e.layers = args.layers.unwrap_or(e.layers);
    e.dim = args.dim.unwrap_or(e.dim);
    e.heads = args.heads.unwrap_or(e.heads);
    e.epochs = args.epochs.unwrap_or(e.epochs);
    e.batch_size = args.batch_size.unwrap_or(e.batch_size);
    e.lr = args.lr.unwrap_or(e.lr);
    e.loss = args.loss.unwrap_or(e.loss);
    e.module_mask = args.module_mask.unwrap_or(e.module_mask);

    let resolved = ResolvedTrain {
        task,
        experiment: e,
        policy: args.policy.or(file.policy),
        plan: args.plan.or(file.plan),
        grid: args.grid || file.grid,
        seeds: args.seeds.or(file.seeds).unwrap_or(1),
    };
    if resolved.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if resolved.grid && (resolved.policy.is_some() || resolved.plan.is_some()) {
        return Err(CliError::Usage(
            "--grid runs its own policies; drop --policy and --plan".into(),
        ));
    }
    resolved.task.validate()?;
    resolved.experiment.validate(&resolved.task)?;
    Ok(resolved)
}

pub fn run(args: TrainArgs, v: Verbosity) -> CliResult<()> {
    let resolved = resolve(&args)?;
    let cells = resolved.cells();
    let mut reports: Vec<RunReport> = Vec::new();
    for offset in 0..resolved.seeds {
        let task = TaskSpec {
            seed: resolved.task.seed + offset,
            ..resolved.task
        };
        let cfg = ExperimentConfig {
            model_seed: resolved.experiment.model_seed + offset,
            ..resolved.experiment
        };
        v.progress(format!("seed {}: {} run(s)", task.seed, cells.len()));
        for report in run_grid(&cfg, &task, &cells, args.threads) {
            let report = report?;
            v.detail(format!(
                "  {}: accuracy {:.4}, saving {:.4}",
                report.run_label(),
                report.accuracy,
                report.cost_saving
            ));
            reports.push(report);
        }
    }

    for r in &reports {
        v.summary(format!(
            "{:<32} seed {:>3}  accuracy {:.4}  label_accuracy {:.4}  cost_saving {:.3}{}",
            r.run_label(),
            r.task_seed,
            r.accuracy,
            r.label_accuracy,
            r.cost_saving,
            if r.divergence.is_some() {
                "  DIVERGED"
            } else {
                ""
            }
        ));
    }

    if let Some(dir) = &args.out.out {
        let mut files = write_reports(dir, &reports)?;
        files.push(write_json(dir, RESOLVED_FILE, &as_file(&resolved))?);
        write_manifest(dir, "train", &resolved, files)?;
        v.progress(format!("wrote {}", dir.display()));
    }

    let diverged: Vec<String> = reports
        .iter()
        .filter_map(|r| {
            r.divergence
                .as_ref()
                .map(|d| format!("{} seed {}: {d}", r.run_label(), r.task_seed))
        })
        .collect();
    if !diverged.is_empty() {
        return Err(CliError::Divergence(diverged.join("; ")));
    }
    Ok(())
}

/// The resolved configuration in config-file form.
fn as_file(r: &ResolvedTrain) -> TrainFile {
    TrainFile {
        task: TaskSection {
            kind: Some(r.task.kind),
            classes: Some(r.task.classes),
            seq_len: Some(r.task.seq_len),
            vocab: Some(r.task.vocab),
            train_n: Some(r.task.train_n),
            test_n: Some(r.task.test_n),
            seed: Some(r.task.seed),
        },
        experiment: r.experiment,
        policy: r.policy,
        plan: r.plan,
        grid: r.grid,
        seeds: Some(r.seeds),
    }
}
