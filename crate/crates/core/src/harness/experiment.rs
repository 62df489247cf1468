//! One training run end to end: data, model, policy or budget, evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{
    budgeted_training_run, infill_order, make_plan, Growth, InfillOrder, SchedulerLedger,
};
use crate::error::{Result, SeftError};
use crate::freezing::{cost_saving, seft_select_eof, PolicyKind, PolicyState};
use crate::model::{
    argmax, prediction_scores, Adam, AdamConfig, BatchForward, Example, FreezeDecision, LossKind,
    ModelConfig, ModelParams, ModuleMask, Objective,
};
use crate::semantics::{DeviationMeasure, DeviationProfile, SemanticBases};

use super::dataset::{generate_dataset, Dataset, TaskSpec};
use super::violin::{violin_rows, ViolinRow};

/// Measure used for the before/after deviation snapshots.
pub const SNAPSHOT_MEASURE: DeviationMeasure = DeviationMeasure::CosineToAnchor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub context_len: usize,
    pub model_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub module_mask: ModuleMask,
    pub adam: AdamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            dim: 64,
            heads: 4,
            context_len: 16,
            model_seed: 0,
            epochs: 3,
            batch_size: 32,
            lr: 1e-3,
            loss: LossKind::SemanticCos,
            module_mask: ModuleMask::Both,
            adam: AdamConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            vocab,
            context_len: self.context_len,
            seed: self.model_seed,
        }
    }

    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        self.model_config(task.vocab).validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SeftError::invalid("epochs and batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(SeftError::invalid("learning rate must be positive"));
        }
        if task.seq_len > self.context_len {
            return Err(SeftError::invalid(format!(
                "sequence length {} exceeds context {}",
                task.seq_len, self.context_len
            )));
        }
        Ok(())
    }
}

/// Budget plan used instead of a per-batch policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanChoice {
    pub growth: Growth,
    pub order: InfillOrder,
}

impl PlanChoice {
    pub fn label(&self) -> String {
        format!("{}/{}", self.growth.name(), self.order.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub task: String,
    pub plan: Option<String>,
    pub task_seed: u64,
    pub model_seed: u64,
    /// Greedy argmax over the whole vocabulary equals the label, on the test split.
    pub accuracy: f64,
    /// Same, with the argmax restricted to the class label tokens.
    pub label_accuracy: f64,
    pub cost_saving: f64,
    pub batches: usize,
    pub final_epoch_loss: f64,
    /// Count of decisions per freeze boundary.
    pub eof_histogram: Vec<usize>,
    pub deviation_before: Vec<ViolinRow>,
    pub deviation_after: Vec<ViolinRow>,
    pub ledger: Option<SchedulerLedger>,
    /// Set when training stopped on a non-finite loss; metrics are partial.
    pub divergence: Option<String>,
}

impl RunReport {
    pub fn run_label(&self) -> String {
        match &self.plan {
            Some(p) => format!("{}-{}", self.task, p.replace('/', "-")),
            None => format!("{}-{}", self.task, self.policy),
        }
    }
}

fn batches_for_run(train: &[Example], cfg: &ExperimentConfig, seed: u64) -> Vec<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c);
    let mut out = Vec::new();
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            out.push(chunk.iter().map(|&i| train[i].clone()).collect());
        }
    }
    out
}

fn batch_profile(
    fwd: &BatchForward,
    bases: &SemanticBases,
    measure: DeviationMeasure,
) -> Result<DeviationProfile> {
    let profiles = fwd
        .traces()?
        .iter()
        .map(|t| bases.deviation_profile(t, measure))
        .collect::<Result<Vec<_>>>()?;
    DeviationProfile::mean(&profiles)
}

/// Per-example deviation profiles of the test split.
pub fn deviation_snapshot(
    params: &ModelParams,
    bases: &SemanticBases,
    examples: &[Example],
    measure: DeviationMeasure,
) -> Result<Vec<DeviationProfile>> {
    examples
        .iter()
        .map(|ex| {
            let (_, trace) = crate::model::forward_with_latents(params, &ex.tokens, ex.label)?;
            bases.deviation_profile(&trace, measure)
        })
        .collect()
}

/// Full-vocabulary and label-restricted accuracy on `examples`.
pub fn evaluate(
    params: &ModelParams,
    objective: Objective<'_>,
    examples: &[Example],
    classes: usize,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(SeftError::invalid("evaluation split is empty"));
    }
    let mut full = 0;
    let mut restricted = 0;
    for ex in examples {
        let scores = prediction_scores(params, &ex.tokens, objective)?;
        full += usize::from(argmax(&scores) == ex.label);
        restricted += usize::from(argmax(&scores[..classes]) == ex.label);
    }
    let n = examples.len() as f64;
    Ok((full as f64 / n, restricted as f64 / n))
}

struct Trainer<'a> {
    params: ModelParams,
    adam: Adam,
    objective: Objective<'a>,
    lr: f64,
    epoch_losses: Vec<f64>,
}

impl Trainer<'_> {
    fn step(&mut self, fwd: &BatchForward, freeze: FreezeDecision) -> Result<()> {
        let out = fwd.backward(&self.params, self.objective, freeze)?;
        self.adam
            .apply_update(&mut self.params, &out.gradients, self.lr)?;
        self.epoch_losses.push(out.loss);
        Ok(())
    }
}

/// Trains a fresh model on `task` with either a per-batch `policy` or a
/// budget `plan`, then evaluates on the held-out split.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    policy: PolicyKind,
    plan: Option<PlanChoice>,
) -> Result<RunReport> {
    cfg.validate(task)?;
    let data: Dataset = generate_dataset(task)?;
    let init = ModelParams::init(cfg.model_config(task.vocab))?;
    // Bases come from the pretrained (initial) weights and stay fixed.
    let bases = SemanticBases::build(&init.embedding_matrix(), &init.head_matrix())?;
    let objective = Objective::new(cfg.loss, Some(&bases))?;
    let m = cfg.layers;

    let before = deviation_snapshot(&init, &bases, &data.test, SNAPSHOT_MEASURE)?;
    let deviation_before = violin_rows(&before, "before")?;

    let batches = batches_for_run(&data.train, cfg, task.seed);
    let per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let mut trainer = Trainer {
        params: init,
        adam: Adam::new(cfg.adam),
        objective,
        lr: cfg.lr,
        epoch_losses: Vec::new(),
    };
    let mut decisions = Vec::with_capacity(batches.len());
    let mut ledger = None;

    let outcome: Result<()> = match plan {
        None => {
            let mut state = PolicyState::new(policy, m, batches.len(), cfg.module_mask)?;
            let measure = policy.measure();
            (|| {
                for (i, batch) in batches.iter().enumerate() {
                    if i % per_epoch == 0 {
                        trainer.epoch_losses.clear();
                    }
                    let fwd = BatchForward::run(&trainer.params, batch)?;
                    let profile = match measure {
                        Some(ms) => Some(batch_profile(&fwd, &bases, ms)?),
                        None => None,
                    };
                    let decision = state.select(profile.as_ref())?;
                    decisions.push(decision);
                    trainer.step(&fwd, decision)?;
                }
                Ok(())
            })()
        }
        Some(choice) => {
            // Natural boundaries are counted once on the initial model, before any training.
            let measure = PolicyKind::Seft.measure().expect("seft uses a measure");
            let natural = batches
                .iter()
                .map(|b| {
                    let fwd = BatchForward::run(&trainer.params, b)?;
                    seft_select_eof(&batch_profile(&fwd, &bases, measure)?, m)
                })
                .collect::<Result<Vec<_>>>()?;
            let budget = make_plan(choice.growth, m, batches.len())?;
            let schedule = infill_order(&budget, choice.order);
            let mut seen = 0;
            let result = budgeted_training_run(
                &natural,
                &budget,
                &schedule,
                cfg.module_mask,
                |a, freeze| {
                    if seen % per_epoch == 0 {
                        trainer.epoch_losses.clear();
                    }
                    seen += 1;
                    decisions.push(freeze);
                    let fwd = BatchForward::run(&trainer.params, &batches[a.batch_id])?;
                    trainer.step(&fwd, freeze)
                },
            );
            match result {
                Ok(l) => {
                    ledger = Some(l);
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
    };

    let divergence = match outcome {
        Ok(()) => None,
        Err(e @ (SeftError::Divergence { .. } | SeftError::NonFinite(_))) => Some(e.to_string()),
        Err(e) => return Err(e),
    };

    let mut eof_histogram = vec![0; m];
    for d in &decisions {
        eof_histogram[d.eof] += 1;
    }
    let cost = if decisions.is_empty() {
        0.0
    } else {
        cost_saving(&decisions, m)?
    };
    let final_epoch_loss = if trainer.epoch_losses.is_empty() {
        f64::NAN
    } else {
        trainer.epoch_losses.iter().sum::<f64>() / trainer.epoch_losses.len() as f64
    };

    let (accuracy, label_accuracy, deviation_after) = if divergence.is_none() {
        let (acc, lacc) = evaluate(&trainer.params, objective, &data.test, task.classes)?;
        let after = deviation_snapshot(&trainer.params, &bases, &data.test, SNAPSHOT_MEASURE)?;
        (acc, lacc, violin_rows(&after, "after")?)
    } else {
        (0.0, 0.0, Vec::new())
    };

    Ok(RunReport {
        policy: policy.name().to_string(),
        task: task.kind.name().to_string(),
        plan: plan.map(|p| p.label()),
        task_seed: task.seed,
        model_seed: cfg.model_seed,
        accuracy,
        label_accuracy,
        cost_saving: cost,
        batches: decisions.len(),
        final_epoch_loss,
        eof_histogram,
        deviation_before,
        deviation_after,
        ledger,
        divergence,
    })
}

/// Untrained accuracy, for chance-level checks.
pub fn untrained_accuracy(cfg: &ExperimentConfig, task: &TaskSpec) -> Result<(f64, f64)> {
    cfg.validate(task)?;
    let data = generate_dataset(task)?;
    let params = ModelParams::init(cfg.model_config(task.vocab))?;
    let bases = SemanticBases::build(&params.embedding_matrix(), &params.head_matrix())?;
    let objective = Objective::new(cfg.loss, Some(&bases))?;
    evaluate(&params, objective, &data.test, task.classes)
}
