//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so the
//! lines come out in order; exits non-zero if any criterion fails.

#[path = "support/fixtures.rs"]
mod fixtures;
#[path = "support/oracle.rs"]
mod oracle;
#[path = "support/random.rs"]
mod random;
#[path = "support/tape.rs"]
mod tape;
#[path = "support/traces.rs"]
mod traces;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seft::budget::{
    budgeted_training_run, infill_order, make_plan, schedule_batches, Growth, InfillOrder,
};
use seft::freezing::{cost_saving, PolicyKind, PolicyState};
use seft::harness::{run_experiment, ExperimentConfig, TaskKind, TaskSpec};
use seft::model::{
    forward_with_latents, loss_and_gradients, Adam, AdamConfig, FreezeDecision, Gradients,
    ModelParams, ModuleMask, Objective,
};
use seft::semantics::{DeviationMeasure, DeviationProfile, SemanticBases};
use seft::traceio::TraceFile;

use fixtures::*;
use random::*;

/// Reference cost savings the analytic values are compared against.
const REFERENCE_LIFT_SAVING: f64 = 0.484;
const REFERENCE_ARITH_SAVING: f64 = 0.644;
const REFERENCE_TOL: f64 = 0.001;
const ARITH_TOL: f64 = 0.002;
const GEOMETRIC_TARGET: f64 = 0.9375;

const D0_TOL: f64 = 1e-6;
const FREEZE_EQ_TOL: f64 = 1e-12;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

const E2E_SEEDS: u64 = 5;
const E2E_ACCURACY_SLACK: f64 = 0.02;
const E2E_MIN_SAVING: f64 = 0.40;
const E2E_BUDGET: Duration = Duration::from_secs(600);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn cost_equalities() -> Outcome {
    let m = 32;
    let n = 10 * m;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut saving = |kind| {
        let mut state = PolicyState::new(kind, m, n, ModuleMask::Both).unwrap();
        let decisions: Vec<_> = (0..n)
            .map(|_| {
                let profile = DeviationProfile {
                    deviations: (0..=m)
                        .map(|k| {
                            if k == 0 {
                                0.0
                            } else {
                                rng.random_range(0.0..2.0)
                            }
                        })
                        .collect(),
                    measure: DeviationMeasure::CosineToAnchor,
                };
                state.select(Some(&profile)).unwrap()
            })
            .collect();
        cost_saving(&decisions, m).unwrap()
    };
    let full = saving(PolicyKind::NaiveFull);
    let half = saving(PolicyKind::NaiveHalf);
    let lift = saving(PolicyKind::LiftFront);
    let seft_half = saving(PolicyKind::SeftHalf);
    let exact = 15.5 / 32.0;
    check(full == 0.0, format!("naive_full {full}"))?;
    check(half == 0.5, format!("naive_half {half}"))?;
    for (name, v) in [("lift_front", lift), ("seft_half", seft_half)] {
        check(v == exact, format!("{name} {v} != {exact}"))?;
        check(
            (v - REFERENCE_LIFT_SAVING).abs() <= REFERENCE_TOL,
            format!("{name} {v} vs {REFERENCE_LIFT_SAVING}"),
        )?;
    }
    Ok(format!(
        "naive_full {full:.3}, naive_half {half:.3}, lift_front {lift}, seft_half {seft_half}"
    ))
}

fn budget_arithmetic() -> Outcome {
    let m = 32;
    // exact proportions: N a multiple of the weight sums
    let arith = make_plan(Growth::Arithmetic, m, 528 * 4)
        .unwrap()
        .expected_saving();
    let arith_closed = 10912.0 / 16896.0;
    check(
        (arith - arith_closed).abs() < 1e-12,
        format!("arithmetic {arith} vs {arith_closed}"),
    )?;
    check(
        (arith - REFERENCE_ARITH_SAVING).abs() <= ARITH_TOL,
        format!("arithmetic {arith} vs {REFERENCE_ARITH_SAVING}"),
    )?;

    let geom = make_plan(Growth::Geometric, m, (1usize << 32) - 1)
        .unwrap()
        .expected_saving();
    let two32 = 2f64.powi(32);
    let geom_closed = (30.0 * two32 + 2.0) / (32.0 * (two32 - 1.0));
    check(
        (geom - geom_closed).abs() < 1e-12,
        format!("geometric {geom} vs {geom_closed}"),
    )?;
    check(
        (geom - GEOMETRIC_TARGET).abs() < 1e-3,
        format!("geometric {geom} vs {GEOMETRIC_TARGET}"),
    )?;

    // Why a geometric budget goes unfulfilled in practice: a slot at boundary b
    // only takes batches whose natural eof is at most b, and when the model
    // prefers deep boundaries the shallow slots find no taker.
    // At m = 32 the shallow quotas round to zero for any practical N, so the
    // effect shows on a smaller plan with exact proportions.
    let (m, n) = (8, 255);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eofs: Vec<usize> = (0..n).map(|_| rng.random_range(m / 2..m)).collect();
    let plan = make_plan(Growth::Geometric, m, n).unwrap();
    let mut notes = Vec::new();
    for order in [InfillOrder::BreadthFirst, InfillOrder::DepthFirst] {
        let ledger = schedule_batches(&eofs, &plan, &infill_order(&plan, order)).unwrap();
        notes.push(format!(
            "{} leaves {} of {n} slots unfilled and forces {} batches, realized {:.4}",
            order.short_name(),
            ledger.unfilled_total(),
            ledger
                .counts(seft::budget::Phase::Forced)
                .iter()
                .sum::<usize>(),
            ledger.realized_saving()
        ));
    }
    println!(
        "  note: geometric plan, m={m}, N={n}, natural eofs uniform on {}..{m}, planned saving {:.4}. \
         {}. Shallow slots stay empty because no batch is allowed to freeze that little; \
         the budget placed there is never spent as planned, and the leftover batches train \
         in the closing pass at the last slot's boundary.",
        m / 2,
        plan.expected_saving(),
        notes.join("; ")
    );
    Ok(format!(
        "arithmetic {arith:.6} (= 10912/16896), geometric {geom:.6} (closed form {geom_closed:.6})"
    ))
}

fn semantics_properties() -> Outcome {
    let params = ModelParams::init(config(4, 16, 2, 20, 1)).unwrap();
    let bases = bases_of(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_d0: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=8);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..20)).collect();
        let (_, trace) = forward_with_latents(&params, &tokens, rng.random_range(0..20)).unwrap();
        let p = bases
            .deviation_profile(&trace, DeviationMeasure::CosineToAnchor)
            .unwrap();
        worst_d0 = worst_d0.max(p.deviations[0].abs());
    }
    check(worst_d0 <= D0_TOL, format!("d_0 reached {worst_d0:e}"))?;

    let mut worst_linear: f64 = 0.0;
    let mut deviations = 0usize;
    for _ in 0..500 {
        let m = rng.random_range(1..40);
        let b: SemanticBases = random_bases(&mut rng, 6, 5);
        let (med, lab) = (rng.random_range(0..6), rng.random_range(0..6));
        let anchors: Vec<_> = (0..=m).map(|k| b.anchor(med, lab, k, m).unwrap()).collect();
        check(
            &anchors[0][..] == b.input_base(med).unwrap(),
            "anchor(0) is not the input base",
        )?;
        check(
            &anchors[m][..] == b.output_base(lab).unwrap(),
            "anchor(m) is not the output base",
        )?;
        for pair in anchors.windows(2).skip(1) {
            for i in 0..5 {
                let step = anchors[1][i] - anchors[0][i];
                worst_linear = worst_linear.max((pair[1][i] - pair[0][i] - step).abs());
            }
        }
        if m >= 2 {
            let trace = random_trace(&mut rng, &b, m);
            for measure in [
                DeviationMeasure::CosineToAnchor,
                DeviationMeasure::CosineToOutputBase,
            ] {
                let p = b.deviation_profile(&trace, measure).unwrap();
                check(
                    p.deviations.iter().all(|d| (0.0..=2.0).contains(d)),
                    format!("{measure:?} outside [0, 2]"),
                )?;
                deviations += p.deviations.len();
            }
        }
    }
    check(
        worst_linear <= LINEAR_TOL,
        format!("anchor step drift {worst_linear:e}"),
    )?;

    let mut worst_penrose: f64 = 0.0;
    let mut shapes = vec![(64, 64), (64, 1), (1, 64), (1, 1)];
    shapes.extend((0..60).map(|_| (rng.random_range(1..=64), rng.random_range(1..=64))));
    for (i, &(r, c)) in shapes.iter().enumerate() {
        let a = if i % 3 == 2 {
            // rank-deficient product
            let k = rng.random_range(1..=r.min(c));
            random_matrix(&mut rng, r, k)
                .matmul(&random_matrix(&mut rng, k, c))
                .unwrap()
        } else {
            random_matrix(&mut rng, r, c)
        };
        worst_penrose = penrose_residuals(&a)
            .into_iter()
            .fold(worst_penrose, f64::max);
    }
    check(
        worst_penrose <= PENROSE_TOL,
        format!("Penrose residual {worst_penrose:e}"),
    )?;
    Ok(format!(
        "max d_0 {worst_d0:.1e}, anchor drift {worst_linear:.1e}, {deviations} deviations in [0, 2], \
         Penrose {worst_penrose:.1e} over {} matrices",
        shapes.len()
    ))
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let params = ModelParams::init(config(2, 16, 2, 16, 7)).unwrap();
    let bases = bases_of(&params);
    let batch = random_batch(16, 2, 4, 3);
    let mut total = 0;
    for loss in LOSSES {
        let (checked, failures) = finite_difference_check(&params, &batch, loss, &bases);
        check(
            checked == params.parameter_count(),
            format!("{loss:?}: checked {checked}"),
        )?;
        check(
            failures.is_empty(),
            format!(
                "{loss:?}: {} failures, first {}",
                failures.len(),
                failures.first().map_or("", |s| s)
            ),
        )?;
        total += checked;
    }
    let took = start.elapsed();
    check(took <= GRADIENT_BUDGET, format!("took {took:?}"))?;
    Ok(format!(
        "{total} entries across 3 losses in {:.1}s",
        took.as_secs_f64()
    ))
}

fn freezing_soundness() -> Outcome {
    let m = 4;
    let init = ModelParams::init(config(m, 8, 2, 12, 2)).unwrap();
    let bases = bases_of(&init);
    for loss in LOSSES {
        let objective = Objective::new(loss, Some(&bases)).unwrap();
        for eof in 0..m {
            let mut p = init.clone();
            let mut adam = Adam::new(AdamConfig::default());
            let freeze = FreezeDecision::suffix(eof, ModuleMask::Both);
            for step in 0..100 {
                let batch = random_batch(12, 4, 5, step);
                let out = loss_and_gradients(&p, &batch, objective, freeze).unwrap();
                adam.apply_update(&mut p, &out.gradients, 1e-2).unwrap();
            }
            for l in 0..eof {
                check(
                    p.block_checksum(l) == init.block_checksum(l),
                    format!("{loss:?} eof {eof}: block {l} moved"),
                )?;
            }
        }
    }

    // eof 0 against an independent unfrozen implementation
    let params = ModelParams::init(config(2, 8, 2, 10, 4)).unwrap();
    let bases = bases_of(&params);
    let batch = random_batch(10, 3, 5, 8);
    let mut worst: f64 = 0.0;
    for (loss, reference_loss) in LOSSES.into_iter().zip([
        tape::RefLoss::Standard,
        tape::RefLoss::SemanticCe,
        tape::RefLoss::SemanticCos,
    ]) {
        let objective = Objective::new(loss, Some(&bases)).unwrap();
        let ours = loss_and_gradients(
            &params,
            &batch,
            objective,
            FreezeDecision::suffix(0, ModuleMask::Both),
        )
        .unwrap()
        .gradients;
        let (_, reference) = tape::reference_gradients(&params, &batch, reference_loss, &bases);
        let mut unfrozen = Gradients::new();
        for (id, g) in reference {
            if ours.contains(id) {
                unfrozen.insert(id, g);
            }
        }
        let (mut a, mut b) = (params.clone(), params.clone());
        Adam::new(AdamConfig::default())
            .apply_update(&mut a, &ours, 1e-3)
            .unwrap();
        Adam::new(AdamConfig::default())
            .apply_update(&mut b, &unfrozen, 1e-3)
            .unwrap();
        for id in params.ids() {
            for (x, y) in a.tensor(id).iter().zip(b.tensor(id)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check(
        worst <= FREEZE_EQ_TOL,
        format!("eof-0 update differs by {worst:e}"),
    )?;
    Ok(format!("blocks below eof bitwise fixed over 100 steps (m={m}, 3 losses); eof-0 update gap {worst:.1e}"))
}

fn scheduler_oracle() -> Outcome {
    let mut cases = 0;
    for m in [4, 8] {
        for n in [m, 37, 120] {
            for growth in [Growth::Geometric, Growth::Arithmetic] {
                for order in [InfillOrder::BreadthFirst, InfillOrder::DepthFirst] {
                    for (name, eofs) in oracle::distributions(m, n, (m * n) as u64) {
                        let plan = make_plan(growth, m, n).unwrap();
                        let sched = infill_order(&plan, order);
                        let mut trained = Vec::new();
                        let ledger = budgeted_training_run(
                            &eofs,
                            &plan,
                            &sched,
                            ModuleMask::Both,
                            |a, _| {
                                trained.push(*a);
                                Ok(())
                            },
                        )
                        .unwrap();
                        let expect = oracle::brute_force(&eofs, &sched.slots, m);
                        let ctx = format!("m={m} n={n} {growth} {order:?} {name}");
                        check(
                            ledger.assignments == expect.assignments
                                && trained == expect.assignments,
                            format!("{ctx}: assignments"),
                        )?;
                        check(
                            ledger.unfilled == expect.unfilled,
                            format!("{ctx}: unfilled"),
                        )?;
                        check(
                            ledger.realized_saving() == expect.saving,
                            format!("{ctx}: saving"),
                        )?;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{cases} cases identical to the slot-by-slot simulation"
    ))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let (mut half_acc, mut seft_acc, mut seft_saving) = (0.0, 0.0, 0.0);
    for seed in 0..E2E_SEEDS {
        let task = TaskSpec::new(TaskKind::TriggerToken, 6, seed);
        let cfg = ExperimentConfig {
            model_seed: seed,
            ..cfg
        };
        let half =
            run_experiment(&cfg, &task, PolicyKind::NaiveHalf, None).map_err(|e| e.to_string())?;
        let seft =
            run_experiment(&cfg, &task, PolicyKind::SeftHalf, None).map_err(|e| e.to_string())?;
        check(
            half.divergence.is_none() && seft.divergence.is_none(),
            format!("seed {seed} diverged"),
        )?;
        half_acc += half.accuracy;
        seft_acc += seft.accuracy;
        seft_saving += seft.cost_saving;
    }
    let k = E2E_SEEDS as f64;
    let (half_acc, seft_acc, seft_saving) = (half_acc / k, seft_acc / k, seft_saving / k);
    let took = start.elapsed();
    let summary = format!(
        "{E2E_SEEDS} seeds: seft_half accuracy {seft_acc:.4}, naive_half {half_acc:.4}, seft_half saving {seft_saving:.4}, {:.0}s",
        took.as_secs_f64()
    );
    check(
        seft_acc >= half_acc - E2E_ACCURACY_SLACK,
        format!("accuracy: {summary}"),
    )?;
    check(seft_saving >= E2E_MIN_SAVING, format!("saving: {summary}"))?;
    check(took <= E2E_BUDGET, format!("runtime: {summary}"))?;
    Ok(summary)
}

fn trace_format() -> Outcome {
    for seed in 0..500 {
        let file = traces::random_file(seed, seed % 2 == 0);
        let bytes = file.encode().unwrap();
        let back = TraceFile::decode(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        check(
            back.encode().unwrap() == bytes,
            format!("seed {seed}: re-encoding differs"),
        )?;
        for (a, b) in file.records.iter().zip(&back.records) {
            check(
                a.latents
                    .iter()
                    .map(|x| x.to_bits())
                    .eq(b.latents.iter().map(|x| x.to_bits())),
                format!("seed {seed}: latent bits differ"),
            )?;
        }
    }
    for seed in 0..20 {
        traces::assert_corruption_classes(&traces::random_file(seed, seed % 2 == 0));
    }
    Ok("500 randomized files bit-exact; corruption classes checked on 20 files".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("cost-saving equalities (m=32)", cost_equalities),
        ("budget arithmetic", budget_arithmetic),
        ("semantics properties", semantics_properties),
        ("gradient oracle", gradient_oracle),
        ("freezing soundness", freezing_soundness),
        ("scheduler oracle", scheduler_oracle),
        ("end-to-end sanity", end_to_end),
        ("trace format", trace_format),
    ];
    // failures are reported on their own line below
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
