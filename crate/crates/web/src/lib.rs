//! Browser demo: budget plans, deviation routes on a random toy decoder, and
//! the budgeted scheduler. Each export takes plain arguments and returns JSON.
//!
//! The `*_json` functions are ordinary Rust so they can be tested natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use seft::budget::{infill_order, make_plan, schedule_batches, Assignment, Growth, InfillOrder};
use seft::freezing::seft_select_eof;
use seft::model::{forward_with_latents, ModelConfig, ModelParams};
use seft::semantics::{DeviationMeasure, SemanticBases};

/// Largest model the route explorer will build in the page.
pub const MAX_DIM: usize = 64;
pub const MAX_LAYERS: usize = 16;
pub const MAX_RECORDS: usize = 256;
/// Largest batch count the scheduler simulator accepts.
pub const MAX_SIM_BATCHES: usize = 5000;

fn parse<T: std::str::FromStr<Err = seft::SeftError>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: seft::SeftError| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct PlanView {
    growth: Growth,
    order: InfillOrder,
    quotas: Vec<usize>,
    slots: Vec<usize>,
    expected_saving: f64,
}

pub fn plan_budget_json(
    growth: &str,
    layers: usize,
    batches: usize,
    order: &str,
) -> Result<String, String> {
    let plan = make_plan(parse(growth)?, layers, batches).map_err(|e| e.to_string())?;
    let order: InfillOrder = parse(order)?;
    let schedule = infill_order(&plan, order);
    to_json(&PlanView {
        growth: plan.growth,
        order,
        expected_saving: plan.expected_saving(),
        quotas: plan.quotas,
        slots: schedule.slots,
    })
}

#[derive(Debug, Serialize)]
struct RouteRecord {
    tokens: Vec<usize>,
    label: usize,
    deviations: Vec<f64>,
    eof: usize,
}

#[derive(Debug, Serialize)]
struct RouteView {
    layers: usize,
    measure: DeviationMeasure,
    records: Vec<RouteRecord>,
    mean: Vec<f64>,
    eof_histogram: Vec<usize>,
    expected_saving: f64,
}

/// Deviation profiles of random prompts through a freshly initialized decoder.
pub fn deviation_routes_json(
    layers: usize,
    dim: usize,
    vocab: usize,
    records: usize,
    measure: &str,
    seed: u64,
) -> Result<String, String> {
    if !(2..=MAX_LAYERS).contains(&layers) || dim > MAX_DIM || records == 0 || records > MAX_RECORDS
    {
        return Err(format!(
            "need 2 <= layers <= {MAX_LAYERS}, dim <= {MAX_DIM}, 1 <= records <= {MAX_RECORDS}"
        ));
    }
    let measure: DeviationMeasure =
        serde_json::from_value(serde_json::Value::String(measure.into()))
            .map_err(|_| format!("unknown measure '{measure}'"))?;
    let heads = if dim.is_multiple_of(4) { 4 } else { 1 };
    let params = ModelParams::init(ModelConfig {
        layers,
        dim,
        heads,
        vocab,
        context_len: 8,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let bases = SemanticBases::build(&params.embedding_matrix(), &params.head_matrix())
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    let mut out = Vec::with_capacity(records);
    let mut mean = vec![0.0; layers + 1];
    let mut histogram = vec![0; layers];
    for _ in 0..records {
        let len = rng.random_range(1..=8);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
        let label = rng.random_range(0..vocab);
        let (_, trace) =
            forward_with_latents(&params, &tokens, label).map_err(|e| e.to_string())?;
        let profile = bases
            .deviation_profile(&trace, measure)
            .map_err(|e| e.to_string())?;
        let eof = seft_select_eof(&profile, layers).map_err(|e| e.to_string())?;
        for (m, d) in mean.iter_mut().zip(&profile.deviations) {
            *m += d / records as f64;
        }
        histogram[eof] += 1;
        out.push(RouteRecord {
            tokens,
            label,
            deviations: profile.deviations,
            eof,
        });
    }
    let expected_saving =
        out.iter().map(|r| r.eof).sum::<usize>() as f64 / (records * layers) as f64;
    to_json(&RouteView {
        layers,
        measure,
        records: out,
        mean,
        eof_histogram: histogram,
        expected_saving,
    })
}

/// Natural eofs for the simulator: uniform, shallow, deep or last.
pub fn synthetic_eofs(
    distribution: &str,
    layers: usize,
    batches: usize,
    seed: u64,
) -> Result<Vec<usize>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || rng.random_range(0..layers);
    Ok(match distribution {
        "uniform" => (0..batches).map(|_| draw()).collect(),
        "shallow" => (0..batches).map(|_| draw().min(draw())).collect(),
        "deep" => (0..batches).map(|_| draw().max(draw())).collect(),
        "last" => vec![layers - 1; batches],
        _ => return Err(format!("unknown distribution '{distribution}'")),
    })
}

#[derive(Debug, Serialize)]
struct SchedulerView {
    quotas: Vec<usize>,
    slots: Vec<usize>,
    natural_eofs: Vec<usize>,
    assignments: Vec<Assignment>,
    slot_counts: Vec<usize>,
    forced_counts: Vec<usize>,
    unfilled: Vec<usize>,
    expected_saving: f64,
    realized_saving: f64,
}

pub fn simulate_scheduler_json(
    growth: &str,
    order: &str,
    layers: usize,
    batches: usize,
    distribution: &str,
    seed: u64,
) -> Result<String, String> {
    if batches == 0 || batches > MAX_SIM_BATCHES {
        return Err(format!("batches must be in 1..={MAX_SIM_BATCHES}"));
    }
    if layers < 2 {
        return Err("need at least 2 layers".into());
    }
    let plan = make_plan(parse(growth)?, layers, batches).map_err(|e| e.to_string())?;
    let schedule = infill_order(&plan, parse(order)?);
    let eofs = synthetic_eofs(distribution, layers, batches, seed)?;
    let ledger = schedule_batches(&eofs, &plan, &schedule).map_err(|e| e.to_string())?;
    to_json(&SchedulerView {
        expected_saving: plan.expected_saving(),
        realized_saving: ledger.realized_saving(),
        slot_counts: ledger.counts(seft::budget::Phase::Slot),
        forced_counts: ledger.counts(seft::budget::Phase::Forced),
        unfilled: ledger.unfilled.clone(),
        assignments: ledger.assignments,
        quotas: plan.quotas,
        slots: schedule.slots,
        natural_eofs: eofs,
    })
}

#[wasm_bindgen]
pub fn plan_budget(
    growth: &str,
    layers: usize,
    batches: usize,
    order: &str,
) -> Result<String, JsError> {
    plan_budget_json(growth, layers, batches, order).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn deviation_routes(
    layers: usize,
    dim: usize,
    vocab: usize,
    records: usize,
    measure: &str,
    seed: u32,
) -> Result<String, JsError> {
    deviation_routes_json(layers, dim, vocab, records, measure, seed as u64)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_scheduler(
    growth: &str,
    order: &str,
    layers: usize,
    batches: usize,
    distribution: &str,
    seed: u32,
) -> Result<String, JsError> {
    simulate_scheduler_json(growth, order, layers, batches, distribution, seed as u64)
        .map_err(|e| JsError::new(&e))
}
