use std::fs;

use clap::Args;
use serde::Serialize;

use seft::budget::{infill_order, make_plan, BudgetPlan, Growth, InfillOrder};

use crate::manifest::{write_json, write_manifest};
use crate::{CliResult, OutArgs, Verbosity};

/// Slots shown in the infill preview.
const PREVIEW_SLOTS: usize = 48;

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// geometric or arithmetic.
    #[arg(long, value_parser = |s: &str| s.parse::<Growth>().map_err(|e| e.to_string()))]
    growth: Growth,

    /// Number of layers m.
    #[arg(long)]
    layers: usize,

    /// Total batch count N.
    #[arg(long)]
    batches: usize,

    /// Infill order: bf or df.
    #[arg(long, default_value = "bf", value_parser = |s: &str| s.parse::<InfillOrder>().map_err(|e| e.to_string()))]
    order: InfillOrder,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize)]
struct PlanOutput<'a> {
    plan: &'a BudgetPlan,
    order: InfillOrder,
    expected_saving: f64,
    slots: &'a [usize],
}

pub fn run(args: PlanArgs, v: Verbosity) -> CliResult<()> {
    let plan = make_plan(args.growth, args.layers, args.batches)?;
    let schedule = infill_order(&plan, args.order);

    v.summary(format!(
        "{} plan, m = {}, N = {}",
        plan.growth.name(),
        plan.layers(),
        plan.total
    ));
    v.summary("boundary  quota");
    for (k, q) in plan.quotas.iter().enumerate() {
        v.summary(format!("{k:>8}  {q}"));
    }
    let shown: Vec<String> = schedule
        .slots
        .iter()
        .take(PREVIEW_SLOTS)
        .map(usize::to_string)
        .collect();
    let more = schedule.slots.len().saturating_sub(PREVIEW_SLOTS);
    v.summary(format!(
        "{} order: {}{}",
        args.order.short_name(),
        shown.join(" "),
        if more > 0 {
            format!(" ... (+{more})")
        } else {
            String::new()
        }
    ));
    v.summary(format!("expected saving {:.6}", plan.expected_saving()));

    if let Some(dir) = &args.out.out {
        fs::create_dir_all(dir)?;
        let out = PlanOutput {
            plan: &plan,
            order: args.order,
            expected_saving: plan.expected_saving(),
            slots: &schedule.slots,
        };
        let files = vec![write_json(dir, "plan.json", &out)?];
        write_manifest(dir, "plan-budget", &out, files)?;
        v.progress(format!("wrote {}", dir.display()));
    }
    Ok(())
}
