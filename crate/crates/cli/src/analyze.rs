use std::fs::{self, File};
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use seft::harness::write_violin_csv;
use seft::semantics::DeviationMeasure;
use seft::traceio::{analyze_trace, read_trace, PlanRecommendation};

use crate::manifest::{write_json, write_manifest};
use crate::{CliError, CliResult, OutArgs, Verbosity};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace file to analyze.
    trace: PathBuf,

    /// cosine_to_anchor, cosine_to_output_base or ce_to_label.
    #[arg(long, default_value = "cosine_to_anchor", value_parser = parse_measure)]
    measure: DeviationMeasure,

    #[command(flatten)]
    out: OutArgs,
}

fn parse_measure(s: &str) -> Result<DeviationMeasure, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown measure '{s}'"))
}

#[derive(Debug, Serialize)]
struct Resolved<'a> {
    trace: &'a PathBuf,
    measure: DeviationMeasure,
}

/// Aggregates only; per-record rows go to `records.csv`.
#[derive(Debug, Serialize)]
struct Summary<'a> {
    model: &'a str,
    layers: usize,
    records: usize,
    measure: DeviationMeasure,
    eof_histogram: &'a [usize],
    expected_saving: f64,
    plans: &'a [PlanRecommendation],
    steering_records: usize,
    steering_consistent: usize,
}

pub fn run(args: AnalyzeArgs, v: Verbosity) -> CliResult<()> {
    if !args.trace.exists() {
        return Err(CliError::Data(format!(
            "{}: file not found",
            args.trace.display()
        )));
    }
    let file = read_trace(&args.trace)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.trace.display())))?;
    v.progress(format!(
        "{}: {} records, m = {}, d = {}, V = {}",
        args.trace.display(),
        file.records.len(),
        file.header.layers,
        file.header.dim,
        file.header.vocab
    ));
    let analysis = analyze_trace(&file, args.measure, None)?;
    let summary = Summary {
        model: &analysis.model,
        layers: analysis.layers,
        records: analysis.records.len(),
        measure: analysis.measure,
        eof_histogram: &analysis.eof_histogram,
        expected_saving: analysis.expected_saving,
        plans: &analysis.plans,
        steering_records: analysis.steering_records,
        steering_consistent: analysis.steering_consistent,
    };

    v.summary(format!("records          {}", summary.records));
    v.summary(format!("eof histogram    {:?}", analysis.eof_histogram));
    v.summary(format!("expected saving  {:.6}", analysis.expected_saving));
    for p in &analysis.plans {
        v.summary(format!(
            "{:<10} plan    expected {:.6}, fillable {}/{}, quotas {:?}",
            p.growth.name(),
            p.expected_saving,
            p.fillable_slots,
            summary.records,
            p.quotas
        ));
    }

    if let Some(dir) = &args.out.out {
        fs::create_dir_all(dir)?;
        analysis.write_records_csv(File::create(dir.join("records.csv"))?)?;
        analysis.write_histogram_csv(File::create(dir.join("histogram.csv"))?)?;
        write_violin_csv(&analysis.violin, File::create(dir.join("violin.csv"))?)?;
        let files = vec![
            "records.csv".to_string(),
            "histogram.csv".to_string(),
            "violin.csv".to_string(),
            write_json(dir, "plans.json", &analysis.plans)?,
            write_json(dir, "analysis.json", &summary)?,
        ];
        let resolved = Resolved {
            trace: &args.trace,
            measure: args.measure,
        };
        write_manifest(dir, "analyze-trace", &resolved, files)?;
        v.progress(format!("wrote {}", dir.display()));
    }
    Ok(())
}
