use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use seft::harness::RunReport;

use crate::manifest::write_manifest;
use crate::{CliError, CliResult, Verbosity};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a train invocation.
    #[arg(long)]
    from: PathBuf,

    /// Where to write `report.md`; defaults to `<from>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Mean metrics of one (task, policy, plan) cell across seeds.
#[derive(Debug, Default, Serialize)]
struct Row {
    runs: usize,
    accuracy: f64,
    label_accuracy: f64,
    cost_saving: f64,
    diverged: usize,
}

fn table(reports: &[RunReport]) -> String {
    let mut rows: BTreeMap<(String, String), Row> = BTreeMap::new();
    for r in reports {
        let method = r
            .plan
            .clone()
            .map_or(r.policy.clone(), |p| format!("{} ({p})", r.policy));
        let row = rows.entry((r.task.clone(), method)).or_default();
        row.runs += 1;
        row.accuracy += r.accuracy;
        row.label_accuracy += r.label_accuracy;
        row.cost_saving += r.cost_saving;
        row.diverged += usize::from(r.divergence.is_some());
    }
    let mut out = String::from(
        "| task | method | runs | accuracy | label accuracy | cost saving | diverged |\n\
         |---|---|---:|---:|---:|---:|---:|\n",
    );
    for ((task, method), row) in &rows {
        let n = row.runs as f64;
        let _ = writeln!(
            out,
            "| {task} | {method} | {} | {:.4} | {:.4} | {:.3} | {} |",
            row.runs,
            row.accuracy / n,
            row.label_accuracy / n,
            row.cost_saving / n,
            row.diverged
        );
    }
    out
}

pub fn run(args: ReportArgs, v: Verbosity) -> CliResult<()> {
    let path = args.from.join("summary.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let reports: Vec<RunReport> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if reports.is_empty() {
        return Err(CliError::Data(format!("{}: no runs", path.display())));
    }
    let md = table(&reports);
    v.summary(md.trim_end());

    let dir = args.out.unwrap_or_else(|| args.from.join("report"));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.md"), &md)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        from: &'a PathBuf,
        runs: usize,
    }
    let resolved = Resolved {
        from: &args.from,
        runs: reports.len(),
    };
    write_manifest(&dir, "report", &resolved, vec!["report.md".into()])?;
    v.progress(format!("wrote {}", dir.display()));
    Ok(())
}
