//! Deviation analysis of recorded traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::budget::{make_plan, Growth, MAX_PLAN_LAYERS};
use crate::error::{Result, SeftError};
use crate::freezing::seft_select_eof;
use crate::harness::{violin_rows, ViolinRow};
use crate::linalg::{self, Matrix, Vector};
use crate::semantics::{
    BaseSide, DeviationMeasure, DeviationProfile, SemanticBases, TransitionTrace,
};

use super::TraceFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAnalysis {
    pub index: usize,
    pub medium_token: usize,
    pub label: usize,
    pub deviations: Vec<f64>,
    pub eof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecommendation {
    pub growth: Growth,
    pub quotas: Vec<usize>,
    pub expected_saving: f64,
    /// Slots a best-case loader order could fill with compatible records.
    pub fillable_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub model: String,
    pub layers: usize,
    pub measure: DeviationMeasure,
    pub records: Vec<RecordAnalysis>,
    pub eof_histogram: Vec<usize>,
    /// `mean(eof) / m`: the saving if every record trained at its natural boundary.
    pub expected_saving: f64,
    pub plans: Vec<PlanRecommendation>,
    pub violin: Vec<ViolinRow>,
    /// Records whose last latent already points at its label under output-side similarity.
    pub steering_records: usize,
    /// Of those, how many also have cosine loss below 1.
    pub steering_consistent: usize,
}

impl TraceAnalysis {
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec![
            "index".to_string(),
            "medium_token".into(),
            "label".into(),
            "eof".into(),
        ];
        head.extend((0..=self.layers).map(|k| format!("d{k}")));
        w.write_record(&head)?;
        for r in &self.records {
            let mut row = vec![
                r.index.to_string(),
                r.medium_token.to_string(),
                r.label.to_string(),
                r.eof.to_string(),
            ];
            row.extend(r.deviations.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eof", "count"])?;
        for (k, c) in self.eof_histogram.iter().enumerate() {
            w.write_record([k.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bases carried by the trace itself; both matrices must be present.
pub fn bases_from_trace(file: &TraceFile) -> Result<SemanticBases> {
    let h = &file.header;
    match (&file.input_matrix, &file.output_pinv) {
        (Some(input), Some(output)) => SemanticBases::from_rows(
            Matrix::from_f32(h.vocab, h.dim, input)?,
            Matrix::from_f32(h.vocab, h.dim, output)?,
        ),
        _ => Err(SeftError::invalid(
            "trace lacks embedded matrices; supply bases separately",
        )),
    }
}

/// Maximum number of slots fillable when a record with natural boundary `e`
/// may fill any slot at boundary `>= e`.
fn fillable_slots(quotas: &[usize], histogram: &[usize]) -> usize {
    // Deepest slots first, each taking the deepest compatible record left.
    let mut left = histogram.to_vec();
    let mut filled = 0;
    for b in (0..quotas.len()).rev() {
        let mut need = quotas[b];
        for e in (0..=b).rev() {
            let take = need.min(left[e]);
            left[e] -= take;
            need -= take;
            filled += take;
            if need == 0 {
                break;
            }
        }
    }
    filled
}

fn analyze_record(
    file: &TraceFile,
    bases: &SemanticBases,
    measure: DeviationMeasure,
    index: usize,
) -> Result<(RecordAnalysis, bool, bool)> {
    let h = &file.header;
    let r = &file.records[index];
    let latents = r
        .latents
        .chunks_exact(h.dim)
        .map(|c| Vector::new(c.iter().map(|&x| x as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    let trace = TransitionTrace {
        medium_token: r.medium_token as usize,
        label: r.label as usize,
        latents,
    };
    let profile = bases
        .deviation_profile(&trace, measure)
        .map_err(|e| SeftError::invalid(format!("record {index}: {e}")))?;
    let eof = seft_select_eof(&profile, h.layers)?;

    let last = &trace.latents[h.layers];
    let logits = bases.similarity_logits(BaseSide::Output, last)?;
    let top = crate::model::argmax(&logits);
    let steering = top == trace.label;
    let consistent = steering && bases.semantic_cos_loss(last, trace.label)? < 1.0;
    Ok((
        RecordAnalysis {
            index,
            medium_token: trace.medium_token,
            label: trace.label,
            deviations: profile.deviations,
            eof,
        },
        steering,
        consistent,
    ))
}

/// Per-record profiles and natural boundaries, plus aggregates that do not
/// depend on record order. Records are processed in parallel and merged in
/// index order.
pub fn analyze_trace(
    file: &TraceFile,
    measure: DeviationMeasure,
    bases: Option<&SemanticBases>,
) -> Result<TraceAnalysis> {
    file.validate()?;
    let h = &file.header;
    let m = h.layers;
    if m < 2 {
        return Err(SeftError::invalid("analysis needs at least 2 layers"));
    }
    let owned;
    let bases = match bases {
        Some(b) => b,
        None => {
            owned = bases_from_trace(file)?;
            &owned
        }
    };
    if bases.dim() != h.dim || bases.vocab() != h.vocab {
        return Err(SeftError::shape(format!(
            "bases are {}x{}, trace declares {}x{}",
            bases.vocab(),
            bases.dim(),
            h.vocab,
            h.dim
        )));
    }

    let n = file.records.len();
    let workers = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(n.max(1));
    let chunk = n.div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<(RecordAnalysis, bool, bool)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                s.spawn(move || {
                    (start..(start + chunk).min(n))
                        .map(|i| analyze_record(file, bases, measure, i))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("analysis worker panicked"))
            .collect()
    });

    let mut records = Vec::with_capacity(n);
    let mut steering_records = 0;
    let mut steering_consistent = 0;
    for part in parts {
        for (rec, steer, ok) in part? {
            steering_records += steer as usize;
            steering_consistent += ok as usize;
            records.push(rec);
        }
    }

    let mut eof_histogram = vec![0; m];
    for r in &records {
        eof_histogram[r.eof] += 1;
    }
    let expected_saving = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| r.eof).sum::<usize>() as f64 / (n * m) as f64
    };

    let mut plans = Vec::new();
    if n > 0 && m <= MAX_PLAN_LAYERS {
        for growth in [Growth::Arithmetic, Growth::Geometric] {
            let plan = make_plan(growth, m, n)?;
            plans.push(PlanRecommendation {
                growth,
                fillable_slots: fillable_slots(&plan.quotas, &eof_histogram),
                expected_saving: plan.expected_saving(),
                quotas: plan.quotas,
            });
        }
    }

    let violin = if n == 0 {
        Vec::new()
    } else {
        // Summaries are built from rows sorted per layer, so record order cannot leak in.
        let profiles: Vec<DeviationProfile> = records
            .iter()
            .map(|r| DeviationProfile {
                deviations: r.deviations.clone(),
                measure,
            })
            .collect();
        violin_rows(&profiles, "trace")?
    };

    Ok(TraceAnalysis {
        model: h.model.clone(),
        layers: m,
        measure,
        records,
        eof_histogram,
        expected_saving,
        plans,
        violin,
        steering_records,
        steering_consistent,
    })
}

/// Convenience for callers that hold a trace and want a quick cosine check.
pub fn last_layer_cosine(file: &TraceFile, bases: &SemanticBases, index: usize) -> Result<f64> {
    let h = &file.header;
    let r = file.records.get(index).ok_or(SeftError::IndexOutOfRange {
        what: "records",
        index,
        len: file.records.len(),
    })?;
    let last: Vec<f64> = r.latents[h.layers * h.dim..]
        .iter()
        .map(|&x| x as f64)
        .collect();
    linalg::cosine_similarity(&last, bases.output_base(r.label as usize)?)
}
