//! Per-layer distribution summaries of deviation snapshots.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};
use crate::semantics::DeviationProfile;

/// Quantile with linear interpolation between order statistics
/// (`h = (n-1)p`, the default of most statistics packages).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinRow {
    pub layer: usize,
    pub phase: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// 10th through 90th percentiles.
    pub deciles: [f64; 9],
}

pub const VIOLIN_COLUMNS: [&str; 14] = [
    "layer", "phase", "mean", "min", "max", "d10", "d20", "d30", "d40", "d50", "d60", "d70", "d80",
    "d90",
];

/// One row per layer summarizing `profiles` under the label `phase`.
pub fn violin_rows(profiles: &[DeviationProfile], phase: &str) -> Result<Vec<ViolinRow>> {
    let first = profiles
        .first()
        .ok_or_else(|| SeftError::invalid("violin data needs at least one profile"))?;
    let len = first.deviations.len();
    if profiles.iter().any(|p| p.deviations.len() != len) {
        return Err(SeftError::shape("profiles differ in layer count"));
    }
    let mut rows = Vec::with_capacity(len);
    for layer in 0..len {
        let mut xs: Vec<f64> = profiles.iter().map(|p| p.deviations[layer]).collect();
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(SeftError::NonFinite(format!("deviation at layer {layer}")));
        }
        xs.sort_by(f64::total_cmp);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let deciles = std::array::from_fn(|i| quantile_sorted(&xs, (i + 1) as f64 / 10.0));
        rows.push(ViolinRow {
            layer,
            phase: phase.to_string(),
            mean,
            min: xs[0],
            max: xs[xs.len() - 1],
            deciles,
        });
    }
    Ok(rows)
}

pub fn write_violin_csv<W: Write>(rows: &[ViolinRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VIOLIN_COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.layer.to_string(), r.phase.clone()];
        rec.extend([r.mean, r.min, r.max].iter().map(f64::to_string));
        rec.extend(r.deciles.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
