//! Table-shaped evaluation reports with bootstrap confidence intervals.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sparsepose_core::synth::dataset::Sample;
use sparsepose_core::MetricRecord;

use crate::error::{CliError, Result};
use crate::pipeline::{ImputationEval, RegimeOutput};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Mean with a percentile-bootstrap interval over sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Percentile bootstrap of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let at = |q: f64| {
        let i = ((means.len() - 1) as f64 * q).round() as usize;
        means[i]
    };
    Estimate {
        mean,
        ci_low: at(tail),
        ci_high: at(1.0 - tail),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mpjpe_cm: Estimate,
    pub mpjve_cm_s: Estimate,
    pub mpjre_deg: Estimate,
    pub hand_pe_cm: Option<Estimate>,
    pub upper_pe_cm: Option<Estimate>,
    pub lower_pe_cm: Option<Estimate>,
}

impl MetricSummary {
    pub fn from_records(records: &[MetricRecord], resamples: usize, confidence: f64, seed: u64) -> Self {
        let est = |f: &dyn Fn(&MetricRecord) -> f64| {
            let v: Vec<f64> = records.iter().map(f).collect();
            bootstrap_ci(&v, resamples, confidence, seed)
        };
        let opt = |f: &dyn Fn(&MetricRecord) -> Option<f64>| {
            let v: Option<Vec<f64>> = records.iter().map(f).collect();
            v.map(|v| bootstrap_ci(&v, resamples, confidence, seed))
        };
        Self {
            mpjpe_cm: est(&|r| r.mpjpe_cm),
            mpjve_cm_s: est(&|r| r.mpjve_cm_s),
            mpjre_deg: est(&|r| r.mpjre_deg),
            hand_pe_cm: opt(&|r| r.hand_pe_cm),
            upper_pe_cm: opt(&|r| r.upper_pe_cm),
            lower_pe_cm: opt(&|r| r.lower_pe_cm),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub summary: MetricSummary,
    pub per_sequence: Vec<MetricRecord>,
    /// Mean positional variance across generation draws, cm².
    pub draw_variance_cm2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityStats {
    /// Frame counts with 0, 1 and 2 hands visible.
    pub histogram: [usize; 3],
    pub fractions: [f64; 3],
    /// Share of hand-frames that are visible.
    pub hand_visibility_ratio: f64,
}

impl VisibilityStats {
    pub fn of(samples: &[Sample]) -> Self {
        let mut histogram = [0usize; 3];
        for s in samples {
            let h = s.mask.histogram();
            for i in 0..3 {
                histogram[i] += h[i];
            }
        }
        let total: usize = histogram.iter().sum();
        let frac = |c: usize| if total > 0 { c as f64 / total as f64 } else { 0.0 };
        let visible_hands = histogram[1] + 2 * histogram[2];
        Self {
            histogram,
            fractions: [frac(histogram[0]), frac(histogram[1]), frac(histogram[2])],
            hand_visibility_ratio: if total > 0 { visible_hands as f64 / (2 * total) as f64 } else { 0.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationRow {
    pub method: String,
    pub invisible_error_cm: Estimate,
    pub per_sequence_cm: Vec<f64>,
    pub pooled_cm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationSection {
    pub rows: Vec<ImputationRow>,
    pub invisible_hand_frames: usize,
    pub calibration_2sigma: f64,
}

impl ImputationSection {
    pub fn from_eval(e: &ImputationEval, resamples: usize, confidence: f64, seed: u64) -> Self {
        let row = |method: &str, v: &[f64], pooled: f64| ImputationRow {
            method: method.into(),
            invisible_error_cm: bootstrap_ci(v, resamples, confidence, seed),
            per_sequence_cm: v.to_vec(),
            pooled_cm: pooled,
        };
        Self {
            rows: vec![
                row("mae_ensemble", &e.mae_cm, e.pooled_mae_cm),
                row("interpolation", &e.interpolation_cm, e.pooled_interpolation_cm),
            ],
            invisible_hand_frames: e.invisible_hand_frames,
            calibration_2sigma: e.calibration_2sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub split: String,
    pub sequences: usize,
    pub confidence: f64,
    pub bootstrap_resamples: usize,
    pub visibility: VisibilityStats,
    pub rows: Vec<ReportRow>,
    pub imputation: Option<ImputationSection>,
}

impl Report {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub fn report_row(out: &RegimeOutput, resamples: usize, confidence: f64, seed: u64) -> ReportRow {
    let records: Vec<MetricRecord> = out.predictions.iter().map(|p| p.metrics).collect();
    let var = out.predictions.iter().map(|p| p.position_variance).sum::<f64>() / out.predictions.len().max(1) as f64;
    ReportRow {
        name: out.regime.name(),
        summary: MetricSummary::from_records(&records, resamples, confidence, seed),
        per_sequence: records,
        draw_variance_cm2: var * 1e4,
    }
}

fn est_cell(e: &Estimate) -> String {
    format!("{:.2} [{:.2}, {:.2}]", e.mean, e.ci_low, e.ci_high)
}

fn opt_cell(e: &Option<Estimate>) -> String {
    e.as_ref().map_or("-".into(), |e| format!("{:.2}", e.mean))
}

/// Plain-text rendering of the report.
pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let pct = (r.confidence * 100.0).round();
    let _ = writeln!(s, "split {} · {} sequences · {pct}% bootstrap CIs over {} resamples", r.split, r.sequences, r.bootstrap_resamples);
    let _ = writeln!(
        s,
        "visibility: 0 hands {:.1}% · 1 hand {:.1}% · 2 hands {:.1}% · hand ratio {:.3}",
        100.0 * r.visibility.fractions[0],
        100.0 * r.visibility.fractions[1],
        100.0 * r.visibility.fractions[2],
        r.visibility.hand_visibility_ratio
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<32} {:>26} {:>26} {:>26} {:>8} {:>8} {:>8}",
        "regime", "MPJPE cm", "MPJVE cm/s", "MPJRE deg", "Hand", "Upper", "Lower"
    );
    for row in &r.rows {
        let m = &row.summary;
        let _ = writeln!(
            s,
            "{:<32} {:>26} {:>26} {:>26} {:>8} {:>8} {:>8}",
            row.name,
            est_cell(&m.mpjpe_cm),
            est_cell(&m.mpjve_cm_s),
            est_cell(&m.mpjre_deg),
            opt_cell(&m.hand_pe_cm),
            opt_cell(&m.upper_pe_cm),
            opt_cell(&m.lower_pe_cm)
        );
    }
    if let Some(imp) = &r.imputation {
        let _ = writeln!(s);
        let _ = writeln!(s, "hand imputation on {} invisible hand-frames", imp.invisible_hand_frames);
        for row in &imp.rows {
            let _ = writeln!(s, "{:<32} {:>26} pooled {:.2}", row.method, est_cell(&row.invisible_error_cm), row.pooled_cm);
        }
        let _ = writeln!(s, "{:<32} {:>26.3}", "within ±2σ (aleatoric)", imp.calibration_2sigma);
    }
    s
}

/// Structural check of a report document against the current schema.
pub fn validate_report_json(v: &Value) -> Result<()> {
    let bad = |m: &str| Err(CliError::Config(format!("report does not match schema: {m}")));
    if v.get("schema_version").and_then(Value::as_u64) != Some(REPORT_SCHEMA_VERSION as u64) {
        return bad("schema_version");
    }
    for key in ["split", "sequences", "confidence", "bootstrap_resamples", "visibility", "rows"] {
        if v.get(key).is_none() {
            return bad(key);
        }
    }
    let hist = v["visibility"]["histogram"].as_array();
    if hist.is_none_or(|h| h.len() != 3 || h.iter().any(|x| !x.is_u64())) {
        return bad("visibility.histogram");
    }
    let Some(rows) = v["rows"].as_array() else {
        return bad("rows");
    };
    for row in rows {
        if !row["name"].is_string() || !row["per_sequence"].is_array() {
            return bad("row name or per_sequence");
        }
        for metric in ["mpjpe_cm", "mpjve_cm_s", "mpjre_deg"] {
            let e = &row["summary"][metric];
            for k in ["mean", "ci_low", "ci_high"] {
                if !e[k].is_number() {
                    return bad(&format!("{metric}.{k}"));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_brackets_the_mean_and_shrinks_with_more_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(0.0..10.0)).collect::<Vec<f64>>();
        let small = bootstrap_ci(&draw(100, &mut rng), 1000, 0.95, 1);
        let large = bootstrap_ci(&draw(400, &mut rng), 1000, 0.95, 1);
        assert!(small.ci_low <= small.mean && small.mean <= small.ci_high);
        let ratio = small.width() / large.width();
        assert!((1.6..2.5).contains(&ratio), "width ratio {ratio}");
        let flat = bootstrap_ci(&[2.0; 10], 100, 0.95, 0);
        assert_eq!((flat.mean, flat.ci_low, flat.ci_high), (2.0, 2.0, 2.0));
    }

    #[test]
    fn identical_records_give_a_zero_row_that_validates() {
        let zero = MetricRecord {
            mpjpe_cm: 0.0,
            mpjve_cm_s: 0.0,
            mpjre_deg: 0.0,
            hand_pe_cm: Some(0.0),
            upper_pe_cm: Some(0.0),
            lower_pe_cm: None,
        };
        let report = Report {
            schema_version: REPORT_SCHEMA_VERSION,
            split: "test".into(),
            sequences: 2,
            confidence: 0.95,
            bootstrap_resamples: 10,
            visibility: VisibilityStats {
                histogram: [4, 0, 0],
                fractions: [1.0, 0.0, 0.0],
                hand_visibility_ratio: 0.0,
            },
            rows: vec![ReportRow {
                name: "x".into(),
                summary: MetricSummary::from_records(&[zero, zero], 10, 0.95, 0),
                per_sequence: vec![zero, zero],
                draw_variance_cm2: 0.0,
            }],
            imputation: None,
        };
        assert_eq!(report.rows[0].summary.mpjpe_cm.mean, 0.0);
        assert!(report.rows[0].summary.lower_pe_cm.is_none());
        let v = serde_json::to_value(&report).unwrap();
        validate_report_json(&v).unwrap();
        let mut broken = v.clone();
        broken["schema_version"] = 99.into();
        assert!(validate_report_json(&broken).is_err());
        assert!(render_text(&report).contains("0 hands 100.0%"));
    }
}
