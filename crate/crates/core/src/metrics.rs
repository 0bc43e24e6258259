//! Evaluation: per-stage MAE/STD, stage confusion and accuracy.
//!
//! Errors are grouped by the stage of the true age. STD is the population
//! standard deviation of the signed errors `pred - true`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PredictionRow;
use crate::staging::{stage_of, Stage};

/// Counting granularity for classification and regression metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// One item per (subject, modality), using that modality alone.
    PerModality,
    /// One item per subject, using the aggregated stage and fused age.
    PerSubject,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_modality" | "per-modality" | "S" => Ok(EvalMode::PerModality),
            "per_subject" | "per-subject" | "M" => Ok(EvalMode::PerSubject),
            _ => Err(Error::Config(format!("unknown evaluation mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae_years: f64,
    pub std_years: f64,
    pub n: usize,
}

impl ErrorStats {
    fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        Self {
            mae_years: mae,
            std_years: var.sqrt(),
            n: errors.len(),
        }
    }
}

/// Per-stage and overall error statistics of `(true, predicted)` pairs.
/// Stages with no items are absent.
pub fn compute_mae_std(pairs: &[(f64, f64)]) -> Result<(BTreeMap<Stage, ErrorStats>, ErrorStats)> {
    if pairs.is_empty() {
        return Err(Error::Contract("no prediction pairs".into()));
    }
    let mut groups: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(pairs.len());
    for &(truth, pred) in pairs {
        let e = pred - truth;
        groups.entry(stage_of(truth)?).or_default().push(e);
        all.push(e);
    }
    let per_stage = groups.iter().map(|(&s, e)| (s, ErrorStats::from_errors(e))).collect();
    Ok((per_stage, ErrorStats::from_errors(&all)))
}

/// 6×6 counts, rows = true stage, columns = predicted stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; Stage::COUNT]; Stage::COUNT],
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..Stage::COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; Stage::COUNT] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

/// Count `(true_id, predicted_id)` items.
pub fn compute_confusion(items: &[(usize, usize)]) -> Result<Confusion> {
    let mut c = Confusion::default();
    for &(t, p) in items {
        if t >= Stage::COUNT || p >= Stage::COUNT {
            return Err(Error::Contract(format!("invalid stage id in ({t}, {p})")));
        }
        c.counts[t][p] += 1;
    }
    Ok(c)
}

/// Items whose predicted stage is two or more stages away from the truth.
pub fn adjacency_violations(c: &Confusion) -> u64 {
    let mut n = 0;
    for t in 0..Stage::COUNT {
        for p in 0..Stage::COUNT {
            if t.abs_diff(p) >= 2 {
                n += c.counts[t][p];
            }
        }
    }
    n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_stage: BTreeMap<Stage, ErrorStats>,
    pub overall: ErrorStats,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub adjacency_violations: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("evaluation report: {e}")))
    }
}

/// Build a report from prediction rows in the given counting mode.
pub fn evaluate(rows: &[PredictionRow], mode: EvalMode) -> Result<EvalReport> {
    let mut pairs = Vec::new();
    let mut items = Vec::new();
    for r in rows {
        let truth = stage_of(r.true_age)?;
        match mode {
            EvalMode::PerSubject => {
                pairs.push((r.true_age, r.fused_age));
                items.push((truth.id(), r.predicted_stage.id()));
            }
            EvalMode::PerModality => {
                for p in r.per_modality.values() {
                    pairs.push((r.true_age, p.solo_age));
                    items.push((truth.id(), p.solo_stage.id()));
                }
            }
        }
    }
    let (per_stage, overall) = compute_mae_std(&pairs)?;
    let confusion = compute_confusion(&items)?;
    Ok(EvalReport {
        mode,
        per_stage,
        overall,
        accuracy: confusion.accuracy(),
        adjacency_violations: adjacency_violations(&confusion),
        confusion,
    })
}

fn cell(stats: Option<&ErrorStats>) -> String {
    match stats {
        Some(s) => format!("{:.2} / {:.2}", s.mae_years, s.std_years),
        None => "--".into(),
    }
}

/// Plain-text table: MAE / STD per stage, then the confusion matrix.
pub fn render_report(r: &EvalReport) -> String {
    let mode = match r.mode {
        EvalMode::PerModality => "per-modality",
        EvalMode::PerSubject => "per-subject",
    };
    let mut out = String::new();
    let _ = writeln!(out, "mode: {mode}  (MAE / STD in years)");
    let mut header = format!("{:<14}", "");
    let mut row = format!("{:<14}", "MAE / STD");
    for s in Stage::ALL {
        let _ = write!(header, "{:>15}", s.name());
        let _ = write!(row, "{:>15}", cell(r.per_stage.get(&s)));
    }
    let _ = write!(header, "{:>15}", "overall");
    let _ = write!(row, "{:>15}", cell(Some(&r.overall)));
    let _ = writeln!(out, "{header}\n{row}");
    let _ = writeln!(out, "n = {}  accuracy = {:.2}  adjacency violations = {}", r.overall.n, r.accuracy, r.adjacency_violations);
    let _ = writeln!(out, "confusion (rows true, columns predicted):");
    for (t, counts) in r.confusion.counts.iter().enumerate() {
        let _ = write!(out, "{:<10}", Stage::ALL[t].name());
        for c in counts {
            let _ = write!(out, "{c:>7}");
        }
        out.push('\n');
    }
    out
}
