//! Prediction CSV.
//!
//! Columns: `subject_id,session_id,true_age_years,predicted_stage,
//! fused_age_years,modalities_used`, then for each modality `age_<m>`
//! (regressed under the fused stage), `stage_<m>` (that modality's own
//! argmax) and `solo_age_<m>` (regressed under its own stage). Per-modality
//! cells are empty when the modality is missing. `modalities_used` joins
//! names with `;`. Reals use the shortest decimal that round-trips.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::AgePrediction;
use crate::error::{Error, Result};
use crate::staging::Stage;
use crate::volume::Modality;

pub const BASE_COLUMNS: [&str; 6] = [
    "subject_id",
    "session_id",
    "true_age_years",
    "predicted_stage",
    "fused_age_years",
    "modalities_used",
];

/// One modality's predictions for a subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityPrediction {
    pub age: f64,
    pub solo_stage: Stage,
    pub solo_age: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub subject_id: String,
    pub session_id: String,
    pub true_age: f64,
    pub predicted_stage: Stage,
    pub fused_age: f64,
    pub per_modality: BTreeMap<Modality, ModalityPrediction>,
}

impl From<&AgePrediction> for PredictionRow {
    fn from(p: &AgePrediction) -> Self {
        let per_modality = p
            .per_modality_age
            .iter()
            .map(|(&m, &age)| {
                let (solo_stage, solo_age) = p.solo[&m];
                (m, ModalityPrediction { age, solo_stage, solo_age })
            })
            .collect();
        Self {
            subject_id: p.subject_id.clone(),
            session_id: p.session_id.clone(),
            true_age: p.true_age,
            predicted_stage: p.predicted_stage,
            fused_age: p.fused_age,
            per_modality,
        }
    }
}

pub fn prediction_header() -> Vec<String> {
    let mut h: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for m in Modality::ALL {
        h.push(format!("age_{m}"));
        h.push(format!("stage_{m}"));
        h.push(format!("solo_age_{m}"));
    }
    h
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("prediction CSV: {e}"))
}

pub fn predictions_to_csv(rows: &[PredictionRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(prediction_header()).map_err(csv_err)?;
    for r in rows {
        let used: Vec<&str> = r.per_modality.keys().map(|m| m.name()).collect();
        let mut rec = vec![
            r.subject_id.clone(),
            r.session_id.clone(),
            r.true_age.to_string(),
            r.predicted_stage.to_string(),
            r.fused_age.to_string(),
            used.join(";"),
        ];
        for m in Modality::ALL {
            match r.per_modality.get(&m) {
                Some(p) => rec.extend([p.age.to_string(), p.solo_stage.to_string(), p.solo_age.to_string()]),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Data(format!("bad {what} `{s}`")))
}

pub fn predictions_from_csv(text: &str) -> Result<Vec<PredictionRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != prediction_header() {
        return Err(Error::Data(format!("unexpected prediction header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        let mut per_modality = BTreeMap::new();
        for (k, m) in Modality::ALL.into_iter().enumerate() {
            let base = BASE_COLUMNS.len() + 3 * k;
            if f(base).is_empty() {
                continue;
            }
            per_modality.insert(
                m,
                ModalityPrediction {
                    age: parse_f64(f(base), "age")?,
                    solo_stage: f(base + 1).parse()?,
                    solo_age: parse_f64(f(base + 2), "age")?,
                },
            );
        }
        let used: Vec<Modality> = if f(5).is_empty() {
            Vec::new()
        } else {
            f(5).split(';').map(str::parse).collect::<Result<_>>()?
        };
        if used != per_modality.keys().copied().collect::<Vec<_>>() {
            return Err(Error::Data(format!("{}: modalities_used disagrees with columns", f(0))));
        }
        if used.is_empty() {
            return Err(Error::Data(format!("{}: no modalities", f(0))));
        }
        rows.push(PredictionRow {
            subject_id: f(0).to_string(),
            session_id: f(1).to_string(),
            true_age: parse_f64(f(2), "true age")?,
            predicted_stage: f(3).parse()?,
            fused_age: parse_f64(f(4), "fused age")?,
            per_modality,
        });
    }
    Ok(rows)
}

pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, predictions_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "brainage predict".into(),
        });
    }
    predictions_from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<PredictionRow> {
        vec![
            PredictionRow {
                subject_id: "sub-00001".into(),
                session_id: "ses-1".into(),
                true_age: 0.1 + 0.2,
                predicted_stage: Stage::Neonatal,
                fused_age: 0.123456789012345,
                per_modality: BTreeMap::from([
                    (Modality::T1w, ModalityPrediction { age: 0.1, solo_stage: Stage::Neonatal, solo_age: 0.1 }),
                    (Modality::Fa, ModalityPrediction { age: 0.2, solo_stage: Stage::Infant, solo_age: 0.3 }),
                ]),
            },
            PredictionRow {
                subject_id: "sub-00002".into(),
                session_id: "ses-1".into(),
                true_age: 70.0,
                predicted_stage: Stage::Elderly,
                fused_age: 71.5,
                per_modality: BTreeMap::from([(
                    Modality::T2w,
                    ModalityPrediction { age: 71.5, solo_stage: Stage::Elderly, solo_age: 71.5 },
                )]),
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let text = predictions_to_csv(&rows()).unwrap();
        assert!(text.starts_with("subject_id,session_id,true_age_years,predicted_stage,fused_age_years,modalities_used,age_T1w,"));
        assert!(text.contains("T1w;FA"));
        assert_eq!(predictions_from_csv(&text).unwrap(), rows());
        assert_eq!(predictions_to_csv(&predictions_from_csv(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn inconsistent_rows_are_rejected() {
        let text = predictions_to_csv(&rows()).unwrap().replace("T1w;FA", "T1w");
        assert!(predictions_from_csv(&text).is_err());
    }
}
