//! Score a predictions CSV in both counting modes and print the tables.
//!
//! cargo run --example evaluate -- runs/acceptance/predictions.csv

use std::collections::BTreeMap;

use brainage::metrics::{evaluate, render_report, EvalMode};
use brainage::pipeline::{read_predictions, ModalityPrediction, PredictionRow};
use brainage::staging::Stage;
use brainage::volume::Modality;

fn demo_rows() -> Vec<PredictionRow> {
    let cases = [
        (-0.2, Stage::Fetal, -0.18, Stage::Fetal),
        (0.1, Stage::Neonatal, 0.12, Stage::Infant),
        (1.5, Stage::Infant, 1.1, Stage::Infant),
        (9.0, Stage::Child, 10.2, Stage::Child),
        (44.0, Stage::Adult, 41.0, Stage::Adult),
        (77.0, Stage::Elderly, 74.5, Stage::Adult),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, &(truth, stage, fused, solo))| PredictionRow {
            subject_id: format!("sub-{i:05}"),
            session_id: "ses-1".into(),
            true_age: truth,
            predicted_stage: stage,
            fused_age: fused,
            per_modality: BTreeMap::from([
                (Modality::T1w, ModalityPrediction { age: fused, solo_stage: stage, solo_age: fused }),
                (Modality::T2w, ModalityPrediction { age: fused, solo_stage: solo, solo_age: fused * 0.95 }),
            ]),
        })
        .collect()
}

fn main() -> brainage::Result<()> {
    let rows = match std::env::args().nth(1) {
        Some(path) => read_predictions(path)?,
        None => demo_rows(),
    };
    for mode in [EvalMode::PerSubject, EvalMode::PerModality] {
        let report = evaluate(&rows, mode)?;
        println!("{}", render_report(&report));
    }
    Ok(())
}
