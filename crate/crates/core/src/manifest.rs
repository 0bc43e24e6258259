//! Cohort manifest: one CSV row per (subject-session, modality) volume.
//!
//! Header `subject_id,session_id,age_years,stage,modality,path`; `path` is
//! relative to the manifest's directory and ages carry 9 significant digits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::staging::{Stage, UnifiedAge};
use crate::synth::{fmt_sig9, Sample};
use crate::volume::{read_vol, write_vol, Modality};

pub const MANIFEST_HEADER: [&str; 6] = ["subject_id", "session_id", "age_years", "stage", "modality", "path"];
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub subject_id: String,
    pub session_id: String,
    pub age_years: f64,
    pub stage: Stage,
    pub modality: Modality,
    pub path: PathBuf,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Write one `.vol` per (sample, modality) under `dir/volumes` plus `dir/manifest.csv`.
pub fn export_cohort(samples: &[Sample], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&manifest)
        .map_err(|e| csv_err(&manifest, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(&manifest, e))?;
    for s in samples {
        for (m, v) in &s.volumes {
            let rel = format!("volumes/{}_{}_{}.vol", s.subject_id, s.session_id, m.name());
            write_vol(dir.join(&rel), v)?;
            w.write_record([
                s.subject_id.as_str(),
                s.session_id.as_str(),
                &fmt_sig9(s.age.years()),
                s.stage.name(),
                m.name(),
                &rel,
            ])
            .map_err(|e| csv_err(&manifest, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "brainage synth".into(),
        });
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected manifest header {:?}",
            path.display(),
            header
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let age_years: f64 = field(2)
            .parse()
            .map_err(|_| Error::Data(format!("bad age `{}`", field(2))))?;
        let stage: Stage = field(3).parse()?;
        let age = UnifiedAge::new(age_years).map_err(|e| Error::Data(e.to_string()))?;
        if age.stage() != stage {
            return Err(Error::Data(format!(
                "{}: age {age_years} is not in stage {stage}",
                field(0)
            )));
        }
        rows.push(ManifestRow {
            subject_id: field(0).to_string(),
            session_id: field(1).to_string(),
            age_years,
            stage,
            modality: field(4).parse()?,
            path: PathBuf::from(field(5)),
        });
    }
    Ok(rows)
}

/// Rebuild samples from a manifest, in order of first appearance.
pub fn import_cohort(manifest: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(manifest)?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut grouped: BTreeMap<(String, String), (f64, BTreeMap<Modality, _>)> = BTreeMap::new();
    for row in rows {
        let key = (row.subject_id.clone(), row.session_id.clone());
        let v = read_vol(base.join(&row.path))?.with_modality(row.modality);
        let entry = grouped.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (row.age_years, BTreeMap::new())
        });
        if entry.0 != row.age_years {
            return Err(Error::Data(format!("{}: inconsistent ages", row.subject_id)));
        }
        if entry.1.insert(row.modality, v).is_some() {
            return Err(Error::Data(format!("{}: duplicate {}", row.subject_id, row.modality)));
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (age, vols) = grouped.remove(&key).expect("grouped key");
            Sample::new(key.0, key.1, UnifiedAge::new(age)?, vols)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, CohortConfig};

    #[test]
    fn export_import_round_trip() {
        let cfg = CohortConfig {
            n_per_stage: 2,
            volume_dim: 16,
            missing_prob: 0.0,
            ..CohortConfig::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_cohort(&cohort, dir.path()).unwrap();
        let rows = read_manifest(&manifest).unwrap();
        assert_eq!(rows.len(), 36);
        let vols = fs::read_dir(dir.path().join("volumes")).unwrap().count();
        assert_eq!(vols, 36);
        for r in &rows {
            let s = cohort.iter().find(|s| s.subject_id == r.subject_id).unwrap();
            assert_eq!(r.age_years, s.age.years());
        }
        let back = import_cohort(&manifest).unwrap();
        assert_eq!(back, cohort);
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.starts_with("subject_id,session_id,age_years,stage,modality,path\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn missing_manifest_names_producer() {
        let err = read_manifest("/nonexistent/manifest.csv").unwrap_err();
        assert!(err.to_string().contains("brainage synth"), "{err}");
    }
}
