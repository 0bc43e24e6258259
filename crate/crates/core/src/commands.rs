//! The experiment commands behind the `brainage` binary.
//!
//! Each command reads the run configuration, consumes the artifacts of the
//! previous phase from the work directory and writes its own there,
//! together with a copy of the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::error::{Error, Result};
use crate::manifest::{export_cohort, import_cohort, read_manifest, MANIFEST_FILE};
use crate::metrics::{evaluate, render_report, EvalMode, EvalReport};
use crate::nifti::read_nifti1;
use crate::pipeline::{
    init_pretrain, init_rng, init_stage1, init_stage2, load_checkpoint, mae_pretrain, map_ordered, predict_subject,
    read_predictions, save_checkpoint, train_stage1, train_stage2, write_predictions, Checkpoint, PredictionRow,
    StageTag,
};
use crate::preprocess::preprocess;
use crate::synth::{generate_cohort, generate_cohort_at};
use crate::volume::{read_vol, write_vol, Volume};

/// Settings shared by every command.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: RunConfig,
    /// Parallel workers for per-sample work; results do not depend on it.
    pub workers: usize,
    /// Accept checkpoints whose fingerprint differs from the config.
    pub force: bool,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            workers: 1,
            force: false,
            verbose: false,
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write_resolved_config(&self) -> Result<()> {
        let dir = self.config.work_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let text = format!(
            "# fingerprint = {:016x}\n{}",
            self.config.fingerprint(),
            self.config.to_toml()
        );
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn load(&self, path: &Path, tag: StageTag) -> Result<Checkpoint> {
        let ckpt = load_checkpoint(path, Some(tag))?;
        ckpt.check_fingerprint(self.config.fingerprint(), self.force)?;
        ckpt.expect_tag(tag)?;
        Ok(ckpt)
    }

    fn save(&self, tag: StageTag, params: crate::autodiff::ParamStore) -> Result<PathBuf> {
        let path = self.config.checkpoint(tag);
        save_checkpoint(&path, &Checkpoint::new(params, tag, self.config.fingerprint()))?;
        self.log(format!("wrote {}", path.display()));
        Ok(path)
    }
}

/// Generate the train and test cohorts; returns both manifest paths.
pub fn cmd_synth(ctx: &Context) -> Result<(PathBuf, PathBuf)> {
    ctx.write_resolved_config()?;
    let c = &ctx.config;
    let train = generate_cohort(&c.cohort.train())?;
    let (test_cfg, offset) = c.cohort.test();
    let test = generate_cohort_at(&test_cfg, offset)?;
    let dir = c.work_dir();
    let a = export_cohort(&train, dir.join(&c.paths.train_dir))?;
    let b = export_cohort(&test, dir.join(&c.paths.test_dir))?;
    ctx.log(format!("wrote {} train and {} test subjects", train.len(), test.len()));
    Ok((a, b))
}

fn read_any_volume(path: &Path) -> Result<Volume> {
    let name = path.to_string_lossy();
    if name.ends_with(".nii") {
        read_nifti1(path)
    } else {
        read_vol(path)
    }
}

/// Preprocess a manifest's volumes into `output` (a directory, mirrored
/// layout plus manifest) or a single `.nii`/`.vol` file into `output`.
/// Returns the number of volumes written.
pub fn cmd_preprocess(ctx: &Context, input: &Path, output: &Path) -> Result<usize> {
    let cfg = &ctx.config.preprocess;
    if input.extension().is_some_and(|e| e == "csv") {
        let base = input.parent().unwrap_or(Path::new("."));
        let rows = read_manifest(input)?;
        let done = map_ordered(&rows, ctx.workers, |row| {
            let v = read_any_volume(&base.join(&row.path))?.with_modality(row.modality);
            let out = output.join(&row.path);
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_vol(&out, &preprocess(&v, cfg)?)
        })?;
        let dst = output.join(MANIFEST_FILE);
        fs::copy(input, &dst).map_err(|e| Error::io(&dst, e))?;
        ctx.log(format!("preprocessed {} volumes into {}", done.len(), output.display()));
        Ok(done.len())
    } else {
        let v = read_any_volume(input)?;
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_vol(output, &preprocess(&v, cfg)?)?;
        Ok(1)
    }
}

/// Masked-autoencoder pretraining of the shared encoder.
pub fn cmd_pretrain(ctx: &Context) -> Result<PathBuf> {
    ctx.write_resolved_config()?;
    let c = &ctx.config;
    let cohort = import_cohort(c.train_manifest())?;
    let volumes: Vec<&Volume> = cohort.iter().flat_map(|s| s.volumes.values()).collect();
    let mut params = init_pretrain(&c.backbone, &mut init_rng(c.train.seed, 0));
    let every = (c.train.pretrain_steps / 10).max(1);
    mae_pretrain(&c.backbone, &mut params, &volumes, &c.train, ctx.workers, |step, loss| {
        if step % every == 0 || step + 1 == c.train.pretrain_steps {
            ctx.log(format!("pretrain step {step:>5}  loss {loss:.5}"));
        }
    })?;
    ctx.save(StageTag::Pretrain, params)
}

/// Stage-1 classifier training, optionally from a pretrain checkpoint.
pub fn cmd_train_stage1(ctx: &Context, init: Option<&Path>) -> Result<PathBuf> {
    ctx.write_resolved_config()?;
    let c = &ctx.config;
    let cohort = import_cohort(c.train_manifest())?;
    let pre = init.map(|p| ctx.load(p, StageTag::Pretrain)).transpose()?;
    let mut params = init_stage1(&c.backbone, pre.as_ref().map(|k| &k.params), &mut init_rng(c.train.seed, 1))?;
    train_stage1(&c.backbone, &mut params, &cohort, &c.train, ctx.workers, |e, l| {
        ctx.log(format!("stage1 epoch {e:>3}  loss {l:.5}"))
    })?;
    ctx.save(StageTag::Stage1, params)
}

/// Stage-2 regressor training from a stage-1 checkpoint.
pub fn cmd_train_stage2(ctx: &Context, stage1: &Path) -> Result<PathBuf> {
    ctx.write_resolved_config()?;
    let c = &ctx.config;
    let s1 = ctx.load(stage1, StageTag::Stage1)?;
    let cohort = import_cohort(c.train_manifest())?;
    let mut params = init_stage2(&c.backbone, &s1.params, &mut init_rng(c.train.seed, 2));
    train_stage2(&c.backbone, &mut params, &cohort, &c.train, ctx.workers, |e, l| {
        ctx.log(format!("stage2 epoch {e:>3}  loss {l:.5}"))
    })?;
    ctx.save(StageTag::Stage2, params)
}

/// Predict every subject of `manifest`; returns the rows and writes the CSV.
pub fn cmd_predict(ctx: &Context, stage2: &Path, manifest: &Path) -> Result<Vec<PredictionRow>> {
    ctx.write_resolved_config()?;
    let c = &ctx.config;
    let ckpt = ctx.load(stage2, StageTag::Stage2)?;
    let cohort = import_cohort(manifest)?;
    let preds = map_ordered(&cohort, ctx.workers, |s| predict_subject(&c.backbone, &ckpt.params, s))?;
    let rows: Vec<PredictionRow> = preds.iter().map(PredictionRow::from).collect();
    let out = c.predictions_path();
    write_predictions(&out, &rows)?;
    ctx.log(format!("wrote {} predictions to {}", rows.len(), out.display()));
    Ok(rows)
}

/// Evaluate a prediction CSV, cross-checking true ages against `manifest`
/// when given. Writes the JSON report and returns it with the text table.
pub fn cmd_evaluate(
    ctx: &Context,
    predictions: &Path,
    manifest: Option<&Path>,
    mode: EvalMode,
) -> Result<(EvalReport, String)> {
    let rows = read_predictions(predictions)?;
    if let Some(m) = manifest {
        let truth = read_manifest(m)?;
        for r in &rows {
            let row = truth
                .iter()
                .find(|t| t.subject_id == r.subject_id && t.session_id == r.session_id)
                .ok_or_else(|| Error::Data(format!("{} is not in {}", r.subject_id, m.display())))?;
            if row.age_years != r.true_age {
                return Err(Error::Data(format!("{}: true age differs from manifest", r.subject_id)));
            }
        }
    }
    let report = evaluate(&rows, mode)?;
    let tag = match mode {
        EvalMode::PerSubject => "per_subject.json",
        EvalMode::PerModality => "per_modality.json",
    };
    let path = ctx.config.report_path().with_extension(tag);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    let text = render_report(&report);
    Ok((report, text))
}
