//! MAE pretraining, stage-1 classification and stage-2 regression loops.
//!
//! Per-item gradients may be computed on several worker threads; they are
//! always summed in item order, so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::thread;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{aggregate_stage, classify_stage_per_modality, regress_normalized, stage_logits, MAE_DECODER, BACKBONE};
use crate::autodiff::{accumulate_grads, scale_grads, Adam, AdamConfig, Grads, ParamStore, Session, Tensor};
use crate::backbone::{mae_loss, sample_mask, BackboneConfig};
use crate::error::{Error, Result};
use crate::staging::{denormalize_within_stage, Stage};
use crate::synth::{sample_rng, Sample};
use crate::volume::{Modality, Volume};

/// Which stage selects the regression expert during stage-2 training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteBy {
    #[default]
    Truth,
    Predicted,
}

/// Unit of the stage-2 absolute error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage2Loss {
    /// Absolute error in years.
    #[default]
    Years,
    /// Absolute error divided by the routed stage's width.
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub batch_size: usize,
    pub route_by: RouteBy,
    pub stage2_loss: Stage2Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            pretrain_steps: 200,
            pretrain_batch: 8,
            pretrain_lr: 1e-3,
            stage1_epochs: 20,
            stage1_lr: 1e-3,
            stage2_epochs: 20,
            stage2_lr: 1e-3,
            batch_size: 16,
            route_by: RouteBy::Truth,
            stage2_loss: Stage2Loss::Years,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.pretrain_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        for (name, lr) in [
            ("pretrain_lr", self.pretrain_lr),
            ("stage1_lr", self.stage1_lr),
            ("stage2_lr", self.stage2_lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Independent RNG per training phase.
#[derive(Clone, Copy, Debug)]
enum Phase {
    Pretrain = 1,
    Stage1 = 2,
    Stage2 = 3,
}

fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    // streams below 2^32 are used by cohort generation
    sample_rng(seed, (1 << 40) + phase as u64)
}

/// RNG for parameter initialisation in `phase` (0 pretrain, 1 stage 1, 2 stage 2).
pub fn init_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    sample_rng(seed, (1 << 41) + phase)
}

/// Evaluate `f` on every item, on up to `workers` threads, and return the
/// results in item order.
pub fn map_ordered<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean loss and mean gradient over a batch, reduced in item order.
fn batch_grads<T, F>(items: &[T], workers: usize, f: F) -> Result<(f64, Grads)>
where
    T: Sync,
    F: Fn(&T) -> Result<(f64, Grads)> + Sync,
{
    let results = map_ordered(items, workers, f)?;
    let mut total = Grads::new();
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        accumulate_grads(&mut total, g);
    }
    let inv = 1.0 / items.len() as f64;
    scale_grads(&mut total, inv);
    Ok((loss * inv, total))
}

/// Cosine decay from `base` towards zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let t = step as f64 / total.max(1) as f64;
    (base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())).max(base * 1e-3)
}

fn adam(lr: f64) -> Result<Adam> {
    Adam::new(AdamConfig { lr, ..AdamConfig::default() })
}

/// One MAE step: a fresh mask per volume, mean masked-patch MSE over the batch.
pub fn mae_pretrain_step<R: Rng>(
    cfg: &BackboneConfig,
    params: &ParamStore,
    batch: &[&Volume],
    rng: &mut R,
    workers: usize,
) -> Result<(f64, Grads)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Data("empty pretraining batch".into()));
    }
    let jobs: Vec<(&Volume, Vec<usize>, Vec<usize>)> = batch
        .iter()
        .map(|&v| {
            let (masked, visible) = sample_mask(cfg, rng);
            (v, masked, visible)
        })
        .collect();
    batch_grads(&jobs, workers, |(v, masked, visible)| {
        let mut s = Session::new(params);
        let loss = mae_loss(&mut s, BACKBONE, MAE_DECODER, cfg, v, masked, visible)?;
        s.backward(loss)?;
        Ok((s.g.value(loss).item(), s.grads()))
    })
}

/// MAE pretraining over randomly drawn volumes; returns the loss per step.
pub fn mae_pretrain(
    cfg: &BackboneConfig,
    params: &mut ParamStore,
    volumes: &[&Volume],
    tc: &TrainConfig,
    workers: usize,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    tc.validate()?;
    if volumes.is_empty() {
        return Err(Error::Data("no volumes to pretrain on".into()));
    }
    let mut rng = phase_rng(tc.seed, Phase::Pretrain);
    let mut opt = adam(tc.pretrain_lr)?;
    let mut curve = Vec::with_capacity(tc.pretrain_steps);
    for step in 0..tc.pretrain_steps {
        let batch: Vec<&Volume> = (0..tc.pretrain_batch)
            .map(|_| volumes[rng.random_range(0..volumes.len())])
            .collect();
        let (loss, grads) = mae_pretrain_step(cfg, params, &batch, &mut rng, workers)?;
        opt.step(params, &grads)?;
        on_step(step, loss);
        curve.push(loss);
    }
    Ok(curve)
}

/// Every `(sample, modality)` pair in cohort order.
fn cohort_items(cohort: &[Sample]) -> Vec<(usize, Modality)> {
    cohort
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.volumes.keys().map(move |&m| (i, m)))
        .collect()
}

fn run_epochs<F>(
    cohort: &[Sample],
    params: &mut ParamStore,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    workers: usize,
    item_grad: F,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>>
where
    F: Fn(&ParamStore, usize, Modality) -> Result<(f64, Grads)> + Sync,
{
    let mut items = cohort_items(cohort);
    let mut opt = adam(lr)?;
    let mut curve = Vec::with_capacity(epochs);
    let total_steps = epochs * items.len().div_ceil(batch_size);
    let mut step = 0;
    for epoch in 0..epochs {
        items.shuffle(rng);
        let mut total = 0.0;
        for batch in items.chunks(batch_size) {
            opt.set_lr(cosine_lr(lr, step, total_steps))?;
            step += 1;
            let snapshot: &ParamStore = params;
            let (loss, grads) = batch_grads(batch, workers, |&(i, m)| item_grad(snapshot, i, m))?;
            total += loss * batch.len() as f64;
            opt.step(params, &grads)?;
        }
        let mean = total / items.len() as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

/// Cross-entropy of the per-modality stage distribution, one term per
/// `(sample, modality)`. Returns the epoch-mean training losses.
pub fn train_stage1(
    cfg: &BackboneConfig,
    params: &mut ParamStore,
    cohort: &[Sample],
    tc: &TrainConfig,
    workers: usize,
    on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    tc.validate()?;
    if cohort.is_empty() {
        return Err(Error::Data("empty training cohort".into()));
    }
    let mut rng = phase_rng(tc.seed, Phase::Stage1);
    run_epochs(
        cohort,
        params,
        tc.stage1_epochs,
        tc.stage1_lr,
        tc.batch_size,
        &mut rng,
        workers,
        |p, i, m| {
            let sample = &cohort[i];
            let mut s = Session::new(p);
            let logits = stage_logits(&mut s, cfg, &sample.volumes[&m], m)?;
            let logp = s.g.log_softmax(logits)?;
            let picked = s.g.pick(logp, sample.stage.id())?;
            let loss = s.g.scale(picked, -1.0)?;
            s.backward(loss)?;
            Ok((s.g.value(loss).item(), s.grads()))
        },
        on_epoch,
    )
}

/// Stage used to route each training sample in stage 2.
pub fn routing_stages(
    cfg: &BackboneConfig,
    params: &ParamStore,
    cohort: &[Sample],
    route_by: RouteBy,
    workers: usize,
) -> Result<Vec<Stage>> {
    match route_by {
        RouteBy::Truth => Ok(cohort.iter().map(|s| s.stage).collect()),
        RouteBy::Predicted => map_ordered(cohort, workers, |s| {
            let dists = s
                .volumes
                .iter()
                .map(|(&m, v)| Ok((m, classify_stage_per_modality(cfg, params, v, m)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            aggregate_stage(&dists)
        }),
    }
}

/// Absolute error in years of the stage-routed regressor, one term per
/// `(sample, modality)`. The classifier is left untouched; the regressor
/// towers and stage experts are trained jointly.
pub fn train_stage2(
    cfg: &BackboneConfig,
    params: &mut ParamStore,
    cohort: &[Sample],
    tc: &TrainConfig,
    workers: usize,
    on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    tc.validate()?;
    if cohort.is_empty() {
        return Err(Error::Data("empty training cohort".into()));
    }
    let routes = routing_stages(cfg, params, cohort, tc.route_by, workers)?;
    let mut rng = phase_rng(tc.seed, Phase::Stage2);
    run_epochs(
        cohort,
        params,
        tc.stage2_epochs,
        tc.stage2_lr,
        tc.batch_size,
        &mut rng,
        workers,
        |p, i, m| {
            let (sample, stage) = (&cohort[i], routes[i]);
            let mut s = Session::new(p);
            let u = regress_normalized(&mut s, cfg, &sample.volumes[&m], m, stage)?;
            let years = s.g.scale(u, stage.width())?;
            let target = sample.age.years() - denormalize_within_stage(0.0, stage);
            let t = s.constant(Tensor::full(&[1, 1], target));
            let diff = s.g.sub(years, t)?;
            let loss = s.g.abs(diff)?;
            let loss = s.g.sum(loss)?;
            let loss = match tc.stage2_loss {
                Stage2Loss::Years => loss,
                Stage2Loss::Normalized => s.g.scale(loss, 1.0 / stage.width())?,
            };
            s.backward(loss)?;
            Ok((s.g.value(loss).item(), s.grads()))
        },
        on_epoch,
    )
}
