//! Parameter layout and forward paths of the two-stage model.
//!
//! Classifier: `backbone` → `modality_moe.<m>` → `stage_head` → softmax.
//! Regressor: `regressor.backbone` → `regressor.modality_moe.<m>` →
//! `stage_moe.<s>` → sigmoid → years. The regressor towers start as copies
//! of the trained classifier towers and are fine-tuned in stage 2, so the
//! classifier used at inference is exactly the one trained in stage 1.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Session, Var};
use crate::backbone::{encode, init_decoder, init_encoder, BackboneConfig};
use crate::error::{Error, Result};
use crate::layers::{init_linear, linear};
use crate::moe::{modality_moe_forward, stage_moe_forward, ExpertBank, MODALITY_MOE, STAGE_MOE};
use crate::staging::{stage_bounded_age, Stage};
use crate::synth::Sample;
use crate::volume::{Modality, Volume};

pub const BACKBONE: &str = "backbone";
pub const MAE_DECODER: &str = "mae_decoder";
pub const STAGE_HEAD: &str = "stage_head";
pub const REGRESSOR: &str = "regressor";

pub fn regressor_backbone() -> String {
    format!("{REGRESSOR}.{BACKBONE}")
}

pub fn regressor_moe() -> String {
    format!("{REGRESSOR}.{MODALITY_MOE}")
}

pub fn classifier_bank(cfg: &BackboneConfig) -> ExpertBank {
    ExpertBank::modality(MODALITY_MOE, cfg.embed_dim)
}

pub fn regressor_bank(cfg: &BackboneConfig) -> ExpertBank {
    ExpertBank::modality(regressor_moe(), cfg.embed_dim)
}

pub fn stage_bank(cfg: &BackboneConfig) -> ExpertBank {
    ExpertBank::stage(STAGE_MOE, cfg.embed_dim)
}

/// Encoder and MAE decoder.
pub fn init_pretrain<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> ParamStore {
    let mut store = ParamStore::new();
    init_encoder(&mut store, BACKBONE, cfg, rng);
    init_decoder(&mut store, MAE_DECODER, cfg, rng);
    store
}

/// Stage-1 parameters; the encoder comes from `pretrained` when given.
pub fn init_stage1<R: Rng>(cfg: &BackboneConfig, pretrained: Option<&ParamStore>, rng: &mut R) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    init_encoder(&mut store, BACKBONE, cfg, rng);
    if let Some(pre) = pretrained {
        let prefix = format!("{BACKBONE}.");
        for name in store.names().cloned().collect::<Vec<_>>() {
            let t = pre.get(&name)?;
            if t.shape() != store.get(&name)?.shape() {
                return Err(Error::Dimension {
                    op: "init_stage1",
                    lhs: t.shape().to_vec(),
                    rhs: store.get(&name)?.shape().to_vec(),
                });
            }
            debug_assert!(name.starts_with(&prefix));
            store.insert(name, t.clone());
        }
    }
    classifier_bank(cfg).init(&mut store, rng);
    init_linear(&mut store, STAGE_HEAD, cfg.embed_dim, Stage::COUNT, rng);
    Ok(store)
}

/// Stage-2 parameters: the stage-1 set plus regressor copies and the stage bank.
pub fn init_stage2<R: Rng>(cfg: &BackboneConfig, stage1: &ParamStore, rng: &mut R) -> ParamStore {
    let mut store = stage1.clone();
    store.copy_prefix(&format!("{BACKBONE}."), &format!("{}.", regressor_backbone()));
    store.copy_prefix(&format!("{MODALITY_MOE}."), &format!("{}.", regressor_moe()));
    stage_bank(cfg).init(&mut store, rng);
    store
}

/// Stage logits `[1, 6]` for one volume.
pub fn stage_logits(s: &mut Session, cfg: &BackboneConfig, v: &Volume, m: Modality) -> Result<Var> {
    let latent = encode(s, BACKBONE, cfg, v, None)?;
    let feat = modality_moe_forward(s, &classifier_bank(cfg), &latent, m)?;
    linear(s, STAGE_HEAD, feat)
}

/// Normalised within-stage age `[1, 1]` from the regressor tower.
pub fn regress_normalized(s: &mut Session, cfg: &BackboneConfig, v: &Volume, m: Modality, stage: Stage) -> Result<Var> {
    let latent = encode(s, &regressor_backbone(), cfg, v, None)?;
    let feat = modality_moe_forward(s, &regressor_bank(cfg), &latent, m)?;
    stage_moe_forward(s, &stage_bank(cfg), feat, stage)
}

/// `p(s | x_m)`: six non-negative entries summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDistribution {
    probs: [f64; Stage::COUNT],
}

impl StageDistribution {
    pub fn new(probs: [f64; Stage::COUNT]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("not a distribution: {probs:?}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64; Stage::COUNT] {
        &self.probs
    }

    /// Most probable stage, lower id on ties.
    pub fn argmax(&self) -> Stage {
        Stage::from_id(argmax_lower(&self.probs)).expect("six entries")
    }
}

fn argmax_lower(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn classify_stage_per_modality(
    cfg: &BackboneConfig,
    params: &ParamStore,
    v: &Volume,
    m: Modality,
) -> Result<StageDistribution> {
    let mut s = Session::new(params);
    let logits = stage_logits(&mut s, cfg, v, m)?;
    let p = s.g.softmax(logits)?;
    let probs: [f64; Stage::COUNT] = s.g.value(p).data().try_into().map_err(|_| {
        Error::Shape(format!("stage head emits {:?}, expected 6", s.g.shape(p)))
    })?;
    StageDistribution::new(probs)
}

/// `argmax_s Σ_m p(s | x_m)`, ties toward the lower stage id.
pub fn aggregate_stage(dists: &BTreeMap<Modality, StageDistribution>) -> Result<Stage> {
    if dists.is_empty() {
        return Err(Error::Contract("no modalities available".into()));
    }
    let mut sum = [0.0; Stage::COUNT];
    for d in dists.values() {
        for (acc, p) in sum.iter_mut().zip(d.probs()) {
            *acc += p;
        }
    }
    Stage::from_id(argmax_lower(&sum))
}

pub fn predict_age_per_modality(
    cfg: &BackboneConfig,
    params: &ParamStore,
    v: &Volume,
    m: Modality,
    stage: Stage,
) -> Result<f64> {
    let mut s = Session::new(params);
    let u = regress_normalized(&mut s, cfg, v, m, stage)?;
    Ok(stage_bounded_age(s.g.value(u).item(), stage))
}

/// Unweighted mean, kept within the range of its inputs.
pub fn fuse_ages(per_modality: &BTreeMap<Modality, f64>) -> Result<f64> {
    if per_modality.is_empty() {
        return Err(Error::Contract("no modalities available".into()));
    }
    let vals: Vec<f64> = per_modality.values().copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((vals.iter().sum::<f64>() / vals.len() as f64).clamp(lo, hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgePrediction {
    pub subject_id: String,
    pub session_id: String,
    pub true_age: f64,
    pub predicted_stage: Stage,
    pub fused_age: f64,
    /// Age per modality, regressed under the aggregated stage.
    pub per_modality_age: BTreeMap<Modality, f64>,
    pub per_modality_stage_probs: BTreeMap<Modality, StageDistribution>,
    /// Single-modality predictions: each modality's own argmax stage and
    /// the age regressed under it.
    pub solo: BTreeMap<Modality, (Stage, f64)>,
}

pub fn predict_subject(cfg: &BackboneConfig, params: &ParamStore, sample: &Sample) -> Result<AgePrediction> {
    if sample.volumes.is_empty() {
        return Err(Error::Contract(format!("{}: no modalities available", sample.subject_id)));
    }
    let mut dists = BTreeMap::new();
    for (&m, v) in &sample.volumes {
        dists.insert(m, classify_stage_per_modality(cfg, params, v, m)?);
    }
    let stage = aggregate_stage(&dists)?;
    let mut ages = BTreeMap::new();
    let mut solo = BTreeMap::new();
    for (&m, v) in &sample.volumes {
        let age = predict_age_per_modality(cfg, params, v, m, stage)?;
        ages.insert(m, age);
        let own = dists[&m].argmax();
        let own_age = if own == stage { age } else { predict_age_per_modality(cfg, params, v, m, own)? };
        solo.insert(m, (own, own_age));
    }
    Ok(AgePrediction {
        subject_id: sample.subject_id.clone(),
        session_id: sample.session_id.clone(),
        true_age: sample.age.years(),
        predicted_stage: stage,
        fused_age: fuse_ages(&ages)?,
        per_modality_age: ages,
        per_modality_stage_probs: dists,
        solo,
    })
}
