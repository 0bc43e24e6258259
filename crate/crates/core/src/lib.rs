//! Lifespan brain-age estimation from multi-modal MRI volumes.
//!
//! The model works in two stages. A shared 3D patch transformer encodes
//! each modality, a modality-keyed expert refines the pooled feature, and a
//! linear head gives a distribution over six lifespan stages. Summing those
//! distributions across the available modalities picks the stage. A second
//! tower then regresses the age inside that stage through a stage-keyed
//! expert, and the per-modality ages are averaged.
//!
//! Everything runs on the small define-by-run autodiff in [`autodiff`]. The
//! [`commands`] module strings the phases together over files on disk and
//! backs the `brainage` binary; [`synth`] provides a phantom cohort with
//! known ages for end-to-end runs.
//!
//! ```no_run
//! use brainage::commands::{cmd_pretrain, cmd_synth, Context};
//! use brainage::config::RunConfig;
//!
//! let ctx = Context::new(RunConfig::load("configs/smoke.toml")?);
//! cmd_synth(&ctx)?;
//! let checkpoint = cmd_pretrain(&ctx)?;
//! # let _ = checkpoint;
//! # Ok::<(), brainage::Error>(())
//! ```

pub mod autodiff;
pub mod backbone;
pub mod commands;
pub mod config;
pub mod error;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod moe;
pub mod nifti;
pub mod pipeline;
pub mod preprocess;
pub mod staging;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
