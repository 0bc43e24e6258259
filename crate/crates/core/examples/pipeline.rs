//! The whole experiment through the command layer: synthesise, pretrain,
//! train both stages, predict and evaluate, all inside one work directory.
//!
//! cargo run --release --example pipeline -- [config.toml]
//!
//! Without an argument a tiny configuration is used that finishes in
//! under a minute; `configs/acceptance.toml` reproduces the full synthetic run.

use brainage::commands::{cmd_evaluate, cmd_predict, cmd_synth, cmd_train_stage1, cmd_train_stage2, cmd_pretrain, Context};
use brainage::config::RunConfig;
use brainage::metrics::EvalMode;

const TINY: &str = r#"
[cohort]
n_per_stage = 20
test_n_per_stage = 5
volume_dim = 16
[backbone]
volume_dim = 16
embed_dim = 16
heads = 2
layers = 1
decoder_dim = 8
decoder_heads = 2
[train]
pretrain_steps = 50
stage1_epochs = 15
stage2_epochs = 20
"#;

fn main() -> brainage::Result<()> {
    let mut config = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml(TINY)?,
    };
    if config.paths.work_dir.is_none() {
        config.paths.work_dir = Some(std::env::temp_dir().join("brainage-pipeline"));
    }
    let ctx = Context { verbose: true, ..Context::new(config) };

    let (_, test_manifest) = cmd_synth(&ctx)?;
    let pre = cmd_pretrain(&ctx)?;
    let s1 = cmd_train_stage1(&ctx, Some(&pre))?;
    let s2 = cmd_train_stage2(&ctx, &s1)?;
    cmd_predict(&ctx, &s2, &test_manifest)?;
    for mode in [EvalMode::PerSubject, EvalMode::PerModality] {
        let (_, table) = cmd_evaluate(&ctx, &ctx.config.predictions_path(), Some(&test_manifest), mode)?;
        println!("{table}");
    }
    Ok(())
}
