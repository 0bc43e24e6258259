//! Masked-autoencoder pretraining of the volume encoder on a few phantoms.
//!
//! cargo run --release --example mae_pretrain -- [steps]

use brainage::backbone::BackboneConfig;
use brainage::pipeline::{init_pretrain, init_rng, mae_pretrain, TrainConfig};
use brainage::synth::{generate_cohort, CohortConfig};

fn main() -> brainage::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let cohort = generate_cohort(&CohortConfig { n_per_stage: 4, ..Default::default() })?;
    let volumes: Vec<_> = cohort.iter().flat_map(|s| s.volumes.values()).collect();

    let cfg = BackboneConfig { embed_dim: 32, layers: 1, ..Default::default() };
    let (masked, visible) = cfg.mask_counts();
    println!(
        "{} volumes, {} patches of {} voxels, {masked} masked / {visible} visible per view",
        volumes.len(),
        cfg.n_patches(),
        cfg.patch_len()
    );

    let tc = TrainConfig { pretrain_steps: steps, ..Default::default() };
    let mut params = init_pretrain(&cfg, &mut init_rng(tc.seed, 0));
    println!("{} parameters", params.num_scalars());
    let every = (steps / 10).max(1);
    mae_pretrain(&cfg, &mut params, &volumes, &tc, 1, |step, loss| {
        if step % every == 0 || step + 1 == steps {
            println!("step {step:>4}  masked-patch mse {loss:.5}");
        }
    })?;
    Ok(())
}
