//! Hard routing: each key selects one expert, and only that expert's
//! parameters enter the gradient.
//!
//! cargo run --example moe_routing

use brainage::autodiff::{ParamStore, Session, Tensor};
use brainage::moe::{stage_moe_forward, ExpertBank};
use brainage::staging::{denormalize_within_stage, Stage};
use brainage::volume::Modality;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> brainage::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 8;
    let modality_bank = ExpertBank::modality("modality_moe", dim);
    let stage_bank = ExpertBank::stage("stage_moe", dim);
    let mut params = ParamStore::new();
    modality_bank.init(&mut params, &mut rng);
    stage_bank.init(&mut params, &mut rng);
    let latent = Tensor::new(vec![1, dim], (0..dim).map(|i| (i as f64 * 0.3).sin()).collect())?;

    for m in [Modality::T1w, Modality::Fa] {
        for stage in [Stage::Infant, Stage::Elderly] {
            let mut s = Session::new(&params);
            let z = s.constant(latent.clone());
            let feat = modality_bank.route(&mut s, m.into(), z)?;
            let u = stage_moe_forward(&mut s, &stage_bank, feat, stage)?;
            let value = s.g.value(u).item();
            s.backward(u)?;
            let experts: std::collections::BTreeSet<String> = s
                .grads()
                .keys()
                .map(|k| k.rsplitn(3, '.').nth(2).unwrap_or(k).to_string())
                .collect();
            println!(
                "{m:>3} / {stage:<8} u = {value:.4} -> {:>7.3} y   gradients reach: {}",
                denormalize_within_stage(value, stage),
                experts.into_iter().collect::<Vec<_>>().join(", ")
            );
        }
    }

    let mut s = Session::new(&params);
    let z = s.constant(latent);
    if let Err(e) = modality_bank.route(&mut s, Stage::Adult.into(), z) {
        println!("stage key on the modality bank: {e}");
    }
    Ok(())
}
