//! Generate a small synthetic cohort and export it as `.vol` files plus a
//! manifest.
//!
//! cargo run --example synth_cohort -- [output_dir]

use brainage::manifest::{export_cohort, read_manifest};
use brainage::synth::{generate_cohort, CohortConfig};

fn main() -> brainage::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("brainage-cohort"));
    let cfg = CohortConfig { n_per_stage: 3, ..Default::default() };
    let cohort = generate_cohort(&cfg)?;
    for s in &cohort {
        let mods: Vec<&str> = s.modalities().iter().map(|m| m.name()).collect();
        println!("{:<10} {:>8.3} y  {:<9} {}", s.subject_id, s.age.years(), s.stage.name(), mods.join(" "));
    }
    let manifest = export_cohort(&cohort, &dir)?;
    let rows = read_manifest(&manifest)?;
    println!("{} volumes listed in {}", rows.len(), manifest.display());
    Ok(())
}
