//! The lifespan stage table and the unified age axis.
//!
//! cargo run --example staging -- 0.1 7 70

use brainage::staging::{normalize_within_stage, stage_of, stage_table_json, unify_fetal, GestationalAge, Stage};

fn main() -> brainage::Result<()> {
    println!("{:<10} {:>8} {:>8} {:>8}", "stage", "lower", "upper", "width");
    for s in Stage::ALL {
        println!("{:<10} {:>8.3} {:>8.3} {:>8.3}", s.name(), s.lower(), s.upper(), s.width());
    }

    for weeks in [20.0, 32.0, 40.0] {
        let age = unify_fetal(GestationalAge::new(weeks)?);
        println!("gestational week {weeks:>4} -> {:+.4} y ({})", age.years(), age.stage());
    }

    let ages: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    for y in if ages.is_empty() { vec![-0.2, 0.1, 1.0, 7.0, 40.0, 70.0] } else { ages } {
        let s = stage_of(y)?;
        println!("{y:>6} y -> {s:<8} normalised {:.4}", normalize_within_stage(y, s)?);
    }

    println!("{}", serde_json::to_string_pretty(&stage_table_json()).expect("json"));
    Ok(())
}
