//! Unified lifespan age axis and the six-stage taxonomy.
//!
//! Ages are in years. Prenatal ages are negative: gestational week `w` maps to
//! `(w - 40) / 52.1775`, so term birth sits at zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Gregorian weeks per year.
pub const WEEKS_PER_YEAR: f64 = 52.1775;
/// Earliest representable age (a little below gestational week 20).
pub const AGE_FLOOR: f64 = -0.40;
/// Hard cap on accepted ages.
pub const AGE_CAP: f64 = 120.0;
/// Finite regression ceiling used for the open-ended elderly stage.
pub const ELDERLY_CAP: f64 = 100.0;

/// Age in years on the unified axis.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct UnifiedAge(f64);

impl UnifiedAge {
    pub fn new(years: f64) -> Result<Self> {
        if !(AGE_FLOOR..=AGE_CAP).contains(&years) {
            return Err(Error::Range(format!(
                "age {years} y outside [{AGE_FLOOR}, {AGE_CAP}]"
            )));
        }
        Ok(Self(years))
    }

    pub fn years(self) -> f64 {
        self.0
    }

    pub fn stage(self) -> Stage {
        stage_of(self.0).expect("validated age always has a stage")
    }
}

/// Fetal age in gestational weeks.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct GestationalAge(f64);

impl GestationalAge {
    pub fn new(weeks: f64) -> Result<Self> {
        if !(20.0..=40.0).contains(&weeks) {
            return Err(Error::Range(format!(
                "gestational age {weeks} weeks outside [20, 40]"
            )));
        }
        Ok(Self(weeks))
    }

    pub fn weeks(self) -> f64 {
        self.0
    }
}

/// Map gestational weeks onto the unified axis.
pub fn unify_fetal(w: GestationalAge) -> UnifiedAge {
    UnifiedAge((w.0 - 40.0) / WEEKS_PER_YEAR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fetal = 0,
    Neonatal = 1,
    Infant = 2,
    Child = 3,
    Adult = 4,
    Elderly = 5,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Fetal,
        Stage::Neonatal,
        Stage::Infant,
        Stage::Child,
        Stage::Adult,
        Stage::Elderly,
    ];
    pub const COUNT: usize = 6;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("invalid stage id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fetal => "fetal",
            Stage::Neonatal => "neonatal",
            Stage::Infant => "infant",
            Stage::Child => "child",
            Stage::Adult => "adult",
            Stage::Elderly => "elderly",
        }
    }

    /// Inclusive lower bound in years.
    pub fn lower(self) -> f64 {
        match self {
            Stage::Fetal => AGE_FLOOR,
            Stage::Neonatal => 0.0,
            Stage::Infant => 0.25,
            Stage::Child => 2.0,
            Stage::Adult => 18.0,
            Stage::Elderly => 65.0,
        }
    }

    /// Exclusive upper bound in years (`+inf` for elderly).
    pub fn upper(self) -> f64 {
        match self {
            Stage::Elderly => f64::INFINITY,
            s => Stage::ALL[s.id() + 1].lower(),
        }
    }

    /// Upper bound used for within-stage normalisation.
    pub fn upper_eff(self) -> f64 {
        match self {
            Stage::Elderly => ELDERLY_CAP,
            s => s.upper(),
        }
    }

    /// Width of the normalisation interval.
    pub fn width(self) -> f64 {
        self.upper_eff() - self.lower()
    }

    pub fn contains(self, years: f64) -> bool {
        years >= self.lower() && years < self.upper()
    }

    /// Largest representable age still inside the stage.
    pub fn last_age(self) -> f64 {
        let up = self.upper_eff();
        if self == Stage::Elderly {
            return up;
        }
        prev_float(up)
    }
}

fn prev_float(x: f64) -> f64 {
    if x == 0.0 {
        -f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown stage `{s}`")))
    }
}

/// The stage whose half-open interval contains `years`.
pub fn stage_of(years: f64) -> Result<Stage> {
    if years.is_nan() || years < AGE_FLOOR {
        return Err(Error::Range(format!("age {years} y is below the fetal floor")));
    }
    Ok(Stage::ALL
        .into_iter()
        .rev()
        .find(|s| years >= s.lower())
        .unwrap_or(Stage::Fetal))
}

/// Affine map of `[lower, upper_eff)` onto `[0, 1)`.
pub fn normalize_within_stage(years: f64, stage: Stage) -> Result<f64> {
    let actual = stage_of(years)?;
    if actual != stage {
        return Err(Error::Contract(format!(
            "age {years} y belongs to {actual}, not {stage}"
        )));
    }
    Ok((years - stage.lower()) / stage.width())
}

pub fn denormalize_within_stage(u: f64, stage: Stage) -> f64 {
    stage.lower() + u * stage.width()
}

/// Denormalise and clamp so the result always lies inside `stage`,
/// even when `u` saturates to exactly 1.
pub fn stage_bounded_age(u: f64, stage: Stage) -> f64 {
    denormalize_within_stage(u, stage).clamp(stage.lower(), stage.last_age())
}

/// Stage table as JSON, for audit output.
pub fn stage_table_json() -> serde_json::Value {
    serde_json::Value::Array(
        Stage::ALL
            .iter()
            .map(|s| {
                serde_json::json!({
                    "id": s.id(),
                    "name": s.name(),
                    "lower_years": s.lower(),
                    "upper_years": if s.upper().is_finite() { serde_json::json!(s.upper()) } else { serde_json::Value::Null },
                    "normalization_upper_years": s.upper_eff(),
                })
            })
            .collect(),
    )
}
