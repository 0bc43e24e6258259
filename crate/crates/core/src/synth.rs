//! Deterministic synthetic lifespan cohort.
//!
//! Each phantom is a centred ellipsoidal brain with three nested regions:
//! an outer cortical shell, an inner tissue core and a central ventricle.
//! Geometry and regional contrast are piecewise-linear functions of age
//! with breakpoints at the stage boundaries; repeated knots encode a step.
//!
//! | law                | knots (age in years → value)                                        |
//! |--------------------|---------------------------------------------------------------------|
//! | brain radius       | grows from 0.50 to 0.88 of the half-width, flat from 18 y           |
//! | shell thickness    | 0.20 until 2 y, thins from 0.27 (2 y) to 0.09 (100 y)               |
//! | ventricle radius   | 0.14 until 40 y, grows to 0.42 at 100 y                             |
//! | T1w shell          | brightens on [-0.4, 2], then flat                                   |
//! | T2w shell          | darkens on [-0.4, 2], then flat                                     |
//! | FA shell           | 0.10 → 0.80 over [-0.4, 25], then flat                              |
//! | core (all)         | matures until 2 y (FA until 18 y), flat in childhood, then declines |
//!
//! See the `*_KNOTS` tables for exact values. Radii and thickness are
//! fractions of the brain semi-axes; edges are anti-aliased over one voxel.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staging::{stage_of, Stage, UnifiedAge};
use crate::volume::{Modality, Volume};

/// Piecewise-linear law; a repeated age is a jump (left value, then right value).
#[derive(Clone, Copy, Debug)]
pub struct Law(&'static [(f64, f64)]);

impl Law {
    pub fn eval(&self, age: f64) -> f64 {
        let k = self.0;
        if age < k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((a0, v0), (a1, v1)) = (w[0], w[1]);
            if age >= a0 && age < a1 {
                return v0 + (v1 - v0) * (age - a0) / (a1 - a0);
            }
        }
        k[k.len() - 1].1
    }
}

pub const BRAIN_RADIUS_KNOTS: &[(f64, f64)] = &[
    (-0.40, 0.50),
    (0.0, 0.62),
    (0.0, 0.64),
    (0.25, 0.70),
    (0.25, 0.72),
    (2.0, 0.80),
    (2.0, 0.81),
    (18.0, 0.87),
    (18.0, 0.88),
];

pub const SHELL_THICKNESS_KNOTS: &[(f64, f64)] = &[
    (-0.40, 0.20),
    (2.0, 0.20),
    (2.0, 0.27),
    (18.0, 0.23),
    (18.0, 0.22),
    (65.0, 0.16),
    (65.0, 0.15),
    (100.0, 0.09),
];

pub const VENTRICLE_RADIUS_KNOTS: &[(f64, f64)] = &[
    (-0.40, 0.14),
    (40.0, 0.14),
    (65.0, 0.24),
    (65.0, 0.26),
    (100.0, 0.42),
];

const T1_CORE: &[(f64, f64)] = &[
    (-0.40, 0.30),
    (0.0, 0.42),
    (0.0, 0.46),
    (0.25, 0.56),
    (0.25, 0.60),
    (2.0, 0.78),
    (2.0, 0.82),
    (18.0, 0.82),
    (65.0, 0.72),
    (65.0, 0.70),
    (100.0, 0.58),
];
const T1_SHELL: &[(f64, f64)] = &[
    (-0.40, 0.34),
    (0.0, 0.44),
    (0.0, 0.47),
    (0.25, 0.52),
    (0.25, 0.55),
    (2.0, 0.60),
    (2.0, 0.62),
];
const T2_CORE: &[(f64, f64)] = &[
    (-0.40, 0.92),
    (0.0, 0.82),
    (0.0, 0.78),
    (0.25, 0.70),
    (0.25, 0.66),
    (2.0, 0.40),
    (2.0, 0.36),
    (18.0, 0.36),
    (65.0, 0.46),
    (65.0, 0.48),
    (100.0, 0.60),
];
const T2_SHELL: &[(f64, f64)] = &[
    (-0.40, 0.84),
    (0.0, 0.76),
    (0.0, 0.73),
    (0.25, 0.68),
    (0.25, 0.65),
    (2.0, 0.56),
    (2.0, 0.54),
];
const FA_CORE: &[(f64, f64)] = &[
    (-0.40, 0.15),
    (2.0, 0.30),
    (18.0, 0.40),
    (65.0, 0.30),
    (65.0, 0.29),
    (100.0, 0.20),
];
const FA_SHELL: &[(f64, f64)] = &[
    (-0.40, 0.10),
    (0.0, 0.18),
    (0.0, 0.20),
    (0.25, 0.25),
    (0.25, 0.28),
    (2.0, 0.45),
    (2.0, 0.47),
    (18.0, 0.72),
    (18.0, 0.73),
    (25.0, 0.80),
];

/// Brain semi-axes relative to the radius law (x, y, z).
const AXIS_RATIOS: [f64; 3] = [1.0, 0.86, 0.78];

pub fn brain_radius(age: f64) -> f64 {
    Law(BRAIN_RADIUS_KNOTS).eval(age)
}

pub fn shell_thickness(age: f64) -> f64 {
    Law(SHELL_THICKNESS_KNOTS).eval(age)
}

pub fn ventricle_radius(age: f64) -> f64 {
    Law(VENTRICLE_RADIUS_KNOTS).eval(age)
}

/// `(core, shell, csf)` intensities for a modality at `age`.
pub fn tissue_contrast(modality: Modality, age: f64) -> (f64, f64, f64) {
    match modality {
        Modality::T1w => (Law(T1_CORE).eval(age), Law(T1_SHELL).eval(age), 0.12),
        Modality::T2w => (Law(T2_CORE).eval(age), Law(T2_SHELL).eval(age), 0.95),
        Modality::Fa => (Law(FA_CORE).eval(age), Law(FA_SHELL).eval(age), 0.03),
        Modality::Unknown => (0.5, 0.5, 0.0),
    }
}

/// Fractional membership of the regions at one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionWeights {
    pub brain: f64,
    pub core: f64,
    pub ventricle: f64,
}

impl RegionWeights {
    pub fn shell(&self) -> f64 {
        self.brain - self.core
    }
}

/// Region membership for every voxel of a `dim³` phantom at `age`, x fastest.
pub fn region_weights(age: f64, dim: usize) -> Vec<RegionWeights> {
    let half = dim as f64 / 2.0;
    let centre = (dim as f64 - 1.0) / 2.0;
    let r = brain_radius(age) * half;
    let axes = AXIS_RATIOS.map(|k| k * r);
    let sharp = axes.iter().sum::<f64>() / 3.0;
    let core_b = 1.0 - shell_thickness(age);
    let vent_b = ventricle_radius(age);
    let inside = |rho: f64, b: f64| (0.5 + (b - rho) * sharp).clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(dim * dim * dim);
    for z in 0..dim {
        for y in 0..dim {
            for x in 0..dim {
                let d = [x as f64 - centre, y as f64 - centre, z as f64 - centre];
                let rho = (0..3).map(|k| (d[k] / axes[k]).powi(2)).sum::<f64>().sqrt();
                out.push(RegionWeights {
                    brain: inside(rho, 1.0),
                    core: inside(rho, core_b),
                    ventricle: inside(rho, vent_b),
                });
            }
        }
    }
    out
}

/// Render one phantom. With `noise_sigma == 0` the RNG is not consumed.
pub fn render_phantom<R: Rng>(
    age: UnifiedAge,
    modality: Modality,
    dim: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Volume> {
    if dim < 16 {
        return Err(Error::Config(format!("phantom dim must be >= 16, got {dim}")));
    }
    let y = age.years();
    let (core, shell, csf) = tissue_contrast(modality, y);
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut vox = Vec::with_capacity(dim * dim * dim);
    for w in region_weights(y, dim) {
        let mut v = w.core * core + w.shell() * shell + w.ventricle * (csf - core);
        if let Some(n) = &noise {
            v += n.sample(rng);
        }
        if modality == Modality::Fa {
            v = v.clamp(0.0, 1.0);
        }
        vox.push(v as f32);
    }
    Volume::new([dim; 3], [1.0; 3], modality, vox)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n_per_stage: usize,
    pub volume_dim: usize,
    pub noise_sigma: f64,
    pub missing_prob: f64,
    pub seed: u64,
    /// Prefix for generated subject ids.
    pub subject_prefix: String,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_per_stage: 10,
            volume_dim: 32,
            noise_sigma: 0.05,
            missing_prob: 0.1,
            seed: 42,
            subject_prefix: "sub".into(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_stage == 0 {
            return Err(Error::Config("n_per_stage must be positive".into()));
        }
        if self.volume_dim < 16 {
            return Err(Error::Config(format!("volume_dim must be >= 16, got {}", self.volume_dim)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return Err(Error::Config("missing_prob must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One subject-session.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub session_id: String,
    pub age: UnifiedAge,
    pub stage: Stage,
    pub volumes: BTreeMap<Modality, Volume>,
}

impl Sample {
    pub fn new(
        subject_id: String,
        session_id: String,
        age: UnifiedAge,
        volumes: BTreeMap<Modality, Volume>,
    ) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::Data(format!("{subject_id}: no modalities")));
        }
        let first = volumes.values().next().expect("non-empty");
        for (m, v) in &volumes {
            if v.dims() != first.dims() || v.spacing() != first.spacing() {
                return Err(Error::Data(format!("{subject_id}: {m} grid differs from other modalities")));
            }
            if *m == Modality::Unknown {
                return Err(Error::Data(format!("{subject_id}: unknown modality")));
            }
        }
        Ok(Self {
            subject_id,
            session_id,
            stage: age.stage(),
            age,
            volumes,
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.volumes.keys().copied().collect()
    }

    /// Copy restricted to `keep`; errors when nothing remains.
    pub fn with_modalities(&self, keep: &[Modality]) -> Result<Sample> {
        let volumes: BTreeMap<_, _> = self
            .volumes
            .iter()
            .filter(|(m, _)| keep.contains(m))
            .map(|(m, v)| (*m, v.clone()))
            .collect();
        if volumes.is_empty() {
            return Err(Error::Contract(format!("{}: no modalities available", self.subject_id)));
        }
        Ok(Sample {
            volumes,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Sample {
        Sample {
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
            age: self.age,
            stage: self.stage,
            volumes: BTreeMap::new(),
        }
    }
}

/// Decimal rendering with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.8}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding may carry into a new leading digit
    let back: f64 = s.parse().unwrap_or(x);
    let mag2 = back.abs().log10().floor() as i32;
    if mag2 != mag && back != 0.0 {
        let decimals = (8 - mag2).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        s
    }
}

fn round_sig9(x: f64) -> f64 {
    fmt_sig9(x).parse().expect("formatted float parses")
}

/// RNG stream for sample `index`, independent of generation order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_age<R: Rng>(stage: Stage, rng: &mut R) -> UnifiedAge {
    loop {
        let y = round_sig9(rng.random_range(stage.lower()..stage.upper_eff()));
        if stage.contains(y) {
            return UnifiedAge::new(y).expect("stage ages are in range");
        }
    }
}

/// `n_per_stage` subjects for each stage, in stage order.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<Sample>> {
    generate_cohort_at(cfg, 0)
}

/// Like [`generate_cohort`] with sample indices (and so RNG streams and
/// subject ids) starting at `first_index`; disjoint ranges give
/// independent cohorts from one seed.
pub fn generate_cohort_at(cfg: &CohortConfig, first_index: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_per_stage * Stage::COUNT);
    for stage in Stage::ALL {
        for k in 0..cfg.n_per_stage {
            let index = first_index + stage.id() * cfg.n_per_stage + k;
            out.push(generate_sample(cfg, stage, index)?);
        }
    }
    Ok(out)
}

fn generate_sample(cfg: &CohortConfig, stage: Stage, index: usize) -> Result<Sample> {
    let mut rng = sample_rng(cfg.seed, index as u64);
    let age = draw_age(stage, &mut rng);
    let keep = loop {
        let keep: Vec<Modality> = Modality::ALL
            .into_iter()
            .filter(|_| rng.random::<f64>() >= cfg.missing_prob)
            .collect();
        if !keep.is_empty() {
            break keep;
        }
    };
    let mut volumes = BTreeMap::new();
    for m in keep {
        volumes.insert(m, render_phantom(age, m, cfg.volume_dim, cfg.noise_sigma, &mut rng)?);
    }
    debug_assert_eq!(stage_of(age.years()).ok(), Some(stage));
    Sample::new(
        format!("{}-{:05}", cfg.subject_prefix, index),
        "ses-1".to_string(),
        age,
        volumes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, missing: f64) -> CohortConfig {
        CohortConfig {
            n_per_stage: n,
            volume_dim: 16,
            noise_sigma: 0.05,
            missing_prob: missing,
            seed: 7,
            subject_prefix: "t".into(),
        }
    }

    #[test]
    fn law_jumps_and_holds() {
        let l = Law(&[(0.0, 1.0), (1.0, 2.0), (1.0, 3.0), (2.0, 4.0)]);
        assert_eq!(l.eval(-5.0), 1.0);
        assert_eq!(l.eval(0.5), 1.5);
        assert_eq!(l.eval(1.0), 3.0);
        assert_eq!(l.eval(9.0), 4.0);
    }

    #[test]
    fn laws_are_monotone_where_documented() {
        let ages: Vec<f64> = (0..=2000).map(|i| -0.4 + i as f64 * 0.05).collect();
        for w in ages.windows(2) {
            assert!(brain_radius(w[1]) >= brain_radius(w[0]));
            assert!(ventricle_radius(w[1]) >= ventricle_radius(w[0]));
            let (_, t1a, _) = tissue_contrast(Modality::T1w, w[0]);
            let (_, t1b, _) = tissue_contrast(Modality::T1w, w[1]);
            assert!(t1b >= t1a);
            let (_, t2a, _) = tissue_contrast(Modality::T2w, w[0]);
            let (_, t2b, _) = tissue_contrast(Modality::T2w, w[1]);
            assert!(t2b <= t2a);
        }
        assert_eq!(tissue_contrast(Modality::Fa, -0.4).1, 0.10);
        assert_eq!(tissue_contrast(Modality::Fa, 25.0).1, 0.80);
        assert_eq!(ventricle_radius(30.0), ventricle_radius(-0.2));
        assert!(ventricle_radius(41.0) > ventricle_radius(40.0));
        // ventricle stays inside the core at every age
        for &a in &ages {
            assert!(ventricle_radius(a) + 0.3 < 1.0 - shell_thickness(a));
        }
    }

    #[test]
    fn cohort_counts_and_labels() {
        let c = generate_cohort(&small(2, 0.1)).unwrap();
        assert_eq!(c.len(), 12);
        for (i, s) in c.iter().enumerate() {
            assert_eq!(s.stage, Stage::ALL[i / 2]);
            assert_eq!(stage_of(s.age.years()).unwrap(), s.stage);
            assert!(!s.volumes.is_empty());
        }
    }

    #[test]
    fn cohort_is_deterministic() {
        assert_eq!(generate_cohort(&small(2, 0.3)).unwrap(), generate_cohort(&small(2, 0.3)).unwrap());
    }

    #[test]
    fn no_missing_when_prob_zero() {
        let c = generate_cohort(&small(2, 0.0)).unwrap();
        assert!(c.iter().all(|s| s.volumes.len() == 3));
    }

    #[test]
    fn high_missing_prob_keeps_one() {
        let c = generate_cohort(&small(5, 0.95)).unwrap();
        assert!(c.iter().all(|s| !s.volumes.is_empty()));
    }

    #[test]
    fn noiseless_render_is_repeatable() {
        let age = UnifiedAge::new(3.0).unwrap();
        let mut r1 = sample_rng(1, 0);
        let mut r2 = sample_rng(99, 5);
        let a = render_phantom(age, Modality::T2w, 16, 0.0, &mut r1).unwrap();
        let b = render_phantom(age, Modality::T2w, 16, 0.0, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brain_grows_and_fa_rises() {
        let mut rng = sample_rng(0, 0);
        let count = |age: f64, rng: &mut ChaCha8Rng| {
            let v = render_phantom(UnifiedAge::new(age).unwrap(), Modality::T1w, 32, 0.0, rng).unwrap();
            v.voxels().iter().filter(|&&x| x > 0.05).count()
        };
        assert!(count(20.0, &mut rng) > count(-0.3, &mut rng));

        let shell_mean = |age: f64| {
            let v = render_phantom(UnifiedAge::new(age).unwrap(), Modality::Fa, 32, 0.0, &mut sample_rng(0, 0)).unwrap();
            let w = region_weights(age, 32);
            let (num, den) = w.iter().zip(v.voxels()).filter(|(w, _)| w.shell() > 0.99).fold(
                (0.0, 0.0),
                |(n, d), (_, &x)| (n + x as f64, d + 1.0),
            );
            num / den
        };
        assert!(shell_mean(25.0) > shell_mean(0.0));
    }

    #[test]
    fn fa_is_clamped() {
        let v = render_phantom(UnifiedAge::new(30.0).unwrap(), Modality::Fa, 16, 0.5, &mut sample_rng(3, 3)).unwrap();
        assert!(v.voxels().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(10.123456789), "10.1234568");
        assert_eq!(fmt_sig9(-0.383300823), "-0.383300823");
        assert_eq!(fmt_sig9(99.9999999996), "100.000000");
        let y = round_sig9(0.1234567891234);
        assert_eq!(fmt_sig9(y).parse::<f64>().unwrap(), y);
    }
}
