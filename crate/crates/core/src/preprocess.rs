//! Isotropic resampling, smooth bias-field removal and intensity scaling.
//!
//! The bias step is a log-domain polynomial least-squares fit, a lightweight
//! stand-in for a full nonparametric inhomogeneity correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Modality, Volume};

/// Fraction of the maximum above which a voxel counts as tissue.
pub const MASK_FRACTION: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    Zscore,
    Minmax,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_spacing_mm: f64,
    pub bias_poly_degree: usize,
    pub normalize: NormalizeMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing_mm: 1.0,
            bias_poly_degree: 2,
            normalize: NormalizeMode::Zscore,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing_mm > 0.0) || !self.target_spacing_mm.is_finite() {
            return Err(Error::Config(format!(
                "target_spacing_mm must be > 0, got {}",
                self.target_spacing_mm
            )));
        }
        if self.bias_poly_degree > 3 {
            return Err(Error::Config(format!(
                "bias_poly_degree must be <= 3, got {}",
                self.bias_poly_degree
            )));
        }
        Ok(())
    }
}

/// Resample, bias-correct, then normalise.
pub fn preprocess(v: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    cfg.validate()?;
    let r = resample_isotropic(v, cfg.target_spacing_mm)?;
    let b = correct_bias(&r, cfg.bias_poly_degree)?;
    normalize_intensity(&b, cfg.normalize)
}

/// Trilinear resampling onto a grid with spacing `target` mm on every axis.
///
/// Voxel `i` sits at `i * spacing` mm; samples outside the input grid take the
/// nearest edge value.
pub fn resample_isotropic(v: &Volume, target: f64) -> Result<Volume> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Config(format!("target spacing must be > 0, got {target}")));
    }
    let dims = v.dims();
    let sp = v.spacing();
    let mut out_dims = [0usize; 3];
    for k in 0..3 {
        out_dims[k] = ((dims[k] as f64 * sp[k] as f64 / target).round() as usize).max(1);
    }
    let axis = |k: usize, j: usize| -> (usize, usize, f64) {
        let pos = (j as f64 * target / sp[k] as f64).clamp(0.0, (dims[k] - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(dims[k] - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..out_dims[0]).map(|j| axis(0, j)).collect();
    let ys: Vec<_> = (0..out_dims[1]).map(|j| axis(1, j)).collect();
    let zs: Vec<_> = (0..out_dims[2]).map(|j| axis(2, j)).collect();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &(z0, z1, fz) in &zs {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let c = |x, y, z| v.get(x, y, z) as f64;
                let c00 = c(x0, y0, z0) * (1.0 - fx) + c(x1, y0, z0) * fx;
                let c10 = c(x0, y1, z0) * (1.0 - fx) + c(x1, y1, z0) * fx;
                let c01 = c(x0, y0, z1) * (1.0 - fx) + c(x1, y0, z1) * fx;
                let c11 = c(x0, y1, z1) * (1.0 - fx) + c(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    let t = target as f32;
    Volume::new(out_dims, [t, t, t], v.modality(), out)
}

/// Exponents `(a, b, c)` with `a + b + c <= degree`.
fn monomials(degree: usize) -> Vec<[u32; 3]> {
    let mut terms = Vec::new();
    for total in 0..=degree as u32 {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                terms.push([a, b, total - a - b]);
            }
        }
    }
    terms
}

fn unit_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Voxels above [`MASK_FRACTION`] of the maximum.
pub fn tissue_mask(v: &Volume) -> Vec<bool> {
    let max = v.voxels().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let thr = MASK_FRACTION * max;
    v.voxels().iter().map(|&x| max > 0.0 && x > thr).collect()
}

/// Fit a degree-`degree` polynomial to masked log-intensities and divide it out.
///
/// Afterwards the mean log-intensity over the (input) mask is zero.
pub fn correct_bias(v: &Volume, degree: usize) -> Result<Volume> {
    if degree > 3 {
        return Err(Error::Config(format!("bias polynomial degree {degree} > 3")));
    }
    let terms = monomials(degree);
    let mask = tissue_mask(v);
    let masked = mask.iter().filter(|&&m| m).count();
    if masked < terms.len() {
        return Err(Error::Underdetermined {
            masked,
            coefficients: terms.len(),
        });
    }
    let [nx, ny, nz] = v.dims();
    let basis = |x: usize, y: usize, z: usize, out: &mut Vec<f64>| {
        let (u, w, s) = (unit_coord(x, nx), unit_coord(y, ny), unit_coord(z, nz));
        out.clear();
        out.extend(
            terms
                .iter()
                .map(|e| u.powi(e[0] as i32) * w.powi(e[1] as i32) * s.powi(e[2] as i32)),
        );
    };
    let k = terms.len();
    let mut ata = vec![0.0; k * k];
    let mut atb = vec![0.0; k];
    let mut row = Vec::with_capacity(k);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = v.index(x, y, z);
                if !mask[idx] {
                    continue;
                }
                let target = (v.voxels()[idx] as f64).ln();
                basis(x, y, z, &mut row);
                for i in 0..k {
                    atb[i] += row[i] * target;
                    for j in 0..k {
                        ata[i * k + j] += row[i] * row[j];
                    }
                }
            }
        }
    }
    let coef = solve_dense(ata, atb, k)?;
    let mut out = v.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                basis(x, y, z, &mut row);
                let field: f64 = row.iter().zip(&coef).map(|(b, c)| b * c).sum();
                let idx = v.index(x, y, z);
                out.voxels_mut()[idx] = (v.voxels()[idx] as f64 / field.exp()) as f32;
            }
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[piv * n + col].abs() < 1e-12 {
            return Err(Error::Degenerate("singular bias-field design matrix".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

/// Z-scored voxel values in `f64`, before storage rounding.
pub fn zscore_values(voxels: &[f32]) -> Result<Vec<f64>> {
    let n = voxels.len() as f64;
    let mean = voxels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate("z-score of a constant volume".into()));
    }
    let sd = var.sqrt();
    Ok(voxels.iter().map(|&v| (v as f64 - mean) / sd).collect())
}

/// Rescale intensities. FA is an index on `[0, 1]` already, so it is always
/// clamped to that range instead of being rescaled.
pub fn normalize_intensity(v: &Volume, mode: NormalizeMode) -> Result<Volume> {
    let mut out = v.clone();
    if v.modality() == Modality::Fa {
        out.voxels_mut().iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        return Ok(out);
    }
    match mode {
        NormalizeMode::None => {}
        NormalizeMode::Zscore => {
            let z = zscore_values(v.voxels())?;
            out.voxels_mut().iter_mut().zip(z).for_each(|(o, z)| *o = z as f32);
        }
        NormalizeMode::Minmax => {
            let (lo, hi) = v
                .voxels()
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let range = (hi - lo) as f64;
            out.voxels_mut().iter_mut().for_each(|x| {
                *x = if range > 0.0 { ((*x - lo) as f64 / range) as f32 } else { 0.0 };
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_volume(n: usize, sp: f32) -> Volume {
        let mut v = Volume::filled([n, n, n], [sp, sp, sp], Modality::T1w, 0.0).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let (px, py, pz) = (x as f32 * sp, y as f32 * sp, z as f32 * sp);
                    v.set(x, y, z, px + 2.0 * py + 3.0 * pz);
                }
            }
        }
        v
    }

    #[test]
    fn resample_shape_and_spacing() {
        let v = Volume::filled([16, 16, 16], [2.0; 3], Modality::T1w, 3.25).unwrap();
        let r = resample_isotropic(&v, 1.0).unwrap();
        assert_eq!(r.dims(), [32, 32, 32]);
        assert_eq!(r.spacing(), [1.0; 3]);
        assert!(r.voxels().iter().all(|&x| x == 3.25));
        assert!(matches!(resample_isotropic(&v, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn resample_exact_on_affine_interior() {
        let v = affine_volume(16, 2.0);
        let r = resample_isotropic(&v, 1.0).unwrap();
        for z in 0..31 {
            for y in 0..31 {
                for x in 0..31 {
                    let want = x as f64 + 2.0 * y as f64 + 3.0 * z as f64;
                    assert!((r.get(x, y, z) as f64 - want).abs() < 1e-5 * want.max(1.0));
                }
            }
        }
    }

    #[test]
    fn resample_identity_at_native_spacing() {
        let v = affine_volume(7, 1.0);
        let r = resample_isotropic(&v, 1.0).unwrap();
        assert_eq!(r.voxels(), v.voxels());
    }

    #[test]
    fn bias_constant_volume_becomes_one() {
        let v = Volume::filled([6, 6, 6], [1.0; 3], Modality::T1w, 4.0).unwrap();
        let c = correct_bias(&v, 2).unwrap();
        assert!(c.voxels().iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn bias_removes_exponential_linear_field() {
        let n = 12;
        let mut v = Volume::filled([n, n, n], [1.0; 3], Modality::T1w, 0.0).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let f = 0.3 * unit_coord(x, n) - 0.2 * unit_coord(y, n) + 0.1 * unit_coord(z, n);
                    v.set(x, y, z, (50.0 * f.exp()) as f32);
                }
            }
        }
        let c = correct_bias(&v, 1).unwrap();
        let vals: Vec<f64> = c.voxels().iter().map(|&x| x as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!(sd / mean < 1e-4, "cv {}", sd / mean);
        let mean_log = vals.iter().map(|x| x.ln()).sum::<f64>() / vals.len() as f64;
        assert!(mean_log.abs() < 1e-6);
    }

    #[test]
    fn bias_degree_zero_is_geometric_mean() {
        let vox: Vec<f32> = (0..27).map(|i| 1.0 + (i % 5) as f32).collect();
        let v = Volume::new([3, 3, 3], [1.0; 3], Modality::T1w, vox.clone()).unwrap();
        let c = correct_bias(&v, 0).unwrap();
        let gm = (vox.iter().map(|&x| (x as f64).ln()).sum::<f64>() / 27.0).exp();
        for (a, b) in c.voxels().iter().zip(&vox) {
            assert!((*a as f64 - *b as f64 / gm).abs() < 1e-6);
        }
    }

    #[test]
    fn bias_underdetermined() {
        let mut v = Volume::filled([3, 3, 1], [1.0; 3], Modality::T1w, 0.0).unwrap();
        v.set(1, 1, 0, 5.0);
        assert!(matches!(
            correct_bias(&v, 1),
            Err(Error::Underdetermined { masked: 1, coefficients: 4 })
        ));
    }

    #[test]
    fn normalize_modes() {
        let v = Volume::new([2, 1, 1], [1.0; 3], Modality::T1w, vec![0.0, 2.0]).unwrap();
        assert_eq!(normalize_intensity(&v, NormalizeMode::Minmax).unwrap().voxels(), &[0.0, 1.0]);
        let c = Volume::filled([2, 2, 2], [1.0; 3], Modality::T2w, 1.0).unwrap();
        assert!(matches!(
            normalize_intensity(&c, NormalizeMode::Zscore),
            Err(Error::Degenerate(_))
        ));
        let fa = Volume::new([2, 1, 1], [1.0; 3], Modality::Fa, vec![0.4, 1.2]).unwrap();
        assert_eq!(normalize_intensity(&fa, NormalizeMode::Zscore).unwrap().voxels(), &[0.4, 1.0]);
    }

    #[test]
    fn zscore_moments() {
        let vox: Vec<f32> = (0..1000).map(|i| ((i * 7919) % 1000) as f32 * 0.013 - 2.0).collect();
        let z = zscore_values(&vox).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
    }
}
