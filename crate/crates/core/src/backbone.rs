//! Shared 3D patch transformer encoder and its masked-autoencoder objective.
//!
//! A `D³` volume is cut into `(D/p)³` non-overlapping cubes. Blocks are
//! ordered with z outermost and x innermost; inside a cube voxels are
//! flattened the same way (x fastest). Each cube is embedded linearly, a
//! fixed 3D sinusoidal code is added, and pre-norm transformer blocks follow.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Session, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{block, init_block, init_layernorm, init_linear, layernorm, linear};
use crate::volume::{Modality, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub volume_dim: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub decoder_dim: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub mask_ratio: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            volume_dim: 32,
            patch: 8,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            decoder_dim: 32,
            decoder_layers: 1,
            decoder_heads: 4,
            mask_ratio: 0.75,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch == 0 || self.volume_dim % self.patch != 0 {
            return bad(format!("patch {} must divide volume_dim {}", self.patch, self.volume_dim));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("heads {} must divide embed_dim {}", self.heads, self.embed_dim));
        }
        if self.decoder_heads == 0 || self.decoder_dim % self.decoder_heads != 0 {
            return bad(format!(
                "decoder_heads {} must divide decoder_dim {}",
                self.decoder_heads, self.decoder_dim
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio));
        }
        let (masked, visible) = self.mask_counts();
        if masked == 0 || visible == 0 {
            return bad(format!(
                "mask_ratio {} leaves {masked} masked and {visible} visible patches",
                self.mask_ratio
            ));
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.volume_dim / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side().pow(3)
    }

    pub fn patch_len(&self) -> usize {
        self.patch.pow(3)
    }

    /// `(masked, visible)` patch counts; masked is `ceil(ratio * n)`.
    pub fn mask_counts(&self) -> (usize, usize) {
        let n = self.n_patches();
        let masked = ((self.mask_ratio * n as f64).ceil() as usize).min(n);
        (masked, n - masked)
    }
}

/// Tokens `[n, patch³]` in block order.
pub fn patchify(v: &Volume, patch: usize) -> Result<Tensor> {
    let [nx, ny, nz] = v.dims();
    if patch == 0 || nx % patch != 0 || ny % patch != 0 || nz % patch != 0 {
        return Err(Error::Shape(format!(
            "volume dims {:?} are not divisible by patch {patch}",
            v.dims()
        )));
    }
    let (bx, by, bz) = (nx / patch, ny / patch, nz / patch);
    let plen = patch * patch * patch;
    let mut data = Vec::with_capacity(bx * by * bz * plen);
    for kz in 0..bz {
        for ky in 0..by {
            for kx in 0..bx {
                for z in 0..patch {
                    for y in 0..patch {
                        let start = v.index(kx * patch, ky * patch + y, kz * patch + z);
                        data.extend(v.voxels()[start..start + patch].iter().map(|&x| x as f64));
                    }
                }
            }
        }
    }
    Tensor::new(vec![bx * by * bz, plen], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, dims: [usize; 3], patch: usize, spacing: [f32; 3], modality: Modality) -> Result<Volume> {
    let (bx, by, bz) = (dims[0] / patch, dims[1] / patch, dims[2] / patch);
    let plen = patch * patch * patch;
    if tokens.shape() != [bx * by * bz, plen] || dims.iter().any(|d| d % patch != 0) {
        return Err(Error::Shape(format!(
            "tokens {:?} do not tile dims {dims:?} with patch {patch}",
            tokens.shape()
        )));
    }
    let mut vol = Volume::filled(dims, spacing, modality, 0.0)?;
    let mut it = tokens.data().iter();
    for kz in 0..bz {
        for ky in 0..by {
            for kx in 0..bx {
                for z in 0..patch {
                    for y in 0..patch {
                        for x in 0..patch {
                            let val = *it.next().expect("token count checked");
                            vol.set(kx * patch + x, ky * patch + y, kz * patch + z, val as f32);
                        }
                    }
                }
            }
        }
    }
    Ok(vol)
}

/// Fixed sinusoidal code for block coordinates, `[side³, dim]`.
///
/// Each axis gets `2·floor(dim/6)` channels; leftover channels are zero.
pub fn positional_encoding(side: usize, dim: usize) -> Tensor {
    let per_axis = 2 * (dim / 6);
    let n = side * side * side;
    let mut data = vec![0.0; n * dim];
    let mut t = 0;
    for kz in 0..side {
        for ky in 0..side {
            for kx in 0..side {
                for (a, pos) in [kx, ky, kz].into_iter().enumerate() {
                    for i in 0..per_axis / 2 {
                        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / per_axis as f64);
                        let ang = pos as f64 * freq;
                        data[t * dim + a * per_axis + 2 * i] = ang.sin();
                        data[t * dim + a * per_axis + 2 * i + 1] = ang.cos();
                    }
                }
                t += 1;
            }
        }
    }
    Tensor::new(vec![n, dim], data).expect("shape by construction")
}

pub fn init_encoder<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut R) {
    init_linear(store, &format!("{prefix}.patch_embed"), cfg.patch_len(), cfg.embed_dim, rng);
    for i in 0..cfg.layers {
        init_block(store, &format!("{prefix}.blocks.{i}"), cfg.embed_dim, rng);
    }
}

pub fn init_decoder<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &BackboneConfig, rng: &mut R) {
    init_linear(store, &format!("{prefix}.embed"), cfg.embed_dim, cfg.decoder_dim, rng);
    store.init_normal(&format!("{prefix}.mask_token"), &[1, cfg.decoder_dim], 0.02, rng);
    for i in 0..cfg.decoder_layers {
        init_block(store, &format!("{prefix}.blocks.{i}"), cfg.decoder_dim, rng);
    }
    init_layernorm(store, &format!("{prefix}.norm"), cfg.decoder_dim);
    init_linear(store, &format!("{prefix}.head"), cfg.decoder_dim, cfg.patch_len(), rng);
}

/// Encoder output for one volume.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    /// `[n_tokens, embed_dim]`
    pub tokens: Var,
    /// `[1, embed_dim]`, mean over tokens.
    pub pooled: Var,
}

/// Encoder over pre-cut tokens. `visible` restricts processing to those
/// rows (MAE style); `pe` must be the full positional table.
pub fn encode_tokens(
    s: &mut Session,
    prefix: &str,
    cfg: &BackboneConfig,
    tokens: &Tensor,
    pe: &Tensor,
    visible: Option<&[usize]>,
) -> Result<Latent> {
    let (rows, pe_rows): (Tensor, Tensor) = match visible {
        None => (tokens.clone(), pe.clone()),
        Some(idx) => (select_rows(tokens, idx)?, select_rows(pe, idx)?),
    };
    let x = s.constant(rows);
    let x = linear(s, &format!("{prefix}.patch_embed"), x)?;
    let p = s.constant(pe_rows);
    let mut x = s.g.add(x, p)?;
    for i in 0..cfg.layers {
        x = block(s, &format!("{prefix}.blocks.{i}"), x, cfg.heads)?;
    }
    let pooled = s.g.mean_rows(x)?;
    let pooled = s.g.reshape(pooled, &[1, cfg.embed_dim])?;
    Ok(Latent { tokens: x, pooled })
}

/// Patchify and encode a volume of the configured size.
pub fn encode(
    s: &mut Session,
    prefix: &str,
    cfg: &BackboneConfig,
    v: &Volume,
    visible: Option<&[usize]>,
) -> Result<Latent> {
    if v.dims() != [cfg.volume_dim; 3] {
        return Err(Error::Dimension {
            op: "encode",
            lhs: v.dims().to_vec(),
            rhs: vec![cfg.volume_dim; 3],
        });
    }
    let tokens = patchify(v, cfg.patch)?;
    let pe = positional_encoding(cfg.patches_per_side(), cfg.embed_dim);
    encode_tokens(s, prefix, cfg, &tokens, &pe, visible)
}

fn select_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, c) = t.dims2()?;
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= r {
            return Err(Error::Shape(format!("row {i} out of {r}")));
        }
        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
    }
    Tensor::new(vec![idx.len(), c], data)
}

/// Sorted `(masked, visible)` patch indices drawn uniformly without replacement.
pub fn sample_mask<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let n = cfg.n_patches();
    let (n_mask, _) = cfg.mask_counts();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut masked = perm[..n_mask].to_vec();
    let mut visible = perm[n_mask..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    (masked, visible)
}

/// Decoder reconstruction of every patch, `[n_patches, patch³]`.
pub fn decode_all(
    s: &mut Session,
    prefix: &str,
    cfg: &BackboneConfig,
    latent: &Latent,
    visible: &[usize],
) -> Result<Var> {
    let n = cfg.n_patches();
    let proj = linear(s, &format!("{prefix}.embed"), latent.tokens)?;
    let mask_tok = s.p(&format!("{prefix}.mask_token"))?;
    let src = s.g.concat_rows(&[proj, mask_tok])?;
    let mut order = vec![visible.len(); n];
    for (i, &p) in visible.iter().enumerate() {
        order[p] = i;
    }
    let seq = s.g.gather_rows(src, &order)?;
    let pe = s.constant(positional_encoding(cfg.patches_per_side(), cfg.decoder_dim));
    let mut x = s.g.add(seq, pe)?;
    for i in 0..cfg.decoder_layers {
        x = block(s, &format!("{prefix}.blocks.{i}"), x, cfg.decoder_heads)?;
    }
    let x = layernorm(s, &format!("{prefix}.norm"), x)?;
    linear(s, &format!("{prefix}.head"), x)
}

/// Mean squared error over the masked rows only.
pub fn masked_mse(s: &mut Session, pred: Var, target: &Tensor, masked: &[usize]) -> Result<Var> {
    let p = s.g.gather_rows(pred, masked)?;
    let t = s.constant(select_rows(target, masked)?);
    let d = s.g.sub(p, t)?;
    let sq = s.g.mul(d, d)?;
    s.g.mean(sq)
}

/// MAE reconstruction loss for one volume with a given mask.
pub fn mae_loss(
    s: &mut Session,
    encoder: &str,
    decoder: &str,
    cfg: &BackboneConfig,
    v: &Volume,
    masked: &[usize],
    visible: &[usize],
) -> Result<Var> {
    let target = patchify(v, cfg.patch)?;
    let pe = positional_encoding(cfg.patches_per_side(), cfg.embed_dim);
    let latent = encode_tokens(s, encoder, cfg, &target, &pe, Some(visible))?;
    let pred = decode_all(s, decoder, cfg, &latent, visible)?;
    masked_mse(s, pred, &target, masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(d: usize) -> Volume {
        let vox = (0..d * d * d).map(|i| i as f32 * 0.5).collect();
        Volume::new([d; 3], [1.0; 3], Modality::T1w, vox).unwrap()
    }

    #[test]
    fn patch_counts() {
        let t = patchify(&ramp(32), 8).unwrap();
        assert_eq!(t.shape(), &[64, 512]);
        let c = Volume::filled([16; 3], [1.0; 3], Modality::T1w, 2.0).unwrap();
        let t = patchify(&c, 8).unwrap();
        let (r, k) = t.dims2().unwrap();
        for i in 1..r {
            assert_eq!(&t.data()[i * k..(i + 1) * k], &t.data()[..k]);
        }
        assert!(patchify(&ramp(16), 5).is_err());
    }

    #[test]
    fn unpatchify_inverts() {
        let v = ramp(16);
        let t = patchify(&v, 4).unwrap();
        let back = unpatchify(&t, v.dims(), 4, v.spacing(), v.modality()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn block_order_is_z_major() {
        let v = ramp(16);
        let t = patchify(&v, 8).unwrap();
        // second block along x starts at voxel (8, 0, 0)
        assert_eq!(t.data()[512], v.get(8, 0, 0) as f64);
        // fifth block is (0, 0, 1) in block coordinates
        assert_eq!(t.data()[4 * 512], v.get(0, 0, 8) as f64);
    }

    #[test]
    fn mask_arithmetic() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.mask_counts(), (48, 16));
        let (m, v) = sample_mask(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!((m.len(), v.len()), (48, 16));
        let mut all: Vec<_> = m.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        let bad = BackboneConfig { mask_ratio: 0.999, volume_dim: 16, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn positional_codes_are_distinct() {
        let pe = positional_encoding(4, 32);
        let (n, d) = pe.dims2().unwrap();
        for i in 0..n {
            for j in 0..i {
                let diff: f64 = (0..d).map(|k| (pe.data()[i * d + k] - pe.data()[j * d + k]).abs()).sum();
                assert!(diff > 1e-6);
            }
        }
    }

    #[test]
    fn encoder_token_counts() {
        let cfg = BackboneConfig {
            volume_dim: 16,
            patch: 8,
            embed_dim: 12,
            heads: 2,
            layers: 1,
            ..BackboneConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_encoder(&mut store, "enc", &cfg, &mut rng);
        let v = ramp(16);
        let mut s = Session::new(&store);
        let lat = encode(&mut s, "enc", &cfg, &v, None).unwrap();
        assert_eq!(s.g.shape(lat.tokens), &[8, 12]);
        assert_eq!(s.g.shape(lat.pooled), &[1, 12]);
        let lat = encode(&mut s, "enc", &cfg, &v, Some(&[1, 5])).unwrap();
        assert_eq!(s.g.shape(lat.tokens), &[2, 12]);
        assert!(encode(&mut s, "enc", &cfg, &ramp(32), None).is_err());
    }
}
