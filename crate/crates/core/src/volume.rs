//! Volumes and the `.vol` container.
//!
//! `.vol` layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BVOL"
//! 4       4     u32 version (= 1)
//! 8       12    u32 nx, ny, nz
//! 20      12    f32 sx, sy, sz (mm)
//! 32      1     u8 modality (0 unknown, 1 T1w, 2 T2w, 3 FA)
//! 33      3     zero padding
//! 36      4·n   f32 voxels, x fastest
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOL_MAGIC: &[u8; 4] = b"BVOL";
pub const VOL_VERSION: u32 = 1;
pub const VOL_HEADER_LEN: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "unknown")]
    Unknown,
    T1w,
    T2w,
    #[serde(rename = "FA")]
    Fa,
}

impl Modality {
    /// The three routable MRI modalities, in canonical order.
    pub const ALL: [Modality; 3] = [Modality::T1w, Modality::T2w, Modality::Fa];

    pub fn code(self) -> u8 {
        match self {
            Modality::Unknown => 0,
            Modality::T1w => 1,
            Modality::T2w => 2,
            Modality::Fa => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Modality::Unknown),
            1 => Ok(Modality::T1w),
            2 => Ok(Modality::T2w),
            3 => Ok(Modality::Fa),
            c => Err(Error::Format(format!("unknown modality code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Unknown => "unknown",
            Modality::T1w => "T1w",
            Modality::T2w => "T2w",
            Modality::Fa => "FA",
        }
    }

    /// Position among [`Modality::ALL`], `None` for unknown.
    pub fn index(self) -> Option<usize> {
        Modality::ALL.iter().position(|&m| m == self)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unknown" => Ok(Modality::Unknown),
            "T1w" => Ok(Modality::T1w),
            "T2w" => Ok(Modality::T2w),
            "FA" => Ok(Modality::Fa),
            other => Err(Error::Data(format!("unknown modality `{other}`"))),
        }
    }
}

/// Dense 3D scalar grid, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    modality: Modality,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], modality: Modality, voxels: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Shape(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            modality,
            voxels,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], modality: Modality, value: f32) -> Result<Self> {
        Self::new(dims, spacing, modality, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }

    pub fn is_cubic(&self) -> bool {
        self.dims[0] == self.dims[1] && self.dims[1] == self.dims[2]
    }

    pub fn to_vol_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VOL_HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(VOL_MAGIC);
        out.extend_from_slice(&VOL_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(self.modality.code());
        out.extend_from_slice(&[0, 0, 0]);
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_vol_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != VOL_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"BVOL\"",
                String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
            )));
        }
        if bytes.len() < VOL_HEADER_LEN {
            return Err(Error::Length {
                expected: VOL_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version > VOL_VERSION {
            return Err(Error::Version {
                found: version,
                supported: VOL_VERSION,
            });
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let spacing = [f32_at(20), f32_at(24), f32_at(28)];
        let modality = Modality::from_code(bytes[32])?;
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
        let expected = VOL_HEADER_LEN + 4 * n;
        if bytes.len() != expected {
            return Err(Error::Length {
                expected,
                actual: bytes.len(),
            });
        }
        let voxels = bytes[VOL_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Volume::new(dims, spacing, modality, voxels).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn write_vol(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, v.to_vol_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_vol(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Volume::from_vol_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product();
        let vox = (0..n).map(|i| (i as f32 * 0.37).sin()).collect();
        Volume::new(dims, [1.0, 1.5, 2.0], Modality::T2w, vox).unwrap()
    }

    #[test]
    fn header_length() {
        let v = sample([2, 3, 4]);
        let bytes = v.to_vol_bytes();
        assert_eq!(bytes.len(), VOL_HEADER_LEN + 24 * 4);
        assert_eq!(&bytes[..4], b"BVOL");
    }

    #[test]
    fn modality_codes_round_trip() {
        for m in [Modality::Unknown, Modality::T1w, Modality::T2w, Modality::Fa] {
            let v = sample([2, 2, 2]).with_modality(m);
            assert_eq!(Volume::from_vol_bytes(&v.to_vol_bytes()).unwrap().modality(), m);
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
    }

    #[test]
    fn deterministic_bytes() {
        let v = sample([3, 2, 5]);
        assert_eq!(v.to_vol_bytes(), v.to_vol_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample([2, 2, 2]).to_vol_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Volume::from_vol_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let bytes = sample([4, 4, 4]).to_vol_bytes();
        let cut = &bytes[..bytes.len() - 5];
        match Volume::from_vol_bytes(cut) {
            Err(Error::Length { expected, actual }) => {
                assert_eq!(expected, VOL_HEADER_LEN + 256);
                assert_eq!(actual, VOL_HEADER_LEN + 251);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = sample([2, 2, 2]).to_vol_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Volume::from_vol_bytes(&bytes), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vol");
        let v = sample([4, 4, 4]);
        write_vol(&p, &v).unwrap();
        let back = read_vol(&p).unwrap();
        let bits = |v: &Volume| v.voxels().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn vol_round_trip_bit_exact(
            nx in 1usize..=16, ny in 1usize..=16, nz in 1usize..=16,
            seed in any::<u32>(), code in 0u8..4,
        ) {
            let n = nx * ny * nz;
            let vox: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u64).wrapping_mul(2654435761).wrapping_add(i as u64 * 40503) as u32 & 0x7f7f_ffff))
                .collect();
            let v = Volume::new([nx, ny, nz], [0.5, 1.0, 3.0], Modality::from_code(code).unwrap(), vox).unwrap();
            let back = Volume::from_vol_bytes(&v.to_vol_bytes()).unwrap();
            prop_assert_eq!(back.to_vol_bytes(), v.to_vol_bytes());
        }
    }
}
