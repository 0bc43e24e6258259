//! Minimal single-file NIfTI-1 (`.nii`) reader.
//!
//! Only the fields needed to recover a scalar 3D grid are interpreted:
//! `sizeof_hdr`, `dim`, `datatype`, `bitpix`, `pixdim`, `vox_offset`,
//! `scl_slope` and `scl_inter`. Axes are taken as stored; orientation is ignored.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Modality, Volume};

pub const NIFTI1_HEADER_LEN: usize = 348;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDatatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::U8),
            4 => Ok(Self::I16),
            8 => Ok(Self::I32),
            16 => Ok(Self::F32),
            64 => Ok(Self::F64),
            c => Err(Error::Unsupported(format!("NIfTI datatype code {c}"))),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I16 => 2,
            Self::I32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// The interpreted subset of a NIfTI-1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct Nifti1Header {
    pub endian: Endian,
    pub dim: [i16; 8],
    pub datatype: NiftiDatatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().expect("in-bounds header field")
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(off)),
            Endian::Big => i16::from_be_bytes(self.arr(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(off)),
            Endian::Big => f32::from_be_bytes(self.arr(off)),
        }
    }
}

impl Nifti1Header {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < NIFTI1_HEADER_LEN {
            return Err(Error::Length {
                expected: NIFTI1_HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let raw: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        let endian = if i32::from_le_bytes(raw) == 348 {
            Endian::Little
        } else if i32::from_be_bytes(raw) == 348 {
            Endian::Big
        } else {
            return Err(Error::Format("sizeof_hdr is not 348 in either byte order".into()));
        };
        let r = Reader { bytes, endian };
        let mut dim = [0i16; 8];
        for (k, d) in dim.iter_mut().enumerate() {
            *d = r.i16(40 + 2 * k);
        }
        let datatype = NiftiDatatype::from_code(r.i16(70))?;
        let bitpix = r.i16(72);
        let mut pixdim = [0f32; 8];
        for (k, p) in pixdim.iter_mut().enumerate() {
            *p = r.f32(76 + 4 * k);
        }
        Ok(Self {
            endian,
            dim,
            datatype,
            bitpix,
            pixdim,
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
        })
    }

    /// Spatial extents after validating `dim`.
    pub fn extents(&self) -> Result<[usize; 3]> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::Format(format!("dim[0] = {ndim} is out of range")));
        }
        if ndim > 3 {
            let extra = &self.dim[4..=ndim as usize];
            if extra.iter().any(|&d| d > 1) {
                return Err(Error::Unsupported(format!(
                    "{ndim}-dimensional image with extents {:?} beyond the third axis",
                    extra
                )));
            }
        }
        let mut ext = [1usize; 3];
        for (k, e) in ext.iter_mut().enumerate() {
            if k < ndim as usize {
                let d = self.dim[k + 1];
                if d < 1 {
                    return Err(Error::Format(format!("dim[{}] = {d} must be positive", k + 1)));
                }
                *e = d as usize;
            }
        }
        Ok(ext)
    }

    pub fn payload_offset(&self) -> Result<usize> {
        let off = self.vox_offset;
        if !off.is_finite() || off < NIFTI1_HEADER_LEN as f32 || off.fract() != 0.0 {
            return Err(Error::Format(format!("vox_offset {off} is not a valid single-file offset")));
        }
        Ok(off as usize)
    }

    pub fn spacing(&self) -> [f32; 3] {
        let mut s = [1.0f32; 3];
        for (k, v) in s.iter_mut().enumerate() {
            let p = self.pixdim[k + 1].abs();
            if p > 0.0 && p.is_finite() {
                *v = p;
            }
        }
        s
    }
}

fn decode_payload(h: &Nifti1Header, payload: &[u8], n: usize) -> Vec<f32> {
    let size = h.datatype.size();
    let (slope, inter) = if h.scl_slope != 0.0 && h.scl_slope.is_finite() {
        (h.scl_slope as f64, h.scl_inter as f64)
    } else {
        (1.0, 0.0)
    };
    let big = h.endian == Endian::Big;
    payload[..n * size]
        .chunks_exact(size)
        .map(|c| {
            let raw = match h.datatype {
                NiftiDatatype::U8 => c[0] as f64,
                NiftiDatatype::I16 => {
                    let b = [c[0], c[1]];
                    (if big { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f64
                }
                NiftiDatatype::I32 => {
                    let b = [c[0], c[1], c[2], c[3]];
                    (if big { i32::from_be_bytes(b) } else { i32::from_le_bytes(b) }) as f64
                }
                NiftiDatatype::F32 => {
                    let b = [c[0], c[1], c[2], c[3]];
                    (if big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }) as f64
                }
                NiftiDatatype::F64 => {
                    let b: [u8; 8] = c.try_into().expect("8 bytes");
                    if big {
                        f64::from_be_bytes(b)
                    } else {
                        f64::from_le_bytes(b)
                    }
                }
            };
            (raw * slope + inter) as f32
        })
        .collect()
}

/// Parse a complete in-memory `.nii` image.
pub fn parse_nifti1(bytes: &[u8]) -> Result<Volume> {
    let h = Nifti1Header::parse(bytes)?;
    let ext = h.extents()?;
    let off = h.payload_offset()?;
    let n = ext.iter().product::<usize>();
    let need = n * h.datatype.size();
    let available = bytes.len().saturating_sub(off);
    if available < need {
        return Err(Error::Length {
            expected: off + need,
            actual: bytes.len(),
        });
    }
    let voxels = decode_payload(&h, &bytes[off..off + need], n);
    Volume::new(ext, h.spacing(), Modality::Unknown, voxels)
}

/// Read a single-file NIfTI-1 image; reads only the header and the voxel block.
pub fn read_nifti1(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = vec![0u8; NIFTI1_HEADER_LEN];
    let got = read_up_to(&mut f, &mut header).map_err(|e| Error::io(path, e))?;
    if got < NIFTI1_HEADER_LEN {
        return Err(Error::Length {
            expected: NIFTI1_HEADER_LEN,
            actual: got,
        });
    }
    let h = Nifti1Header::parse(&header)?;
    let ext = h.extents()?;
    let off = h.payload_offset()?;
    let n = ext.iter().product::<usize>();
    let need = n * h.datatype.size();
    f.seek(SeekFrom::Start(off as u64)).map_err(|e| Error::io(path, e))?;
    let mut payload = vec![0u8; need];
    let got = read_up_to(&mut f, &mut payload).map_err(|e| Error::io(path, e))?;
    if got < need {
        return Err(Error::Length {
            expected: off + need,
            actual: off + got,
        });
    }
    let voxels = decode_payload(&h, &payload, n);
    Volume::new(ext, h.spacing(), Modality::Unknown, voxels)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled single-file image.
    fn fixture(endian: Endian, dims: [i16; 3], datatype: i16, payload: &[u8], slope: f32, inter: f32) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let put_i16 = |b: &mut Vec<u8>, o: usize, v: i16| {
            let bytes = if endian == Endian::Big { v.to_be_bytes() } else { v.to_le_bytes() };
            b[o..o + 2].copy_from_slice(&bytes);
        };
        let put_f32 = |b: &mut Vec<u8>, o: usize, v: f32| {
            let bytes = if endian == Endian::Big { v.to_be_bytes() } else { v.to_le_bytes() };
            b[o..o + 4].copy_from_slice(&bytes);
        };
        let hdr = if endian == Endian::Big { 348i32.to_be_bytes() } else { 348i32.to_le_bytes() };
        b[..4].copy_from_slice(&hdr);
        put_i16(&mut b, 40, 3);
        for (k, d) in dims.iter().enumerate() {
            put_i16(&mut b, 42 + 2 * k, *d);
        }
        for k in 4..8 {
            put_i16(&mut b, 40 + 2 * k, 1);
        }
        put_i16(&mut b, 70, datatype);
        put_i16(&mut b, 72, NiftiDatatype::from_code(datatype).map(|d| d.size() as i16 * 8).unwrap_or(0));
        for k in 0..8 {
            put_f32(&mut b, 76 + 4 * k, 1.0);
        }
        put_f32(&mut b, 108, 352.0);
        put_f32(&mut b, 112, slope);
        put_f32(&mut b, 116, inter);
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn float32_cube() {
        let payload: Vec<u8> = (0..512).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let v = parse_nifti1(&fixture(Endian::Little, [8, 8, 8], 16, &payload, 0.0, 0.0)).unwrap();
        assert_eq!(v.dims(), [8, 8, 8]);
        assert_eq!(v.spacing(), [1.0, 1.0, 1.0]);
        assert_eq!(v.modality(), Modality::Unknown);
        assert_eq!(v.voxels()[511], 511.0);
    }

    #[test]
    fn int16_scaling() {
        let payload: Vec<u8> = [3i16, 0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let v = parse_nifti1(&fixture(Endian::Little, [2, 1, 1], 4, &payload, 2.0, 1.0)).unwrap();
        assert_eq!(v.voxels(), &[7.0, 1.0]);
    }

    #[test]
    fn byte_swapped_matches() {
        let vals: Vec<i32> = (0..24).map(|i| i * 1000 - 7).collect();
        let le: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let be: Vec<u8> = vals.iter().flat_map(|v| v.to_be_bytes()).collect();
        let a = parse_nifti1(&fixture(Endian::Little, [2, 3, 4], 8, &le, 0.5, -2.0)).unwrap();
        let b = parse_nifti1(&fixture(Endian::Big, [2, 3, 4], 8, &be, 0.5, -2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsupported_datatype() {
        let err = parse_nifti1(&fixture(Endian::Little, [1, 1, 1], 32, &[0; 8], 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }

    #[test]
    fn four_d_rejected_only_with_real_extent() {
        let payload = vec![0u8; 8];
        let mut bytes = fixture(Endian::Little, [2, 2, 2], 2, &payload, 0.0, 0.0);
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert!(parse_nifti1(&bytes).is_ok());
        bytes[48..50].copy_from_slice(&3i16.to_le_bytes());
        assert!(matches!(parse_nifti1(&bytes), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bad_sizeof_hdr() {
        let mut bytes = fixture(Endian::Little, [1, 1, 1], 2, &[1], 0.0, 0.0);
        bytes[..4].copy_from_slice(&540i32.to_le_bytes());
        assert!(matches!(parse_nifti1(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = fixture(Endian::Little, [4, 4, 4], 16, &[0u8; 100], 0.0, 0.0);
        assert!(matches!(parse_nifti1(&bytes), Err(Error::Length { .. })));
    }

    #[test]
    fn file_reader_ignores_trailing_bytes() {
        let payload: Vec<u8> = (0..8).flat_map(|i| (i as f64).to_le_bytes()).collect();
        let mut bytes = fixture(Endian::Little, [2, 2, 2], 64, &payload, 0.0, 0.0);
        bytes.extend_from_slice(b"trailing garbage");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.nii");
        std::fs::write(&p, &bytes).unwrap();
        let v = read_nifti1(&p).unwrap();
        assert_eq!(v.voxels()[7], 7.0);
    }
}
