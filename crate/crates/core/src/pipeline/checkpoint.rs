//! Binary checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "BAGE"  u32 version  u64 fingerprint  u8 stage_tag  u32 tensor_count
//! per tensor: u32 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f64 data[prod(dims)]
//! ```
//!
//! Tensors are written in name order, so equal parameter sets give equal files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BAGE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageTag {
    Pretrain = 0,
    Stage1 = 1,
    Stage2 = 2,
}

impl StageTag {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(StageTag::Pretrain),
            1 => Ok(StageTag::Stage1),
            2 => Ok(StageTag::Stage2),
            c => Err(Error::Format(format!("unknown checkpoint stage tag {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageTag::Pretrain => "pretrain",
            StageTag::Stage1 => "stage1",
            StageTag::Stage2 => "stage2",
        }
    }

    /// Command that produces checkpoints with this tag.
    pub fn producer(self) -> &'static str {
        match self {
            StageTag::Pretrain => "brainage pretrain",
            StageTag::Stage1 => "brainage train-stage1",
            StageTag::Stage2 => "brainage train-stage2",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [StageTag::Pretrain, StageTag::Stage1, StageTag::Stage2]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown stage tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: u64,
    pub tag: StageTag,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(params: ParamStore, tag: StageTag, fingerprint: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            fingerprint,
            tag,
            params,
        }
    }

    /// Refuse a checkpoint trained under a different config unless forced.
    pub fn check_fingerprint(&self, expected: u64, force: bool) -> Result<()> {
        if self.fingerprint != expected && !force {
            return Err(Error::Fingerprint {
                found: self.fingerprint,
                expected,
            });
        }
        Ok(())
    }

    /// Require the checkpoint to come from phase `tag`.
    pub fn expect_tag(&self, tag: StageTag) -> Result<()> {
        if self.tag != tag {
            return Err(Error::StageOrder(format!(
                "expected a {tag} checkpoint (from `{}`), got {}",
                tag.producer(),
                self.tag
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.params.num_scalars() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version == 0 || version > CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let fingerprint = r.u64()?;
        let tag = StageTag::from_code(r.take(1)?[0])?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if params.contains(&name) {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            version,
            fingerprint,
            tag,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            actual: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; a missing file names the command that `expected` comes from.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<StageTag>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: expected.map_or("brainage pretrain", StageTag::producer).into(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
