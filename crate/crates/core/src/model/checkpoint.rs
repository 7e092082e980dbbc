//! Binary checkpoint format.
//!
//! ```text
//! "RDU1"                      magic
//! u32                         format version
//! u32 + bytes                 JSON header {"config": ModelConfig, "meta": TrainingMeta}
//! repeated until the trailer:
//!   u32 + bytes               UTF-8 tensor name
//!   u32                       rank
//!   u64 × rank                dims
//!   f32 × prod(dims)          values
//! u32                         CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDU1";
pub const FORMAT_VERSION: u32 = 1;

/// Bookkeeping stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingMeta {
    /// Epoch whose weights were stored (1-based; 0 for an untrained model).
    pub epoch: usize,
    pub best_loss: Option<f64>,
    /// Seed of the run, which also fixes its train/test split.
    pub seed: Option<u64>,
    pub train_fraction: Option<f64>,
    pub target: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic bytes, not an RDU1 checkpoint".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let body_end = bytes.len() - 4;
        let mut r = Reader {
            bytes: &bytes[..body_end],
            pos: 4,
        };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = r.u32("header length")? as usize;
        let header_bytes = r.take(header_len, "header")?;

        let mut tensors = Vec::new();
        while r.pos < body_end {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Format(format!("tensor `{name}` has rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| r.u64("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` dims overflow")))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
                "tensor values",
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(dims, data)
                .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, tensor));
        }

        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
        Ok(Checkpoint {
            version,
            config: header.config,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn running_names(prefix: &str) -> (String, String) {
    (
        format!("{prefix}.running_mean"),
        format!("{prefix}.running_var"),
    )
}

impl<T: Real> Model<T> {
    /// Parameters in build order, then the running statistics of every norm layer.
    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor<f32>)> = self
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.cast()))
            .collect();
        for n in self.norm_buffers() {
            let (mean_name, var_name) = running_names(&n.prefix);
            let to_f32 = |v: &[T]| {
                Tensor::new(vec![v.len()], v.iter().map(|x| x.as_f64() as f32).collect())
                    .expect("non-empty channel vector")
            };
            tensors.push((mean_name, to_f32(&n.state.running_mean)));
            tensors.push((var_name, to_f32(&n.state.running_var)));
        }
        Checkpoint {
            version: FORMAT_VERSION,
            config: self.config().clone(),
            meta,
            tensors,
        }
    }

    /// Rebuilds a model from a checkpoint; every expected tensor must be
    /// present with its exact shape, and no unknown tensor may appear.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint config invalid: {e}")))?;
        let mut model = Model::<T>::build(ckpt.config.clone(), &mut crate::seeded_rng(0))?;
        let expected = model.params().len() + 2 * model.norm_buffers().len();
        if ckpt.tensors.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors but the configured model has {expected}",
                ckpt.tensors.len()
            )));
        }
        let lookup = |name: &str, shape: &[usize]| -> Result<&Tensor<f32>> {
            let t = ckpt
                .tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for p in model.params_mut() {
            p.value = lookup(&p.name, p.value.shape())?.cast();
        }
        for n in model.norm_buffers_mut() {
            let (mean_name, var_name) = running_names(&n.prefix);
            let c = n.state.channels();
            let to_t = |t: &Tensor<f32>| t.data().iter().map(|&v| T::of(v as f64)).collect();
            n.state.running_mean = to_t(lookup(&mean_name, &[c])?);
            n.state.running_var = to_t(lookup(&var_name, &[c])?);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: TrainingMeta) -> Result<()> {
        self.to_checkpoint(meta).save(path)
    }

    /// Loads a checkpoint, optionally insisting on a specific configuration.
    pub fn load(
        path: impl AsRef<Path>,
        expected: Option<&ModelConfig>,
    ) -> Result<(Self, TrainingMeta)> {
        let ckpt = Checkpoint::load(path)?;
        if let Some(cfg) = expected {
            if *cfg != ckpt.config {
                return Err(Error::Format(
                    "checkpoint configuration differs from the expected one".into(),
                ));
            }
        }
        Ok((Self::from_checkpoint(&ckpt)?, ckpt.meta))
    }
}
