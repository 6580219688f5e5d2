//! Training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TCNN1"            5-byte magic
//! u32                format version (1)
//! u32                section count
//! section*           u32 name length, UTF-8 name, u64 payload length, payload
//! ```
//!
//! Sections, in order:
//!
//! * `model`: JSON model config (variant, shape, classes, seed)
//! * `train`: JSON training config
//! * `state`: JSON `{"epoch", "step"}`; the shuffle stream is a pure function
//!   of the training seed and the epoch, so this is the whole PRNG state
//! * `params`, `moment1`, `moment2`: tensor lists
//!
//! A tensor list is a u32 count followed by, per tensor, a u32 name length,
//! UTF-8 name, u32 rank, u64 extents and `f32` data. Moment tensors carry
//! the name of their parameter; `moment2` is empty for SGD.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{Optimizer, TrainConfig, Trainer};
use crate::zoo::{build, ModelConfig};

pub const MAGIC: &[u8; 5] = b"TCNN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub moment1: Vec<Tensor>,
    pub moment2: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct State {
    epoch: usize,
    step: u64,
}

impl Checkpoint {
    pub fn from_trainer(model: &ModelConfig, trainer: &Trainer) -> Self {
        let names = trainer.model.parameter_names();
        let params = names.into_iter().zip(trainer.model.parameters().into_iter().cloned()).collect();
        Checkpoint {
            model: model.clone(),
            train: trainer.config.clone(),
            epoch: trainer.epoch,
            step: trainer.optimizer.step,
            params,
            moment1: trainer.optimizer.first.clone(),
            moment2: trainer.optimizer.second.clone(),
        }
    }

    /// Rebuilds the model from its config and loads the stored parameters.
    pub fn restore(&self) -> Result<Trainer> {
        let mut model = build(&self.model)?;
        let names = model.parameter_names();
        if names.len() != self.params.len() {
            return Err(Error::format(format!(
                "checkpoint has {} tensors, model {} expects {}",
                self.params.len(),
                self.model.variant,
                names.len()
            )));
        }
        for ((dst, name), (src_name, src)) in model.parameters_mut().into_iter().zip(&names).zip(&self.params) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(Error::format(format!(
                    "checkpoint tensor {src_name} {:?} does not fit {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        let mut optimizer = Optimizer::new(self.train.optimizer.clone(), &model)?;
        if optimizer.first.len() != self.moment1.len() || optimizer.second.len() != self.moment2.len() {
            return Err(Error::format("optimizer state does not fit the model"));
        }
        optimizer.step = self.step;
        optimizer.first = self.moment1.clone();
        optimizer.second = self.moment2.clone();
        let mut trainer = Trainer::new(model, self.train.clone())?;
        trainer.optimizer = optimizer;
        trainer.epoch = self.epoch;
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let names: Vec<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        let sections: Vec<(&str, Vec<u8>)> = vec![
            ("model", serde_json::to_vec(&self.model)?),
            ("train", serde_json::to_vec(&self.train)?),
            ("state", serde_json::to_vec(&State { epoch: self.epoch, step: self.step })?),
            ("params", tensor_list(self.params.iter().map(|(n, t)| (n.as_str(), t)))),
            ("moment1", tensor_list(names.iter().copied().zip(&self.moment1))),
            ("moment2", tensor_list(names.iter().copied().zip(&self.moment2))),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, payload) in sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()?;
        let mut sections = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let len = r.u64()? as usize;
            sections.insert(name, r.take(len)?);
        }
        let section = |name: &str| {
            sections
                .get(name)
                .copied()
                .ok_or_else(|| Error::format(format!("checkpoint lacks section {name:?}")))
        };
        let state: State = serde_json::from_slice(section("state")?)?;
        let params = read_tensor_list(section("params")?)?;
        let moments = |name| -> Result<Vec<Tensor>> {
            Ok(read_tensor_list(section(name)?)?.into_iter().map(|(_, t)| t).collect())
        };
        Ok(Checkpoint {
            model: serde_json::from_slice(section("model")?)?,
            train: serde_json::from_slice(section("train")?)?,
            epoch: state.epoch,
            step: state.step,
            params,
            moment1: moments("moment1")?,
            moment2: moments("moment2")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn tensor_list<'a>(items: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<_> = items.collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_tensor_list(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank > 5 {
            return Err(Error::format(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.ok_or_else(|| Error::format(format!("tensor {name} is too large")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::format(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("section name is not UTF-8"))
    }
}
