//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `ANGLEKIT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then every tensor as
//! little-endian `f32` values at the offsets listed in the header.

use std::io::{Read, Write};
use std::path::Path;

use anglekit_tensor::{ParamKind, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::EpochRecord;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ANGLEKIT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    Localizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Offset into the blob in `f32` elements.
    pub offset: u64,
}

/// Resumable position of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub total_steps: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    pub adam_t: u64,
    pub seed: u64,
    /// How every random stream is derived from `seed`.
    pub rng: String,
    pub epoch_loss_sum: f64,
    pub epoch_batches: usize,
    pub history: Vec<EpochRecord>,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    /// Echo of the model and training configuration.
    pub config: serde_json::Value,
    pub state: Option<TrainState>,
    pub tensors: Vec<TensorRecord>,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// Gather model tensors (and optimizer moments when given).
    pub fn capture(
        kind: ModelKind,
        config: serde_json::Value,
        store: &ParamStore,
        adam: Option<&Adam>,
        state: Option<TrainState>,
    ) -> Self {
        let mut records = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: &str, kind: TensorKind, t: &Tensor| {
            records.push(TensorRecord {
                name: name.to_string(),
                kind,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel() as u64;
            tensors.push(t.clone());
        };
        for (_, e) in store.iter() {
            let k = match e.kind {
                ParamKind::Weight => TensorKind::Weight,
                ParamKind::Buffer => TensorKind::Buffer,
            };
            push(&e.name, k, &e.value);
        }
        if let Some(adam) = adam {
            for (id, e) in store.iter() {
                if let Some(m) = &adam.m[id.index()] {
                    push(&e.name, TensorKind::AdamM, m);
                }
                if let Some(v) = &adam.v[id.index()] {
                    push(&e.name, TensorKind::AdamV, v);
                }
            }
        }
        Self {
            header: CheckpointHeader {
                kind,
                config,
                state,
                tensors: records,
            },
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        let tmp = path.with_extension("tmp");
        let io = |e| Error::io(path, e);
        {
            let file = std::fs::File::create(&tmp).map_err(io)?;
            let mut w = std::io::BufWriter::new(file);
            w.write_all(MAGIC).map_err(io)?;
            w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&header).map_err(io)?;
            for t in &self.tensors {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            w.flush().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an anglekit checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let blob_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[20..blob_start])?;
        let blob = &bytes[blob_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for rec in &header.tensors {
            let n: usize = rec.shape.iter().product();
            let start = rec.offset as usize * 4;
            let end = start + n * 4;
            if end > blob.len() {
                return Err(bad(&format!("tensor `{}` extends past the end of the file", rec.name)));
            }
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::new(rec.shape.clone(), data)?);
        }
        Ok(Self { header, tensors })
    }

    fn of_kind(&self, kind: TensorKind) -> impl Iterator<Item = (&TensorRecord, &Tensor)> {
        self.header
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter(move |(r, _)| r.kind == kind)
    }

    /// Overwrite every weight and buffer of `store`; names must match exactly.
    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        let mut seen = 0;
        for kind in [TensorKind::Weight, TensorKind::Buffer] {
            for (rec, t) in self.of_kind(kind) {
                store
                    .set(&rec.name, t.clone())
                    .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", rec.name)))?;
                seen += 1;
            }
        }
        if seen != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} model tensors, model has {}",
                store.len()
            )));
        }
        Ok(())
    }

    pub fn restore_adam(&self, adam: &mut Adam, store: &ParamStore) -> Result<()> {
        for (kind, slots) in [(TensorKind::AdamM, &mut adam.m), (TensorKind::AdamV, &mut adam.v)] {
            slots.iter_mut().for_each(|s| *s = None);
            for (rec, t) in self.of_kind(kind) {
                let id = store
                    .id(&rec.name)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown tensor `{}`", rec.name)))?;
                slots[id.index()] = Some(t.clone());
            }
        }
        if let Some(state) = &self.header.state {
            adam.t = state.adam_t;
        }
        Ok(())
    }
}
