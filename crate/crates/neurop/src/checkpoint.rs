//! `NOCK` checkpoint files.
//!
//! Layout: the magic `NOCK`, a `u32` format version, a `u32` byte length
//! followed by UTF-8 JSON metadata, a `u32` group count, then one record per
//! parameter: `u32` name length, the name, `u32` rank, `rank` x `u64` dims
//! and the values as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use neurop_core::blocks::ParamStore;
use neurop_core::transfer::{Architecture, CoreConfig, NeuralOperatorModel, Phase, PhysicsTask, TaskNormalization};
use neurop_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{ByteReader, ByteWriter};

pub const MAGIC: &[u8; 4] = b"NOCK";
pub const VERSION: u32 = 1;

/// One completed training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub tasks: Vec<String>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_nmae_percent: f64,
    pub avg_epoch_seconds: f64,
    pub trainable_params: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub core: CoreConfig,
    pub tasks: Vec<PhysicsTask>,
    pub normalization: BTreeMap<String, TaskNormalization>,
    pub history: Vec<PhaseRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub total_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &NeuralOperatorModel, history: Vec<PhaseRecord>, seeds: BTreeMap<String, u64>) -> Self {
        let config = model.core.config.clone();
        Self {
            meta: CheckpointMeta {
                architecture: config.architecture,
                core: config,
                tasks: model.tasks().cloned().collect(),
                normalization: model.normalizations().clone(),
                history,
                seeds,
                total_params: model.total_param_count(),
            },
            params: model.params.clone(),
        }
    }

    pub fn to_model(&self) -> Result<NeuralOperatorModel> {
        NeuralOperatorModel::from_parts(
            self.meta.core.clone(),
            self.meta.tasks.clone(),
            self.params.clone(),
            self.meta.normalization.clone(),
        )
        .map_err(|e| CliError::Data(format!("checkpoint does not match its metadata: {e}")))
    }

    pub fn last_phase(&self) -> Option<&PhaseRecord> {
        self.meta.history.last()
    }

    /// Table label: the architecture name plus `(pretr.)` after
    /// fine-tuning or `(scratch)` for a scratch run.
    pub fn label(&self) -> String {
        let arch = self.meta.architecture.label();
        match self.last_phase().map(|p| p.phase) {
            Some(Phase::Finetune) => format!("{arch} (pretr.)"),
            Some(Phase::Scratch) => format!("{arch} (scratch)"),
            _ => arch.to_string(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta).map_err(|e| CliError::Data(e.to_string()))?;
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(json.len() as u32);
        w.bytes(&json);
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(t.rank() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(CliError::Data("not a NOCK checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Data(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| CliError::Data(format!("checkpoint metadata: {e}")))?;
        let groups = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..groups {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CliError::Data("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = r.f64s(shape.iter().product())?;
            params.insert(name, Tensor::new(&shape, data)?);
        }
        r.finish()?;
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        fs::write(path, self.encode()?).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::Missing { what: "checkpoint", path: path.to_path_buf() });
        }
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        Self::decode(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
