//! `NOPD` dataset files.
//!
//! Layout: the magic `NOPD`, a `u32` format version, a `u32` byte length
//! followed by a UTF-8 JSON header, then the input and target arrays as
//! little-endian `f64` in that order. Every file has a pretty-printed copy
//! of its header next to it (`<file>.manifest.json`) that also records the
//! file checksum and the fingerprint of the settings that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use neurop_core::pde::{Dataset, GeneratorConfig, GridSpec, TaskKind};
use neurop_core::transfer::TaskNormalization;
use neurop_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::{ByteReader, ByteWriter};

pub const MAGIC: &[u8; 4] = b"NOPD";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub task: String,
    pub kind: TaskKind,
    pub dtype: String,
    pub samples: usize,
    pub input_shape: Vec<usize>,
    pub target_shape: Vec<usize>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub grid: GridSpec,
    pub generator: GeneratorConfig,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    /// Present on training splits only.
    pub normalization: Option<TaskNormalization>,
}

impl DatasetHeader {
    pub fn new(data: &Dataset, generator: &GeneratorConfig, master_seed: u64) -> Self {
        Self {
            task: data.task.clone(),
            kind: data.kind,
            dtype: DTYPE.to_string(),
            samples: data.len(),
            input_shape: data.inputs.shape().to_vec(),
            target_shape: data.targets.shape().to_vec(),
            input_names: data.input_names(),
            output_names: data.output_names(),
            grid: data.grid.clone(),
            generator: generator.clone(),
            master_seed,
            seeds: data.seeds.clone(),
            normalization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub header: DatasetHeader,
    pub sha256: String,
    pub fingerprint: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Identifies the inputs of a generation run: task, generator settings,
/// sample count and seed.
pub fn fingerprint(task: &str, generator: &GeneratorConfig, samples: usize, master_seed: u64) -> String {
    let key = serde_json::json!({
        "format": VERSION,
        "task": task,
        "generator": generator,
        "samples": samples,
        "master_seed": master_seed,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

pub fn encode(header: &DatasetHeader, data: &Dataset) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| CliError::Data(e.to_string()))?;
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(json.len() as u32);
    w.bytes(&json);
    w.f64s(data.inputs.data());
    w.f64s(data.targets.data());
    Ok(w.into_inner())
}

pub fn decode(bytes: &[u8]) -> Result<(DatasetHeader, Dataset)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(CliError::Data("not a NOPD dataset file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Data(format!("unsupported dataset version {version}")));
    }
    let len = r.u32()? as usize;
    let header: DatasetHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| CliError::Data(format!("dataset header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(CliError::Data(format!("unsupported dtype `{}`", header.dtype)));
    }
    let inputs = r.f64s(header.input_shape.iter().product())?;
    let targets = r.f64s(header.target_shape.iter().product())?;
    r.finish()?;
    let inputs = Tensor::new(&header.input_shape, inputs)?;
    let targets = Tensor::new(&header.target_shape, targets)?;
    let data = Dataset::new(
        header.task.clone(),
        header.kind,
        header.grid.clone(),
        inputs,
        targets,
        header.seeds.clone(),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    Ok((header, data))
}

/// Writes the dataset and its sidecar manifest. Returns the manifest.
pub fn write(path: &Path, header: &DatasetHeader, data: &Dataset, fingerprint: String) -> Result<Manifest> {
    let bytes = encode(header, data)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, &bytes).map_err(CliError::io(path))?;
    let manifest = Manifest {
        header: header.clone(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        fingerprint,
    };
    let side = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(&side, text + "\n").map_err(CliError::io(&side))?;
    Ok(manifest)
}

pub fn read(path: &Path) -> Result<(DatasetHeader, Dataset)> {
    if !path.exists() {
        return Err(CliError::Missing { what: "dataset", path: path.to_path_buf() });
    }
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_manifest(path: &Path) -> Option<Manifest> {
    let text = fs::read_to_string(manifest_path(path)).ok()?;
    serde_json::from_str(&text).ok()
}

/// True when the file and its manifest exist, the manifest fingerprint
/// matches and the file still hashes to the recorded checksum.
pub fn is_up_to_date(path: &Path, fingerprint: &str) -> bool {
    let Some(manifest) = read_manifest(path) else { return false };
    if manifest.fingerprint != fingerprint {
        return false;
    }
    match fs::read(path) {
        Ok(bytes) => hex::encode(Sha256::digest(&bytes)) == manifest.sha256,
        Err(_) => false,
    }
}
