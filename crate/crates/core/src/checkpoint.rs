//! Self-describing binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset      | size | content                                     |
//! |-------------|------|---------------------------------------------|
//! | 0           | 8    | magic `PUSHCKPT`                            |
//! | 8           | 1    | format version ([`FORMAT_VERSION`])         |
//! | 9           | 4    | header length `N` (u32)                     |
//! | 13          | N    | UTF-8 JSON header: provenance + array table |
//! | 13 + N      | 8·K  | `K` f64 values, arrays in table order       |
//!
//! Each table entry is `{"name": ..., "shape": [...]}`; `K` is the sum of the
//! shape products. Weight matrices are row-major `[out, in]`. Trailing bytes
//! after the payload make the file corrupt.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Planar2;
use crate::metrics::NormStats;
use crate::model::{BaselineNn, CombinedModel};
use crate::nn::{MlpParams, BASELINE_DIMS, CONTACT_DIMS};
use crate::physics::OnlineParams;

pub const MAGIC: &[u8; 8] = b"PUSHCKPT";
pub const FORMAT_VERSION: u8 = 1;
const PREAMBLE: usize = 13;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u8, expected: u8 },
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing array `{0}`")]
    Missing(String),
}

/// Offline losses recorded at training time, reused for reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineLosses {
    pub combined_pos: f64,
    pub combined_rot: f64,
    pub combined_total: f64,
    pub nn_pos: f64,
    pub nn_rot: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of the producing configuration.
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub offline: Option<OfflineLosses>,
}

impl Provenance {
    pub fn for_config<C: Serialize>(config: &C, seed: u64) -> Self {
        Self {
            config_hash: config_hash(config),
            seed,
            offline: None,
        }
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: CombinedModel,
    pub baseline: Option<MlpParams>,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn baseline_nn(&self) -> Option<BaselineNn> {
        self.baseline.as_ref().map(|mlp| BaselineNn {
            mlp: mlp.clone(),
            norm: self.model.norm,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
    arrays: Vec<ArrayEntry>,
}

struct NamedArrays {
    entries: Vec<ArrayEntry>,
    values: Vec<Vec<f64>>,
}

impl NamedArrays {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(ArrayEntry {
            name: name.into(),
            shape,
        });
        self.values.push(data);
    }

    fn push_mlp(&mut self, prefix: &str, mlp: &MlpParams) {
        for (i, l) in mlp.layers.iter().enumerate() {
            self.push(
                format!("{prefix}.layer{i}.weight"),
                vec![l.out_dim, l.in_dim],
                l.weights.clone(),
            );
            self.push(
                format!("{prefix}.layer{i}.bias"),
                vec![l.out_dim],
                l.biases.clone(),
            );
        }
    }

    fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, CheckpointError> {
        let i = self
            .entries
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if self.entries[i].shape != shape {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: self.entries[i].shape.clone(),
            });
        }
        Ok(self.values[i].clone())
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.iter().any(|e| e.name.starts_with(prefix))
    }

    fn take_mlp(&self, prefix: &str, dims: &[usize]) -> Result<MlpParams, CheckpointError> {
        let mut mlp = MlpParams::zeros(dims);
        for (i, l) in mlp.layers.iter_mut().enumerate() {
            l.weights = self.take(&format!("{prefix}.layer{i}.weight"), &[l.out_dim, l.in_dim])?;
            l.biases = self.take(&format!("{prefix}.layer{i}.bias"), &[l.out_dim])?;
        }
        Ok(mlp)
    }
}

fn scalar(v: &[f64]) -> f64 {
    v[0]
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let mut arrays = NamedArrays::new();
    arrays.push_mlp("mlp", &m.mlp);
    arrays.push("online.v", vec![2], vec![m.online.v.x, m.online.v.y]);
    arrays.push("online.rho", vec![1], vec![m.online.rho]);
    arrays.push("norm.input_mean", vec![4], m.norm.input_mean.to_vec());
    arrays.push("norm.input_std", vec![4], m.norm.input_std.to_vec());
    arrays.push("norm.dp_mean", vec![2], m.norm.dp_mean.to_vec());
    arrays.push("norm.dp_std", vec![1], vec![m.norm.dp_std]);
    arrays.push("norm.dw_mean", vec![1], vec![m.norm.dw_mean]);
    arrays.push("norm.dw_std", vec![1], vec![m.norm.dw_std]);
    if let Some(b) = &ckpt.baseline {
        arrays.push_mlp("baseline", b);
    }
    let header = Header {
        provenance: ckpt.provenance.clone(),
        arrays: arrays.entries,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + header_json.len() + 8 * 1500);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in arrays.values.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < PREAMBLE {
        return Err(CheckpointError::Corrupt(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    if bytes[8] != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: bytes[8],
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    let payload_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| CheckpointError::Corrupt("header extends past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let total: usize = header
        .arrays
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    let payload = &bytes[payload_start..];
    if payload.len() != 8 * total {
        return Err(CheckpointError::Corrupt(format!(
            "payload holds {} bytes, table declares {} values",
            payload.len(),
            total
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut arrays = NamedArrays::new();
    for entry in header.arrays {
        let n = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        arrays.push(entry.name, entry.shape, data);
    }

    let mlp = arrays.take_mlp("mlp", &CONTACT_DIMS)?;
    let v = arrays.take("online.v", &[2])?;
    let online = OnlineParams {
        v: Planar2::new(v[0], v[1]),
        rho: scalar(&arrays.take("online.rho", &[1])?),
    };
    let arr4 = |name: &str| -> Result<[f64; 4], CheckpointError> {
        let v = arrays.take(name, &[4])?;
        Ok([v[0], v[1], v[2], v[3]])
    };
    let dp_mean = arrays.take("norm.dp_mean", &[2])?;
    let norm = NormStats {
        input_mean: arr4("norm.input_mean")?,
        input_std: arr4("norm.input_std")?,
        dp_mean: [dp_mean[0], dp_mean[1]],
        dp_std: scalar(&arrays.take("norm.dp_std", &[1])?),
        dw_mean: scalar(&arrays.take("norm.dw_mean", &[1])?),
        dw_std: scalar(&arrays.take("norm.dw_std", &[1])?),
    };
    let baseline = if arrays.has_prefix("baseline.") {
        Some(arrays.take_mlp("baseline", &BASELINE_DIMS)?)
    } else {
        None
    };
    Ok(Checkpoint {
        model: CombinedModel { mlp, online, norm },
        baseline,
        provenance: header.provenance,
    })
}

pub fn checkpoint_save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
