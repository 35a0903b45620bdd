//! Checkpoint files: the network config plus every named tensor as
//! shape + row-major data, in JSON. Round-trips are exact because floats
//! are written with full precision.

use super::{NeuralError, QNetwork, QNetworkConfig, QNetworkParams};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint tensor {name}: data length {len} does not match shape {rows}x{cols}")]
    BadTensor {
        name: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnknownTensor(String),
    #[error(transparent)]
    Network(#[from] NeuralError),
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: QNetworkConfig,
    tensors: Vec<TensorRecord>,
}

/// Writes the network to `path` as a self-describing JSON checkpoint.
pub fn save_checkpoint(net: &QNetwork, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tensors = net
        .params()
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            name,
            rows: t.nrows(),
            cols: t.ncols(),
            data: t.iter().copied().collect(),
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: net.config().clone(),
        tensors,
    };
    let json = serde_json::to_string(&file).expect("checkpoint serialization cannot fail");
    std::fs::write(path, json).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint, validating the version and every tensor shape
/// against the stored config.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<QNetwork, CheckpointError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(file.version));
    }
    file.config.validate()?;

    let mut params = QNetworkParams::zeros(&file.config);
    let mut filled: Vec<(String, &mut Array2<f64>)> = params.tensors_mut();
    let mut seen = vec![false; filled.len()];
    for record in file.tensors {
        let Some(idx) = filled.iter().position(|(name, _)| *name == record.name) else {
            return Err(CheckpointError::UnknownTensor(record.name));
        };
        if record.data.len() != record.rows * record.cols {
            return Err(CheckpointError::BadTensor {
                name: record.name,
                rows: record.rows,
                cols: record.cols,
                len: record.data.len(),
            });
        }
        let target = &mut filled[idx].1;
        if target.dim() != (record.rows, record.cols) {
            return Err(CheckpointError::Network(NeuralError::ShapeMismatch {
                name: record.name,
                expected: target.dim(),
                got: (record.rows, record.cols),
            }));
        }
        **target = Array2::from_shape_vec((record.rows, record.cols), record.data)
            .expect("length checked above");
        seen[idx] = true;
    }
    if let Some(idx) = seen.iter().position(|&s| !s) {
        return Err(CheckpointError::MissingTensor(filled[idx].0.clone()));
    }
    drop(filled);
    Ok(QNetwork::from_parts(file.config, params)?)
}
