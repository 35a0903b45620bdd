//! Instance file I/O.
//!
//! Instances are stored as UTF-8 JSON objects with fields `n`, `t_max`,
//! `start`, `end`, `prize`, `cost`, and optionally `coords`. Floats are
//! written with full round-trip precision, so `read(write(x)) == x`
//! bit-exactly on every numeric field. A directory of such files is a
//! benchmark set.

use crate::instance::Instance;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
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
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads and validates an instance file.
///
/// Parse failures carry serde's line/column diagnostics; invariant
/// violations (negative costs, nonzero diagonal, bad indices) are reported
/// exactly as [`Instance::new`] would report them.
pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes an instance as pretty-printed JSON with a trailing newline.
pub fn write_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let json =
        serde_json::to_string_pretty(inst).expect("instance serialization cannot fail");
    file.write_all(json.as_bytes()).map_err(|e| io_err(path, e))?;
    file.write_all(b"\n").map_err(|e| io_err(path, e))?;
    Ok(())
}
