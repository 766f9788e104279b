//! Simulation snapshots for resuming a run across process restarts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Simulation;

pub const SNAPSHOT_FORMAT: &str = "lifespace-snapshot/1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("cannot access snapshot {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt snapshot at `{field}`: {message}")]
    Corrupt { field: String, message: String },
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format: String,
    simulation: Simulation,
}

pub fn to_bytes(sim: &Simulation) -> Vec<u8> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        format: &'a str,
        simulation: &'a Simulation,
    }
    serde_json::to_vec(&Borrowed {
        format: SNAPSHOT_FORMAT,
        simulation: sim,
    })
    .expect("simulation always serializes")
}

pub fn from_bytes(bytes: &[u8]) -> Result<Simulation, SnapshotError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: SnapshotFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SnapshotError::Corrupt {
            field: if path == "." { "<root>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    if file.format != SNAPSHOT_FORMAT {
        return Err(SnapshotError::Corrupt {
            field: "format".into(),
            message: format!("unsupported snapshot format `{}`", file.format),
        });
    }
    file.simulation
        .state()
        .validate()
        .map_err(|(field, message)| SnapshotError::Corrupt {
            field: format!("simulation.state.{field}"),
            message,
        })?;
    Ok(file.simulation)
}

/// Writes the snapshot atomically (temp file, then rename).
pub fn save_snapshot(sim: &Simulation, path: &Path) -> Result<(), SnapshotError> {
    let io_err = |source| SnapshotError::Io {
        path: path.to_owned(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(sim)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_snapshot(path: &Path) -> Result<Simulation, SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io {
        path: path.to_owned(),
        source,
    })?;
    from_bytes(&bytes)
}
