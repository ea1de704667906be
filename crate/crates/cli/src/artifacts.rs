//! On-disk artifacts shared between commands.

use std::path::{Path, PathBuf};

use cat_core::TabularPolicy;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Wrapper written around every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub config_hash: String,
    pub data: T,
}

impl<T> Envelope<T> {
    pub fn new(config_hash: &str, data: T) -> Self {
        Self {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            config_hash: config_hash.to_owned(),
            data,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a policy's probability table. Equal hashes mean equal tables.
pub fn policy_hash(policy: &TabularPolicy) -> String {
    let mut h = Sha256::new();
    h.update((policy.n_states() as u64).to_le_bytes());
    h.update((policy.n_actions() as u64).to_le_bytes());
    for p in policy.probs() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON with a trailing newline. Returns the bytes written.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)?;
    Ok(bytes)
}

pub(crate) fn write_envelope<T: Serialize>(
    path: &Path,
    config_hash: &str,
    data: &T,
) -> Result<Vec<u8>> {
    write_json(path, &Envelope::new(config_hash, data))
}

/// Reads an artifact produced by an earlier command. A missing file points
/// the user at the command that makes it.
pub(crate) fn read_artifact_bytes(path: &Path, producer: &str) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            hint: format!("run `cat {producer}` with this config first"),
        }),
        Err(e) => Err(CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
    }
}

pub(crate) fn read_envelope<T: DeserializeOwned>(
    path: &Path,
    producer: &str,
) -> Result<Envelope<T>> {
    let bytes = read_artifact_bytes(path, producer)?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if env.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(CliError::Runtime(format!(
            "{}: unsupported artifact schema_version {}",
            path.display(),
            env.schema_version
        )));
    }
    Ok(env)
}

/// Output layout under the experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.train_dir().join("manifest.json")
    }

    pub fn source_dir(&self, id: &str) -> PathBuf {
        self.train_dir().join(id)
    }

    pub fn transfer_dir(&self, test: &str) -> PathBuf {
        self.root.join("transfer").join(test)
    }

    pub fn transfer_result(&self, test: &str, method: &str) -> PathBuf {
        self.transfer_dir(test).join(format!("{method}.json"))
    }

    pub fn transfer_policy(&self, test: &str, method: &str) -> PathBuf {
        self.transfer_dir(test)
            .join(format!("{method}.policy.json"))
    }

    pub fn transfer_render(&self, test: &str, method: &str) -> PathBuf {
        self.transfer_dir(test).join(format!("{method}.txt"))
    }

    pub fn results_csv(&self) -> PathBuf {
        self.root.join("evaluate").join("results.csv")
    }

    pub fn evaluate_report(&self) -> PathBuf {
        self.root.join("evaluate").join("report.json")
    }

    pub fn bounds_dir(&self) -> PathBuf {
        self.root.join("bounds")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }
}
