//! Artifact files: atomic writes, content hashes and provenance records.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Io(format!("{} is not UTF-8", path.display())))
}

/// Writes through a temporary sibling and a rename, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Io(format!("{}: {e}", path.display()))
    })
}

/// What a command read and wrote, by content hash. Contains nothing time-dependent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            ..Default::default()
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.prov.json")
    }
}

/// An output directory plus the provenance of the command writing into it.
pub struct Stage {
    pub dir: PathBuf,
    pub prov: Provenance,
    stage_name: String,
}

impl Stage {
    pub fn open(dir: &Path, stage_name: &str, seed: u64) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::Io(format!("output directory {} does not exist", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            prov: Provenance::new(stage_name, seed),
            stage_name: stage_name.into(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Reads an input and records its hash.
    pub fn input(&mut self, name: &str) -> Result<Vec<u8>, CliError> {
        let bytes = read(&self.path(name))?;
        self.prov.inputs.insert(name.into(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Reads an upstream artifact, refusing it if its hash differs from what the producing
    /// stage recorded.
    pub fn verified_input(&mut self, name: &str, producer: &str) -> Result<Vec<u8>, CliError> {
        let bytes = self.input(name)?;
        let prov = load_provenance(&self.dir, producer)?;
        match prov.outputs.get(name) {
            Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
            Some(_) => Err(CliError::Hash(format!("{name} differs from the copy {producer} recorded"))),
            None => Err(CliError::Hash(format!("{producer} provenance does not list {name}"))),
        }
    }

    pub fn record_config(&mut self, text: &str) {
        self.prov.inputs.insert("config".into(), sha256_hex(text.as_bytes()));
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path(name), bytes)?;
        self.prov.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn summary(&mut self, key: &str, value: impl Serialize) {
        self.prov
            .summary
            .insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn finish(self) -> Result<Provenance, CliError> {
        let mut text = serde_json::to_string_pretty(&self.prov).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.dir.join(Provenance::file_name(&self.stage_name)), text.as_bytes())?;
        Ok(self.prov)
    }
}

pub fn load_provenance(dir: &Path, stage: &str) -> Result<Provenance, CliError> {
    let path = dir.join(Provenance::file_name(stage));
    let text = read_text(&path).map_err(|_| CliError::Hash(format!("missing provenance {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Hash(format!("unreadable provenance {}: {e}", path.display())))
}

/// Re-hashes every input a stage recorded and fails on the first change.
pub fn check_recorded_inputs(dir: &Path, prov: &Provenance) -> Result<(), CliError> {
    for (name, hash) in &prov.inputs {
        if name == "config" {
            continue;
        }
        let bytes = read(&dir.join(name))?;
        if sha256_hex(&bytes) != *hash {
            return Err(CliError::Hash(format!("{name} changed since {} ran", prov.command)));
        }
    }
    Ok(())
}
