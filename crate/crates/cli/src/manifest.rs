use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Content hash in the style of a git blob id, over SHA-256:
/// `sha256("blob <len>\0" ++ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub hash: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved settings with every default filled in.
    pub config: Vec<String>,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: usize,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: Vec<String>,
        seed: u64,
        deterministic: bool,
        threads: usize,
    ) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            deterministic,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            hash: blob_hash(&bytes),
        });
        Ok(())
    }

    /// Adds every regular file of a dataset directory, in name order.
    pub fn add_dir_inputs(&mut self, dir: &Path) -> Result<()> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for f in files {
            self.add_input(&f)?;
        }
        Ok(())
    }

    fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hash of the serialized manifest; stamped into every CSV.
    pub fn hash(&self) -> Result<String> {
        Ok(blob_hash(self.to_json()?.as_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<String> {
        fs::write(path, self.to_json()? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.hash()
    }
}
