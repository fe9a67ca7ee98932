//! Stage manifests: resolved config plus content hashes of inputs and outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::path(path, e))
}

/// File I/O of one scene, collected so parallel workers never touch shared state.
#[derive(Default)]
pub(crate) struct SceneIo {
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, Vec<u8>)>,
}

impl SceneIo {
    /// Reads `path` and records its hash under `role/<file name>`.
    pub fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = read(path)?;
        self.note(role, path, &bytes);
        Ok(bytes)
    }

    pub fn note(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        self.inputs.push((format!("{role}/{name}"), sha256_hex(bytes)));
    }

    pub fn write(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.push((name.into(), bytes));
    }
}

pub(crate) struct Stage {
    name: &'static str,
    dir: PathBuf,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Stage {
    pub fn begin(name: &'static str, dir: &Path, config: Value) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
        Ok(Stage {
            name,
            dir: dir.to_path_buf(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn absorb(&mut self, io: SceneIo) -> Result<()> {
        self.inputs.extend(io.inputs);
        for (name, bytes) in io.outputs {
            self.write(&name, &bytes)?;
        }
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::path(&path, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `manifest.json` and returns its hash.
    pub fn finish(self) -> Result<String> {
        let doc = json!({
            "stage": self.name,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, &text).map_err(|e| Error::path(&path, e))?;
        log::info!("{}: {} outputs in {}", self.name, self.outputs.len(), self.dir.display());
        Ok(sha256_hex(text.as_bytes()))
    }
}
