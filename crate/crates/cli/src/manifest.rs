//! Line-oriented stage manifests.
//!
//! ```text
//! skyflow-manifest 1
//! stage <name>
//! param <key> <json>
//! input <path> <sha256>
//! output <path> <sha256>
//! volatile <path>
//! ```
//!
//! Paths are relative to the dataset root (inputs) or the output root
//! (outputs), and each kind of line is sorted, so a rerun on unchanged inputs
//! writes the same bytes. `volatile` outputs (wall-clock timings) are
//! listed without a digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

pub struct Manifest {
    stage: String,
    params: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    volatile: Vec<String>,
    input_root: PathBuf,
    output_root: PathBuf,
}

impl Manifest {
    pub fn new(stage: &str, input_root: &Path, output_root: &Path) -> Self {
        Manifest {
            stage: stage.into(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            volatile: Vec::new(),
            input_root: input_root.to_path_buf(),
            output_root: output_root.to_path_buf(),
        }
    }

    pub fn param(&mut self, key: &str, value: &impl Serialize) -> Result<()> {
        self.params.insert(key.into(), serde_json::to_string(value)?);
        Ok(())
    }

    /// Records a file read by the stage. Upstream artifacts under the
    /// output root are listed relative to it, marked with `out:`.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let name = if path.starts_with(&self.output_root) {
            format!("out:{}", relative(path, &self.output_root))
        } else {
            relative(path, &self.input_root)
        };
        self.inputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(relative(path, &self.output_root), sha256_file(path)?);
        Ok(())
    }

    pub fn volatile(&mut self, path: &Path) {
        self.volatile.push(relative(path, &self.output_root));
    }

    pub fn render(&self) -> String {
        let mut s = String::from("skyflow-manifest 1\n");
        let _ = writeln!(s, "stage {}", self.stage);
        for (k, v) in &self.params {
            let _ = writeln!(s, "param {k} {v}");
        }
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "input {k} {v}");
        }
        for (k, v) in &self.outputs {
            let _ = writeln!(s, "output {k} {v}");
        }
        let mut vol = self.volatile.clone();
        vol.sort();
        for k in vol {
            let _ = writeln!(s, "volatile {k}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}
