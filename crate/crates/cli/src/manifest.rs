//! Run manifests and output writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    /// Fully resolved flags, defaults included.
    pub flags: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_at: String,
    pub finished_at: String,
}

/// Collects inputs and outputs of one command run.
pub struct Run {
    manifest: RunManifest,
    out_dir: Option<PathBuf>,
}

fn now() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

impl Run {
    pub fn start(command: &'static str, flags: &impl Serialize, out_dir: Option<&Path>) -> CliResult<Self> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        Ok(Self {
            manifest: RunManifest {
                tool: "tlrp",
                version: env!("CARGO_PKG_VERSION"),
                command,
                argv: std::env::args().skip(1).collect(),
                flags: serde_json::to_value(flags).expect("flags serialize"),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: now(),
                finished_at: String::new(),
            },
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_owned(), value);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.manifest.inputs.push(Artifact::of(path, &bytes));
        Ok(())
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.as_deref().unwrap_or(Path::new(".")).join(name)
    }

    /// Writes `bytes` to `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.out_path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        let bytes = bytes.as_ref();
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.manifest.outputs.push(Artifact::of(&path, bytes));
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, text)
    }

    /// Records an output written by someone else, such as a checkpoint.
    pub fn record_output(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.manifest.outputs.push(Artifact::of(path, &bytes));
        Ok(())
    }

    /// Writes the manifest when there is an output directory.
    pub fn finish(mut self) -> CliResult<Option<PathBuf>> {
        self.manifest.finished_at = now();
        let Some(dir) = self.out_dir.as_ref() else {
            return Ok(None);
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(Some(path))
    }
}
