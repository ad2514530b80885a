//! Output directories, input/output hashing and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dialknow::checkpoint::{Checkpoint, Checkpointable, FORMAT_VERSION};
use dialknow::corpus::{dialogs_to_json, load_dialogs, load_knowledge, KnowledgeBase, LabeledDialog};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

pub const OUT_ENV: &str = "DIALKNOW_OUT";
const DEFAULT_OUT: &str = "dialknow-out";

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    versions: BTreeMap<&'static str, String>,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// One command invocation: reads are hashed as inputs, writes land in
/// `dir` and are hashed as outputs, and `finish` writes `manifest.json`.
pub struct Run {
    root: PathBuf,
    pub dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run {
    /// `$DIALKNOW_OUT/<group>/<name>`.
    pub fn create(group: &str, name: &str) -> Result<Self> {
        let root = out_root();
        let dir = root.join(group).join(name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { root, dir, inputs: BTreeMap::new(), outputs: BTreeMap::new() })
    }

    /// Inputs under the output root are recorded relative to it, so runs
    /// under different roots produce identical manifests.
    fn label(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.inputs.insert(self.label(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(file);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.outputs.insert(file.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(file, &bytes)
    }

    pub fn write_lines(&mut self, file: &str, lines: &[serde_json::Value]) -> Result<()> {
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(l)?);
            out.push('\n');
        }
        self.write(file, out.as_bytes())
    }

    pub fn finish(self, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let versions = BTreeMap::from([
            ("dialknow", dialknow::VERSION.to_string()),
            ("dialknow-cli", env!("CARGO_PKG_VERSION").to_string()),
            ("checkpoint_format", FORMAT_VERSION.to_string()),
        ]);
        let manifest = Manifest {
            command,
            seed: cfg.seed(),
            config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
            config: cfg,
            versions,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(self.dir)
    }

    pub fn write_corpus(&mut self, kb: &KnowledgeBase, dialogs: &[LabeledDialog]) -> Result<()> {
        let (logs, labels) = dialogs_to_json(dialogs);
        self.write_json("knowledge.json", &kb.to_json())?;
        self.write_json("logs.json", &logs)?;
        self.write_json("labels.json", &labels)
    }

    /// Loads `knowledge.json`, `logs.json` and `labels.json` from the
    /// configured data directory.
    pub fn read_corpus(&mut self, cfg: &RunConfig) -> Result<(KnowledgeBase, Vec<LabeledDialog>)> {
        let data = cfg.data.as_deref().ok_or_else(|| CliError::Config("data is required".into()))?;
        let dir = resolve(data, &self.root.join("data"));
        if !dir.is_dir() {
            return Err(CliError::Config(format!("data: no corpus directory {}", dir.display())));
        }
        let kb = load_knowledge(&self.read(&dir.join("knowledge.json"))?)?;
        let logs = self.read(&dir.join("logs.json"))?;
        let labels = self.read(&dir.join("labels.json"))?;
        Ok((kb, load_dialogs(&logs, &labels)?))
    }

    /// Reads a checkpoint named by a model reference.
    pub fn read_checkpoint(&mut self, key: &str, reference: &str) -> Result<Checkpoint> {
        let models = self.root.join("models");
        let mut path = resolve(reference, &models);
        if path.is_dir() {
            path = path.join("model.ckpt");
        }
        if !path.is_file() {
            return Err(CliError::Config(format!("{key}: no checkpoint at {}", path.display())));
        }
        Ok(Checkpoint::from_bytes(&self.read(&path)?)?)
    }

    pub fn save<M: Checkpointable>(&mut self, file: &str, model: &M) -> Result<()> {
        self.write(file, &model.to_checkpoint().to_bytes())
    }
}

/// An existing path wins; otherwise the reference names an entry of `base`.
fn resolve(reference: &str, base: &Path) -> PathBuf {
    let p = PathBuf::from(reference);
    if p.exists() {
        p
    } else {
        base.join(reference)
    }
}
