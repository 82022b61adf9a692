//! Run manifests and shared file helpers.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qemb_core::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub fingerprint: Option<String>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub versions: BTreeMap<String, String>,
}

/// Collects inputs and outputs while a command runs, then writes the
/// manifest into the output directory.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    start: Instant,
    fingerprint: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let f = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    std::io::copy(&mut BufReader::new(f), &mut h)?;
    Ok(hex::encode(h.finalize()))
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            start: Instant::now(),
            fingerprint: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn fingerprint(&mut self, digest: &str) {
        self.fingerprint = Some(digest.to_string());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Registers `name` as an output and returns its path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.output(name), bytes)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(
        &mut self,
        name: &str,
        items: impl IntoIterator<Item = T>,
    ) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.output(name))?);
        for item in items {
            serde_json::to_writer(&mut w, &item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let mut versions = BTreeMap::new();
        versions.insert("qemb".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert(
            "encoder".to_string(),
            qemb_core::embed::ENCODER_TAG.to_string(),
        );
        let m = RunManifest {
            command: self.command,
            fingerprint: self.fingerprint,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
            versions,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(self.out_dir.join(MANIFEST_NAME), bytes)?;
        Ok(m)
    }
}
