use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;

use hmexp_core::checkpoint::Checkpoint;
use hmexp_core::io::{write_atomic, write_json};

pub const MANIFEST: &str = "manifest.json";

/// Collects the files a command writes; every write is atomic.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Output> {
        std::fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file written by someone else (e.g. a corpus save).
    pub fn record(&mut self, name: impl Into<String>) {
        self.files.push(name.into());
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        write_atomic(&self.path(name), body.as_bytes())?;
        self.record(name);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.path(name), value)?;
        self.record(name);
        Ok(())
    }

    pub fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.path(name))?;
        self.record(name);
        Ok(())
    }

    /// Writes the manifest last, so its presence marks a complete run.
    pub fn finish(mut self, command: &str, seed: u64, inputs: Vec<String>, config: Value) -> Result<()> {
        self.files.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            inputs,
            config,
            outputs: &self.files,
        };
        write_json(&self.path(MANIFEST), &manifest)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    inputs: Vec<String>,
    config: Value,
    outputs: &'a [String],
}
