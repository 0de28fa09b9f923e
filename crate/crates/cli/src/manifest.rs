//! Run manifests and the CLI error type.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kswap::Error),
    #[error("{0}")]
    Args(String),
    #[error("{message}")]
    Failed { message: String, code: u8 },
}

impl CliError {
    /// 2 invalid arguments, 3 I/O or bad file, 4 shape mismatch.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Args(_) => 2,
            CliError::Failed { code, .. } => *code,
            CliError::Core(e) => kind_code(e.kind()),
        }
    }
}

pub fn kind_code(kind: kswap::ErrorKind) -> u8 {
    match kind {
        kswap::ErrorKind::Invalid => 2,
        kswap::ErrorKind::Io => 3,
        kswap::ErrorKind::Shape => 4,
        kswap::ErrorKind::Internal => 1,
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Record of one command run, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time: f64,
}

pub struct Recorder {
    command: String,
    start: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(kswap::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            start: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input_file(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    /// A volume file plus its header, when it has one.
    pub fn input_volume(&mut self, path: &Path) -> CliResult<()> {
        self.input_file(path)?;
        let hdr = kswap::volume::header_path(path);
        if hdr.exists() {
            self.input_file(&hdr)?;
        }
        Ok(())
    }

    /// Every volume and header file directly inside `dir`.
    pub fn input_dir(&mut self, dir: &Path) -> CliResult<()> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.to_string_lossy();
                name.ends_with(".vol") || name.ends_with(".hdr")
            })
            .collect();
        files.sort();
        for f in files {
            self.input_file(&f)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        write_json(path, value)?;
        self.output(path);
        Ok(())
    }

    /// Writes `<out>/manifest.json`.
    pub fn finish(self, out: &Path, config: serde_json::Value) -> CliResult<()> {
        let manifest = RunManifest {
            schema: 1,
            command: self.command,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time: self.start.elapsed().as_secs_f64(),
        };
        write_json(&out.join("manifest.json"), &manifest)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}
