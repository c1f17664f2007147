//! Tabular output, CSV or JSON, plus the run manifest written next to it.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    Int(u64),
    Num(f64),
    Empty,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) if v.is_nan() => String::new(),
            Cell::Num(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Str(s) => Value::String(s.clone()),
            Cell::Int(v) => json!(v),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self::owned(headers.iter().map(|h| h.to_string()).collect())
    }

    pub fn owned(headers: Vec<String>) -> Self {
        Table {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => {
                let mut wtr = csv::Writer::from_writer(Vec::new());
                wtr.write_record(&self.headers).map_err(runtime)?;
                for row in &self.rows {
                    wtr.write_record(row.iter().map(Cell::text)).map_err(runtime)?;
                }
                wtr.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> = self
                            .headers
                            .iter()
                            .zip(row)
                            .map(|(h, c)| (h.clone(), c.json()))
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                let mut out = serde_json::to_vec_pretty(&rows).map_err(runtime)?;
                out.push(b'\n');
                Ok(out)
            }
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance of one output file.
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub wall_time: Duration,
}

impl RunManifest {
    fn to_json(&self, output: &Path, output_digest: &str) -> Result<Value, CliError> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                Ok(json!({
                    "path": p.display().to_string(),
                    "sha256": file_digest(p)?,
                }))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(json!({
            "tool": env!("CARGO_BIN_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command_line": self.command_line,
            "seed": self.seed,
            "threads": self.threads,
            "inputs": inputs,
            "output": {
                "path": output.display().to_string(),
                "sha256": output_digest,
            },
            "wall_time_s": self.wall_time.as_secs_f64(),
        }))
    }
}

/// Sidecar path `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `bytes` to `out` (stdout when `None`) and the manifest beside it.
pub fn emit(bytes: &[u8], out: Option<&Path>, manifest: &RunManifest) -> Result<(), CliError> {
    match out {
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes).map_err(runtime)?;
            stdout.flush().map_err(runtime)
        }
        Some(path) => {
            fs::write(path, bytes)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            let doc = manifest.to_json(path, &sha256_hex(bytes))?;
            let mut text = serde_json::to_vec_pretty(&doc).map_err(runtime)?;
            text.push(b'\n');
            fs::write(manifest_path(path), text).map_err(runtime)
        }
    }
}
