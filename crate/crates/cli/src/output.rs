use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Provenance written at the top of every output.
#[derive(Debug, Clone)]
pub struct Meta {
    pub seed: u64,
    pub config_hash: String,
}

impl Meta {
    /// Hashes the canonical JSON form of the resolved run configuration.
    pub fn new(seed: u64, config: &Value) -> Self {
        let digest = Sha256::digest(config.to_string().as_bytes());
        Self {
            seed,
            config_hash: hex::encode(digest),
        }
    }

    fn comment(&self) -> String {
        format!(
            "# superpose {} seed={} config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.config_hash
        )
    }
}

/// A named rectangular table of JSON scalars.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &'static str, columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name,
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write_csv<W: Write>(&self, meta: &Meta, mut out: W) -> Result<()> {
        writeln!(out, "{}", meta.comment())?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(&self.columns)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(cell))?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn write_json<W: Write>(&self, meta: &Meta, mut out: W) -> Result<()> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().cloned()).collect();
                Value::Object(obj)
            })
            .collect();
        let doc = json!({
            "meta": {
                "tool": "superpose",
                "version": env!("CARGO_PKG_VERSION"),
                "seed": meta.seed,
                "config_sha256": meta.config_hash,
            },
            "table": self.name,
            "rows": rows,
        });
        serde_json::to_writer_pretty(&mut out, &doc)?;
        writeln!(out)?;
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Finite numbers become JSON numbers; anything else becomes null.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// Writes tables into `out` (one file each) or, without a directory, the
/// primary table to standard output.
pub struct Sink {
    pub dir: Option<PathBuf>,
    pub format: Format,
    pub meta: Meta,
}

impl Sink {
    pub fn write(&self, table: &Table, primary: bool) -> Result<Option<PathBuf>> {
        match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(format!("{}.{}", table.name, self.format.extension()));
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                let buf = io::BufWriter::new(file);
                self.emit(table, buf)
                    .with_context(|| format!("writing {}", path.display()))?;
                Ok(Some(path))
            }
            None if primary => {
                let stdout = io::stdout();
                self.emit(table, stdout.lock())?;
                Ok(None)
            }
            None => {
                log::info!("table `{}` is only written with --out", table.name);
                Ok(None)
            }
        }
    }

    fn emit<W: Write>(&self, table: &Table, out: W) -> Result<()> {
        match self.format {
            Format::Csv => table.write_csv(&self.meta, out),
            Format::Json => table.write_json(&self.meta, out),
        }
    }
}

/// Expands directories into their `.csv` files; the result is sorted
/// lexicographically within each directory and keeps argument order otherwise.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading directory {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            anyhow::bail!("input {} does not exist", input.display());
        }
    }
    Ok(files)
}

pub fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
