use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use nlharm::io::{format_exact, SCHEMA_VERSION};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Per-equation residual keys collected in report bundles, in display order.
pub const RESIDUAL_KEYS: [&str; 13] =
    ["exboch", "mu1", "mu2", "mu3", "mu4", "mu5", "mu6", "mu7", "1var", "vart1", "vart2", "pricemono", "el"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub status: String,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub config: Value,
    #[serde(default)]
    pub results: Value,
    #[serde(default)]
    pub residuals: BTreeMap<String, f64>,
    #[serde(default)]
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            status: "OK".into(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            ..Default::default()
        }
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output directory that records every artifact it writes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Write a CSV table; numbers use 17 significant digits.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        self.files.sort();
        self.files.dedup();
        manifest.files = self.files;
        std::fs::write(self.dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format_exact(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::artifacts::Cell::from($x)),*] };
}
