//! Collation of run directories into one summary table and one JSON file.
//! Missing artifacts are listed rather than treated as fatal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::args::ReportArgs;
use crate::artifacts::{Manifest, MANIFEST, RESIDUAL_KEYS};
use crate::{CliError, Outcome, EXIT_OK};

#[derive(Clone, Debug, Serialize)]
pub struct ResidualRow {
    pub key: String,
    pub value: Option<f64>,
    pub source: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceSummary {
    pub run: String,
    pub iterations: usize,
    pub energy: Vec<f64>,
    pub constraint: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub runs: Vec<RunEntry>,
    pub missing: Vec<String>,
    pub residuals: Vec<ResidualRow>,
    pub traces: Vec<TraceSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunEntry {
    pub dir: String,
    pub command: String,
    pub status: String,
    pub results: serde_json::Value,
}

fn read_traces(path: &Path) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path).ok()?;
    let header = r.headers().ok()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (ie, ic) = (col("energy")?, col("constraint")?);
    let (mut e, mut c) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.ok()?;
        e.push(rec.get(ie)?.parse().ok()?);
        c.push(rec.get(ic)?.parse().ok()?);
    }
    Some((e, c))
}

/// Build the bundle for `dirs`. Fails only when no directory has a manifest.
pub fn collect(dirs: &[PathBuf]) -> Result<Bundle, CliError> {
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    let mut residuals: BTreeMap<&str, (f64, String)> = BTreeMap::new();
    let mut traces = Vec::new();
    for dir in dirs {
        let label = dir.display().to_string();
        let m = match Manifest::read(dir) {
            Ok(m) => m,
            Err(_) => {
                missing.push(format!("{label}/{MANIFEST}"));
                continue;
            }
        };
        for f in &m.files {
            if !dir.join(f).is_file() {
                missing.push(format!("{label}/{f}"));
            }
        }
        for key in RESIDUAL_KEYS {
            if let Some(v) = m.residuals.get(key) {
                residuals.entry(key).or_insert((*v, format!("{} ({label})", m.command)));
            }
        }
        if m.files.iter().any(|f| f == "traces.csv") {
            if let Some((energy, constraint)) = read_traces(&dir.join("traces.csv")) {
                traces.push(TraceSummary { run: label.clone(), iterations: energy.len(), energy, constraint });
            }
        }
        runs.push(RunEntry { dir: label, command: m.command, status: m.status, results: m.results });
    }
    if runs.is_empty() {
        return Err(CliError::Domain(format!("no manifest found; missing: {}", missing.join(", "))));
    }
    let residuals = RESIDUAL_KEYS
        .iter()
        .map(|k| {
            let hit = residuals.get(k);
            ResidualRow { key: k.to_string(), value: hit.map(|h| h.0), source: hit.map(|h| h.1.clone()) }
        })
        .collect();
    Ok(Bundle { schema_version: nlharm::io::SCHEMA_VERSION, runs, missing, residuals, traces })
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render(b: &Bundle) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "runs");
    for r in &b.runs {
        let _ = writeln!(s, "  {:<16} {:<12} {}", r.command, r.status, r.dir);
        for key in [
            "energy",
            "harmonic_energy",
            "constraint_max_norm",
            "class_drift",
            "weak_residual",
            "pointwise_residual",
            "multiplier_agreement",
        ] {
            if let Some(v) = r.results.get(key).and_then(|v| v.as_f64()) {
                let _ = writeln!(s, "    {key:<22} {}", fmt(v));
            }
        }
        if let Some(mult) = r.results.get("multiplier") {
            for key in ["weak_residual", "pointwise_residual", "agreement_with_solver"] {
                if let Some(v) = mult.get(key).and_then(|v| v.as_f64()) {
                    let _ = writeln!(s, "    multiplier.{key:<11} {}", fmt(v));
                }
            }
        }
    }
    for t in &b.traces {
        let _ = writeln!(s, "\ntraces of {}", t.run);
        let _ = writeln!(s, "  {:>5}  {:>24}  {:>24}", "iter", "energy", "constraint");
        for (i, (e, c)) in t.energy.iter().zip(&t.constraint).enumerate() {
            let _ = writeln!(s, "  {i:>5}  {:>24}  {:>24}", fmt(*e), fmt(*c));
        }
    }
    let _ = writeln!(s, "\nresiduals");
    for r in &b.residuals {
        let v = r.value.map(fmt).unwrap_or_else(|| "not measured".into());
        let _ = writeln!(s, "  {:<10} {:>24}  {}", r.key, v, r.source.as_deref().unwrap_or(""));
    }
    if !b.missing.is_empty() {
        let _ = writeln!(s, "\nmissing artifacts");
        for f in &b.missing {
            let _ = writeln!(s, "  {f}");
        }
    }
    s
}

pub fn run(a: &ReportArgs) -> Result<Outcome, CliError> {
    let bundle = collect(&a.dirs)?;
    let text = render(&bundle);
    let out = a.out.clone().unwrap_or_else(|| a.dirs[0].clone());
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("summary.txt"), &text)?;
    std::fs::write(out.join("bundle.json"), serde_json::to_string_pretty(&json!(bundle))? + "\n")?;
    Ok(Outcome { code: EXIT_OK, manifest: None, summary: text })
}
