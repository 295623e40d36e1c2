//! Rendering of study grids and margin reports.
//!
//! Text tables round to 3 decimals; CSV and JSON carry shortest round-trip
//! decimal forms. Nothing run-specific (worker count, output directory,
//! timestamps) is written, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::OutputFormat;
use crate::error::{Error, Result};
use crate::eval::{ProbeSpec, StudyGrid};
use crate::perturbation::MarginReport;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub n_perm: usize,
    /// SHA-256 of the effective settings (sources, probes, seed, n_perm).
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(seed: u64, n_perm: usize, settings: &impl Serialize, inputs: Vec<InputDigest>) -> Result<Self> {
        let canonical = serde_json::to_vec(settings).map_err(|e| Error::Data(e.to_string()))?;
        Ok(Provenance {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            seed,
            n_perm,
            config_hash: hex::encode(Sha256::digest(&canonical)),
            inputs,
        })
    }
}

/// Digest of `path`, recorded relative to `base` when it lies below it.
pub fn digest_input(path: &Path, base: &Path) -> Result<InputDigest> {
    let shown = path.strip_prefix(base).unwrap_or(path);
    Ok(InputDigest {
        path: shown.to_string_lossy().replace('\\', "/"),
        sha256: crate::dataset::file_sha256(path).map_err(|e| match e {
            Error::Io(io) => Error::Data(format!("cannot read {}: {io}", path.display())),
            other => other,
        })?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub probes: Vec<ProbeSpec>,
    pub grid: StudyGrid,
    pub perturbation: Option<MarginReport>,
}

fn fixed3(v: f64) -> String {
    format!("{v:.3}")
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), fixed3)
}

impl StudyReport {
    /// Plain-text grid: one row per encoder, one Acc/AUC/F1/p block per
    /// probe; `--` where no p-value exists.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let name_w = g.encoders.iter().map(|e| e.chars().count()).max().unwrap_or(0).max("Encoder".len());
        const CELL: usize = 7;
        let block_w = 4 * CELL - 1;
        let mut out = String::new();

        let mut head = format!("{:<name_w$}", "Encoder");
        let mut sub = format!("{:<name_w$}", "");
        for p in &g.probes {
            let label: String = p.chars().take(block_w).collect();
            let _ = write!(head, " | {label:<block_w$}");
            let _ = write!(sub, " | {:<6} {:<6} {:<6} {:<6}", "Acc", "AUC", "F1", "p");
        }
        let rule = "-".repeat(head.chars().count());
        let _ = writeln!(out, "{}", head.trim_end());
        let _ = writeln!(out, "{}", sub.trim_end());
        let _ = writeln!(out, "{rule}");
        for e in &g.encoders {
            let mut row = format!("{e:<name_w$}");
            for p in &g.probes {
                match g.cell(e, p) {
                    Some(c) => {
                        let _ = write!(
                            row,
                            " | {:<6} {:<6} {:<6} {:<6}",
                            fixed3(c.metrics.accuracy),
                            fixed3(c.metrics.macro_auc),
                            fixed3(c.metrics.macro_f1),
                            optional(c.p_value)
                        );
                    }
                    None => {
                        let _ = write!(row, " | {:<block_w$}", "missing");
                    }
                }
            }
            let _ = writeln!(out, "{}", row.trim_end());
        }
        let unconverged: Vec<String> = g
            .cells
            .iter()
            .filter(|c| c.unconverged_folds > 0)
            .map(|c| format!("{} / {}: {}", c.encoder, c.probe, c.unconverged_folds))
            .collect();
        if !unconverged.is_empty() {
            let _ = writeln!(out, "\nfolds stopped at the iteration cap: {}", unconverged.join("; "));
        }
        if let Some(m) = &self.perturbation {
            out.push('\n');
            out.push_str(&m.to_text());
        }
        out.push('\n');
        out.push_str(&self.provenance.to_text());
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "encoder",
            "probe",
            "family",
            "n",
            "accuracy",
            "macro_auc",
            "macro_f1",
            "balanced_accuracy",
            "p_value",
            "p_value_conservative",
            "unconverged_folds",
        ])
        .map_err(csv_error)?;
        for c in &self.grid.cells {
            w.write_record([
                c.encoder.clone(),
                c.probe.clone(),
                c.family.key().to_string(),
                c.n.to_string(),
                c.metrics.accuracy.to_string(),
                c.metrics.macro_auc.to_string(),
                c.metrics.macro_f1.to_string(),
                c.metrics.balanced_accuracy.to_string(),
                c.p_value.map_or_else(String::new, |p| p.to_string()),
                c.p_value_conservative.map_or_else(String::new, |p| p.to_string()),
                c.unconverged_folds.to_string(),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    /// Writes `study.{txt,csv,json}` (as selected) and, with a perturbation
    /// section, `margins.csv`. Returns the written paths.
    pub fn write(&self, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for f in formats {
            let (name, body) = match f {
                OutputFormat::Text => ("study.txt", self.to_text()),
                OutputFormat::Csv => ("study.csv", self.to_csv()?),
                OutputFormat::Json => ("study.json", self.to_json()?),
            };
            written.push(write_file(dir, name, &body)?);
            if *f == OutputFormat::Csv {
                if let Some(m) = &self.perturbation {
                    written.push(write_file(dir, "margins.csv", &m.to_csv()?)?);
                }
            }
        }
        Ok(written)
    }
}

impl Provenance {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.tool, self.version);
        let _ = writeln!(out, "seed {}  n_perm {}  config {}", self.seed, self.n_perm, self.config_hash);
        for i in &self.inputs {
            let _ = writeln!(out, "input {}  sha256 {}", i.path, i.sha256);
        }
        out
    }
}

impl MarginReport {
    /// Aggregate line followed by one row per specimen.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Perturbation ({}, {} pairs): avg margin drop {}  std {}  reclass rate {:.1}%",
            self.encoder,
            self.per_specimen.len(),
            fixed3(self.mean_delta),
            fixed3(self.std_delta),
            100.0 * self.reclass_rate
        );
        if !self.skipped_unpaired.is_empty() {
            let _ = writeln!(
                out,
                "skipped {} unpaired eye-clean specimen(s): {}",
                self.skipped_unpaired.len(),
                self.skipped_unpaired.join(", ")
            );
        }
        let w = self.per_specimen.iter().map(|r| r.id.chars().count()).max().unwrap_or(0).max(2);
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>8}  {:>8}  reclassified", "id", "m_clean", "m_pert", "delta_m");
        for r in &self.per_specimen {
            let _ = writeln!(
                out,
                "{:<w$}  {:>8}  {:>8}  {:>8}  {}",
                r.id,
                fixed3(r.m_clean),
                fixed3(r.m_perturbed),
                fixed3(r.delta_m),
                if r.reclassified { "yes" } else { "no" }
            );
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["encoder", "id", "m_clean", "m_perturbed", "delta_m", "reclassified"])
            .map_err(csv_error)?;
        for r in &self.per_specimen {
            w.write_record([
                self.encoder.clone(),
                r.id.clone(),
                r.m_clean.to_string(),
                r.m_perturbed.to_string(),
                r.delta_m.to_string(),
                r.reclassified.to_string(),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }
}

/// Stand-alone output of the `perturb` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub margins: MarginReport,
}

impl PerturbationReport {
    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.margins.to_text(), self.provenance.to_text())
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        Ok(vec![
            write_file(dir, "perturbation.txt", &self.to_text())?,
            write_file(dir, "margins.csv", &self.margins.to_csv()?)?,
            write_file(dir, "perturbation.json", &to_json(self)?)?,
        ])
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, body)?;
    Ok(p)
}
