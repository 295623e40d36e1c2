//! Study configuration (TOML) and the feature sources it names.
//!
//! ```toml
//! manifest = "manifest.csv"
//! sources = ["emb/siglip2.csv", "gaussian:37:768", "classical:images"]
//! probes = ["logistic", "linear_svm", "gbt", "random_forest"]
//! n_perm = 1000
//! seed = 7
//! out = "results"
//! formats = ["text", "csv", "json"]
//! perturbation = "emb/siglip2_pairs.csv"
//!
//! [probe.random_forest]
//! n_trees = 500
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{gaussian_control_for_ids, load_embeddings, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, ProbeFamily, ProbeSpec, Source};
use crate::features::{sidecar_path, ClassicalBank, ClassicalConfig, CLASSICAL_ENCODER_NAME};
use crate::linear::TrainConfig;

pub const DEFAULT_N_PERM: usize = 1000;
pub const WORKERS_ENV: &str = "PROBE_BENCH_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Text,
    Csv,
    Json,
}

/// File contents as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: PathBuf,
    pub sources: Vec<String>,
    #[serde(default)]
    pub probes: Option<Vec<String>>,
    #[serde(default)]
    pub n_perm: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<OutputFormat>>,
    /// Embedding file holding both sides of the manifest's pairs.
    #[serde(default)]
    pub perturbation: Option<PathBuf>,
    /// Per-family parameter overrides, keyed by family key.
    #[serde(default)]
    pub probe: BTreeMap<String, toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SourceSpec {
    Embeddings(PathBuf),
    Gaussian { n: usize, d: usize, seed: Option<u64> },
    Classical(PathBuf),
}

impl SourceSpec {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        if let Some(rest) = text.strip_prefix("gaussian:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let num = |s: &str, what: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::Config(format!("source {text:?}: {what} must be a non-negative integer")))
            };
            if !(2..=3).contains(&parts.len()) {
                return Err(Error::Config(format!("source {text:?}: expected gaussian:<n>:<d>[:seed]")));
            }
            let n = num(parts[0], "n")? as usize;
            let d = num(parts[1], "d")? as usize;
            if n == 0 || d == 0 {
                return Err(Error::Config(format!("source {text:?}: n and d must be >= 1")));
            }
            let seed = parts.get(2).map(|s| num(s, "seed")).transpose()?;
            Ok(SourceSpec::Gaussian { n, d, seed })
        } else if let Some(dir) = text.strip_prefix("classical:") {
            if dir.is_empty() {
                return Err(Error::Config(format!("source {text:?}: missing image directory")));
            }
            Ok(SourceSpec::Classical(base.join(dir)))
        } else if text.is_empty() {
            Err(Error::Config("empty source entry".into()))
        } else {
            Ok(SourceSpec::Embeddings(base.join(text)))
        }
    }

    /// Input files whose contents determine this source.
    pub fn input_files(&self, manifest: &DatasetManifest) -> Vec<PathBuf> {
        match self {
            SourceSpec::Embeddings(p) => {
                let side = sidecar_path(p);
                if side.is_file() {
                    vec![p.clone(), side]
                } else {
                    vec![p.clone()]
                }
            }
            SourceSpec::Gaussian { .. } => Vec::new(),
            SourceSpec::Classical(dir) => manifest
                .originals()
                .iter()
                .filter_map(|r| crate::features::resolve_image_path(r, dir).ok())
                .collect(),
        }
    }

    /// Builds the feature source. Embedding files with a histogram sidecar
    /// become classical sources so references are refitted inside folds.
    pub fn load(&self, manifest: &DatasetManifest, master_seed: u64) -> Result<Source> {
        match self {
            SourceSpec::Embeddings(p) => {
                let side = sidecar_path(p);
                if side.is_file() {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| CLASSICAL_ENCODER_NAME.into());
                    Ok(Source::classical(name, ClassicalBank::load_json(&side)?))
                } else {
                    Ok(Source::embeddings(load_embeddings(p)?))
                }
            }
            SourceSpec::Gaussian { n, d, seed } => {
                let ids: Vec<String> = manifest.originals().iter().map(|r| r.id.clone()).collect();
                if ids.len() != *n {
                    return Err(Error::Config(format!(
                        "gaussian source asks for n={n} but the manifest has {} original specimens",
                        ids.len()
                    )));
                }
                Ok(Source::embeddings(gaussian_control_for_ids(ids, *d, seed.unwrap_or(master_seed))?))
            }
            SourceSpec::Classical(dir) => {
                let bank = ClassicalBank::from_records(&manifest.originals(), dir, &ClassicalConfig::default())?;
                Ok(Source::classical(CLASSICAL_ENCODER_NAME, bank))
            }
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub n_perm: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Directory relative paths were resolved against.
    pub base: PathBuf,
    pub manifest: PathBuf,
    /// Source entries as written in the file.
    pub source_entries: Vec<String>,
    pub sources: Vec<SourceSpec>,
    pub probes: Vec<ProbeSpec>,
    pub n_perm: usize,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub perturbation: Option<PathBuf>,
    /// Probe used for the perturbation diagnostic.
    pub perturbation_probe: TrainConfig,
}

impl StudyConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(file, base, overrides)
    }

    pub fn resolve(file: ConfigFile, base: &Path, overrides: &Overrides) -> Result<Self> {
        let n_perm = overrides.n_perm.or(file.n_perm).unwrap_or(DEFAULT_N_PERM);
        if n_perm < 1 {
            return Err(Error::Config("n_perm must be >= 1".into()));
        }
        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let workers = match overrides.workers.or(file.workers) {
            Some(w) => w,
            None => workers_from_env()?,
        };
        if workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if file.sources.is_empty() {
            return Err(Error::Config("sources must name at least one source".into()));
        }
        let sources = file
            .sources
            .iter()
            .map(|s| SourceSpec::parse(s, base))
            .collect::<Result<Vec<_>>>()?;

        for key in file.probe.keys() {
            if ProbeFamily::from_key(key).is_none() {
                return Err(Error::Config(format!("probe.{key}: unknown probe family")));
            }
        }
        let keys = match &file.probes {
            Some(list) => list.clone(),
            None => ProbeFamily::ALL.iter().map(|f| f.key().to_string()).collect(),
        };
        if keys.is_empty() {
            return Err(Error::Config("probes must name at least one probe".into()));
        }
        let mut probes = Vec::with_capacity(keys.len());
        for key in &keys {
            let family = ProbeFamily::from_key(key).ok_or_else(|| {
                Error::Config(format!(
                    "probes: unknown probe {key:?} (expected one of logistic, linear_svm, gbt, random_forest)"
                ))
            })?;
            if probes.iter().any(|p: &ProbeSpec| p.family() == family) {
                return Err(Error::Config(format!("probes: {key:?} listed twice")));
            }
            probes.push(probe_spec(family, file.probe.get(key), seed)?);
        }
        let perturbation_probe = match probe_spec(ProbeFamily::Logistic, file.probe.get("logistic"), seed)?.config {
            ProbeConfig::Logistic(c) => c,
            _ => unreachable!("logistic family"),
        };

        let mut formats = file
            .formats
            .unwrap_or_else(|| vec![OutputFormat::Text, OutputFormat::Csv, OutputFormat::Json]);
        formats.sort();
        formats.dedup();
        if formats.is_empty() {
            return Err(Error::Config("formats must list at least one output format".into()));
        }

        Ok(StudyConfig {
            base: base.to_path_buf(),
            manifest: base.join(&file.manifest),
            source_entries: file.sources.clone(),
            sources,
            probes,
            n_perm,
            seed,
            workers,
            out: overrides.out.clone().or(file.out.map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("results")),
            formats,
            perturbation: file.perturbation.map(|p| base.join(p)),
            perturbation_probe,
        })
    }
}

/// Family defaults with the master seed, then the file's overrides.
fn probe_spec(family: ProbeFamily, table: Option<&toml::Table>, seed: u64) -> Result<ProbeSpec> {
    let base = ProbeSpec::default_for(family).with_seed(seed);
    let Some(table) = table else {
        return Ok(base);
    };
    let ctx = |e: toml::de::Error| Error::Config(format!("probe.{}: {}", family.key(), e.message()));
    let mut merged = toml::Table::try_from(&base.config).map_err(|e| Error::Config(e.to_string()))?;
    merged.remove("family");
    // keys the defaults leave out (unset options) are still accepted
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    let config = match family {
        ProbeFamily::Logistic => ProbeConfig::Logistic(merged.try_into().map_err(ctx)?),
        ProbeFamily::LinearSvm => ProbeConfig::LinearSvm(merged.try_into().map_err(ctx)?),
        ProbeFamily::RandomForest => ProbeConfig::RandomForest(merged.try_into().map_err(ctx)?),
        ProbeFamily::Gbt => ProbeConfig::Gbt(merged.try_into().map_err(ctx)?),
    };
    let spec = ProbeSpec::new(base.name, config);
    spec.validate()
        .map_err(|e| Error::Config(format!("probe.{}: {e}", family.key())))?;
    Ok(spec)
}

/// `PROBE_BENCH_WORKERS` if set, else the machine's available parallelism.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&w| w >= 1)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
