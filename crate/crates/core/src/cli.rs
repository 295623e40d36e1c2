//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Overrides, StudyConfig, WORKERS_ENV};
use crate::dataset::{align, generate_gaussian_control, load_embeddings, load_manifest, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::{run_study, with_workers, ProbeSpec};
use crate::features::{sidecar_path, ClassicalBank, ClassicalConfig};
use crate::linear::TrainConfig;
use crate::perturbation::{margin_drop_report, paired_embeddings, train_frozen_probe_for_perturbation, MarginReport};
use crate::report::{digest_input, InputDigest, PerturbationReport, Provenance, StudyReport, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "probe-bench", version, about = "Leave-one-out probing with permutation significance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the encoder × probe study described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n_perm: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the 14-dimensional classical features and their histogram sidecar.
    ExtractClassical {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a Gaussian control embedding file.
    Gaussian {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Margin drop of paired clean/perturbed embeddings under a frozen logistic probe.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file of logistic training options.
        #[arg(long)]
        probe_config: Option<PathBuf>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            n_perm,
            seed,
            workers,
            out,
        } => {
            let overrides = Overrides { n_perm, seed, workers, out };
            let cfg = StudyConfig::load(&config, &overrides)?;
            let report = cmd_run(&cfg)?;
            report.write(&cfg.out, &cfg.formats)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::ExtractClassical { images, manifest, out } => cmd_extract_classical(&images, &manifest, &out),
        Command::Gaussian { n, d, seed, out } => cmd_gaussian(n, d, seed, &out),
        Command::Perturb {
            manifest,
            embeddings,
            out,
            probe_config,
        } => {
            let cfg = match probe_config {
                Some(p) => load_train_config(&p)?,
                None => TrainConfig::default(),
            };
            let report = cmd_perturb(&manifest, &embeddings, &cfg)?;
            report.write(&out)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

/// Settings that determine a study's results; hashed into the provenance.
#[derive(Serialize)]
struct StudySettings<'a> {
    sources: &'a [String],
    probes: &'a [ProbeSpec],
    n_perm: usize,
    seed: u64,
    perturbation: Option<&'a TrainConfig>,
}

pub fn cmd_run(cfg: &StudyConfig) -> Result<StudyReport> {
    let manifest = load_manifest(&cfg.manifest)?;
    let mut inputs = vec![digest_input(&cfg.manifest, &cfg.base)?];
    let mut files: Vec<PathBuf> = cfg.sources.iter().flat_map(|s| s.input_files(&manifest)).collect();
    files.extend(cfg.perturbation.iter().cloned());
    for f in files {
        let d = digest_input(&f, &cfg.base)?;
        if !inputs.contains(&d) {
            inputs.push(d);
        }
    }

    let sources = cfg
        .sources
        .iter()
        .map(|s| s.load(&manifest, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let (grid, perturbation) = with_workers(cfg.workers, || -> Result<_> {
        let grid = run_study(&manifest, &sources, &cfg.probes, cfg.n_perm, cfg.seed)?;
        let perturbation = match &cfg.perturbation {
            Some(p) => Some(perturbation_report(&manifest, p, &cfg.perturbation_probe)?),
            None => None,
        };
        Ok((grid, perturbation))
    })??;

    let settings = StudySettings {
        sources: &cfg.source_entries,
        probes: &cfg.probes,
        n_perm: cfg.n_perm,
        seed: cfg.seed,
        perturbation: cfg.perturbation.as_ref().map(|_| &cfg.perturbation_probe),
    };
    Ok(StudyReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new(cfg.seed, cfg.n_perm, &settings, inputs)?,
        probes: cfg.probes.clone(),
        grid,
        perturbation,
    })
}

fn perturbation_report(manifest: &DatasetManifest, embeddings: &Path, cfg: &TrainConfig) -> Result<MarginReport> {
    if !manifest.has_pairs() {
        return Err(Error::Data("manifest links no clean/perturbed pairs (pair_id column is empty)".into()));
    }
    let emb = load_embeddings(embeddings)?;
    let data = align(manifest, &emb)?.dataset;
    let (pairs, unpaired) = paired_embeddings(manifest, &emb)?;
    let probe = train_frozen_probe_for_perturbation(&data, cfg)?;
    let mut report = margin_drop_report(&probe, &pairs)?;
    report.skipped_unpaired = unpaired;
    Ok(report)
}

pub fn cmd_perturb(manifest_path: &Path, embeddings: &Path, cfg: &TrainConfig) -> Result<PerturbationReport> {
    cfg.validate().map_err(|e| Error::Config(format!("probe config: {e}")))?;
    let manifest = load_manifest(manifest_path)?;
    let margins = perturbation_report(&manifest, embeddings, cfg)?;
    let inputs: Vec<InputDigest> = [manifest_path, embeddings]
        .iter()
        .map(|p| digest_input(p, Path::new("")))
        .collect::<Result<_>>()?;
    Ok(PerturbationReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new(cfg.seed, 0, cfg, inputs)?,
        margins,
    })
}

fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Writes the features under references fitted on every original specimen,
/// plus the per-image histograms needed to refit references inside folds.
pub fn cmd_extract_classical(images: &Path, manifest_path: &Path, out: &Path) -> Result<()> {
    if !images.is_dir() {
        return Err(Error::Data(format!("image directory {} does not exist", images.display())));
    }
    let manifest = load_manifest(manifest_path)?;
    let originals = manifest.originals();
    let bank = ClassicalBank::from_records(&originals, images, &ClassicalConfig::default())?;
    let labels: Vec<_> = originals.iter().map(|r| r.label).collect();
    let set = bank.to_embeddings(&labels)?;
    ensure_parent(out)?;
    set.save(out)?;
    bank.save_json(&sidecar_path(out))?;
    Ok(())
}

pub fn cmd_gaussian(n: usize, d: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::Config(format!("gaussian needs n >= 1 and d >= 1 (got n={n}, d={d})")));
    }
    ensure_parent(out)?;
    generate_gaussian_control(n, d, seed)?.save(out)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

