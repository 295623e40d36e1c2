//! The encoder × probe grid.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_loocv_labels, loocv_with_plan, permutation_test_with_plan, FeatureView, LoocvPlan, ProbeSpec};
use crate::dataset::{align, DatasetManifest, EmbeddingSet, GAUSSIAN_CONTROL_NAME};
use crate::error::{Error, Result};
use crate::features::ClassicalBank;
use crate::metrics::MetricBundle;

#[derive(Debug, Clone)]
pub enum SourceFeatures {
    Embeddings(EmbeddingSet),
    Classical(ClassicalBank),
}

#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub features: SourceFeatures,
    /// Label-independent control: no permutation p-value is reported.
    pub control: bool,
}

impl Source {
    pub fn embeddings(set: EmbeddingSet) -> Self {
        Source {
            name: set.encoder_name().to_string(),
            control: set.encoder_name() == GAUSSIAN_CONTROL_NAME,
            features: SourceFeatures::Embeddings(set),
        }
    }

    pub fn classical(name: impl Into<String>, bank: ClassicalBank) -> Self {
        Source {
            name: name.into(),
            features: SourceFeatures::Classical(bank),
            control: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub encoder: String,
    pub probe: String,
    pub family: super::ProbeFamily,
    pub n: usize,
    pub metrics: MetricBundle,
    pub p_value: Option<f64>,
    pub p_value_conservative: Option<f64>,
    pub unconverged_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGrid {
    pub encoders: Vec<String>,
    pub probes: Vec<String>,
    /// Encoder-major: all probes of the first encoder, then the next.
    pub cells: Vec<CellResult>,
}

impl StudyGrid {
    pub fn cell(&self, encoder: &str, probe: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.encoder == encoder && c.probe == probe)
    }
}

/// LOOCV metrics for every (source, probe) pair over the manifest's original
/// specimens, with permutation p-values except for control sources.
pub fn run_study(
    manifest: &DatasetManifest,
    sources: &[Source],
    probes: &[ProbeSpec],
    n_perm: usize,
    seed: u64,
) -> Result<StudyGrid> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("study needs at least one feature source".into()));
    }
    if probes.is_empty() {
        return Err(Error::InvalidArgument("study needs at least one probe".into()));
    }
    if n_perm < 1 {
        return Err(Error::InvalidArgument("n_perm must be >= 1".into()));
    }
    for p in probes {
        p.validate()?;
    }
    let originals = manifest.originals();
    let ids: Vec<String> = originals.iter().map(|r| r.id.clone()).collect();
    let labels: Vec<_> = originals.iter().map(|r| r.label).collect();
    check_loocv_labels(&labels)?;

    let mut cells = Vec::with_capacity(sources.len() * probes.len());
    for source in sources {
        let matrix: Option<Array2<f64>>;
        let bank: Option<ClassicalBank>;
        let view = match &source.features {
            SourceFeatures::Embeddings(set) => {
                matrix = Some(align(manifest, set)?.dataset.x);
                FeatureView::Matrix(matrix.as_ref().expect("set above").view())
            }
            SourceFeatures::Classical(b) => {
                bank = Some(b.select(&ids)?);
                FeatureView::Classical(bank.as_ref().expect("set above"))
            }
        };
        for probe in probes {
            log::info!("{} / {}", source.name, probe.name);
            let ctx = |e: Error| e.in_context(format!("{} / {}", source.name, probe.name));
            let plan = LoocvPlan::new(probe, view).map_err(ctx)?;
            let res = loocv_with_plan(&plan, &labels, &ids).map_err(ctx)?;
            let perm = if source.control {
                None
            } else {
                Some(
                    permutation_test_with_plan(&plan, &labels, &ids, n_perm, seed, Some(res.metrics.macro_auc))
                        .map_err(ctx)?,
                )
            };
            cells.push(CellResult {
                encoder: source.name.clone(),
                probe: probe.name.clone(),
                family: probe.family(),
                n: ids.len(),
                metrics: res.metrics,
                p_value: perm.as_ref().map(|p| p.p_value),
                p_value_conservative: perm.as_ref().map(|p| p.p_value_conservative),
                unconverged_folds: res.unconverged_folds,
            });
        }
    }
    Ok(StudyGrid {
        encoders: sources.iter().map(|s| s.name.clone()).collect(),
        probes: probes.iter().map(|p| p.name.clone()).collect(),
        cells,
    })
}
