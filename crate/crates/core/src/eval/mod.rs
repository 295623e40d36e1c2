//! Leave-one-out evaluation and label-permutation significance.
//!
//! A [`LoocvPlan`] binds a probe to a feature source and caches everything
//! that depends on features alone: per-fold standardised Gram matrices for
//! the linear probes, presorted columns for the tree probes, per-image
//! descriptors for the classical baseline. Evaluating a label vector then
//! only trains and scores, which is what each permutation repeats.

mod probe;
mod study;

pub use probe::{ProbeConfig, ProbeFamily, ProbeSpec};
pub use study::{run_study, CellResult, Source, SourceFeatures, StudyGrid};

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_counts, AlignedDataset, ClassId};
use crate::error::{Error, Result};
use crate::features::ClassicalBank;
use crate::linear::span::{Spectral, WarmStart};
use crate::linear::{fit_logistic_kernel, fit_svm_kernel, KernelView, TrainConfig};
use crate::metrics::{macro_ovr_auc, MetricBundle, PooledPredictions};
use crate::rng::{shuffle, stream, sub_seed};
use crate::tree::{forest::fit_forest, gbt::fit_gbt, FeatureOrder};
use crate::NUM_CLASSES;

/// Features a plan reads: a fixed matrix, or classical descriptors whose
/// reference distances are refitted inside every fold.
#[derive(Debug, Clone, Copy)]
pub enum FeatureView<'a> {
    Matrix(ArrayView2<'a, f64>),
    Classical(&'a ClassicalBank),
}

impl FeatureView<'_> {
    fn len(&self) -> usize {
        match self {
            FeatureView::Matrix(x) => x.nrows(),
            FeatureView::Classical(b) => b.len(),
        }
    }
}

enum Cache {
    Kernels { full: KernelView, folds: Vec<KernelView> },
    Order(FeatureOrder),
    None,
}

/// Label-independent state for repeated LOOCV runs of one probe.
pub struct LoocvPlan<'a> {
    probe: ProbeSpec,
    features: FeatureView<'a>,
    cache: Cache,
}

/// Held-out score rows in sample order plus the number of folds whose
/// solver stopped at the iteration cap.
#[derive(Debug, Clone)]
pub struct FoldScores {
    pub scores: Array2<f64>,
    pub train_sizes: Vec<usize>,
    pub unconverged: usize,
}

fn without(n: usize, i: usize) -> Vec<usize> {
    (0..n).filter(|&j| j != i).collect()
}

/// Rows of `x` other than `i`.
fn drop_row(x: ArrayView2<'_, f64>, i: usize) -> Array2<f64> {
    let rows = without(x.nrows(), i);
    x.select(Axis(0), &rows)
}

/// Every class needs two members so each training fold still contains it.
pub fn check_loocv_labels(labels: &[ClassId]) -> Result<()> {
    let counts = class_counts(labels);
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Data(format!(
            "class {} has {} member(s); leave-one-out folds need at least 2 per class",
            ClassId::new(k)?,
            counts[k]
        )));
    }
    Ok(())
}

impl<'a> LoocvPlan<'a> {
    pub fn new(probe: &ProbeSpec, features: FeatureView<'a>) -> Result<Self> {
        probe.validate()?;
        let n = features.len();
        if n < 2 {
            return Err(Error::Data("leave-one-out needs at least 2 samples".into()));
        }
        let cache = match (features, probe.family()) {
            (FeatureView::Matrix(x), ProbeFamily::Logistic | ProbeFamily::LinearSvm) => {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite feature value".into()));
                }
                let folds = (0..n)
                    .into_par_iter()
                    .map(|i| KernelView::build(drop_row(x, i).view(), x.slice(s![i..i + 1, ..])))
                    .collect::<Result<Vec<_>>>()?;
                Cache::Kernels {
                    full: KernelView::build(x, x.slice(s![0..0, ..]))?,
                    folds,
                }
            }
            (FeatureView::Matrix(x), _) => Cache::Order(FeatureOrder::new(x)),
            (FeatureView::Classical(_), _) => Cache::None,
        };
        Ok(LoocvPlan {
            probe: probe.clone(),
            features,
            cache,
        })
    }

    pub fn probe(&self) -> &ProbeSpec {
        &self.probe
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trains on every leave-one-out fold under `labels` and scores the
    /// held-out row.
    pub fn fold_scores(&self, labels: &[ClassId]) -> Result<FoldScores> {
        let n = self.len();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        check_loocv_labels(labels)?;
        let mut scores = Array2::zeros((n, NUM_CLASSES));
        let mut train_sizes = Vec::with_capacity(n);
        let mut unconverged = 0;

        match (&self.cache, self.features) {
            (Cache::Kernels { full, folds }, _) => {
                let cfg = self.probe.linear_config().expect("linear probe");
                // The full-data optimum is a close starting point for every
                // fold; each fold still runs to its own tolerance.
                let warm = self.fit_linear(&full.spectral, labels, cfg, None).ok();
                for (i, fold) in folds.iter().enumerate() {
                    let y: Vec<ClassId> = without(n, i).iter().map(|&j| labels[j]).collect();
                    let start = warm.as_ref().map(|w| WarmStart {
                        coef: w
                            .coef
                            .chunks(n)
                            .flat_map(|row| without(n, i).into_iter().map(move |j| row[j]))
                            .collect(),
                        bias: w.bias.clone(),
                    });
                    let sol = self
                        .fit_linear(&fold.spectral, &y, cfg, start.as_ref())
                        .map_err(|e| e.in_context(format!("fold {i}")))?;
                    unconverged += usize::from(!sol.converged);
                    scores.row_mut(i).assign(&ndarray::Array1::from(sol.scores(&fold.cross[0])));
                    train_sizes.push(y.len());
                }
            }
            (Cache::Order(order), FeatureView::Matrix(x)) => {
                for i in 0..n {
                    let rows = without(n, i);
                    let z = self
                        .tree_scores(x, order, labels, &rows, i)
                        .map_err(|e| e.in_context(format!("fold {i}")))?;
                    scores.row_mut(i).assign(&z);
                    train_sizes.push(rows.len());
                }
            }
            (_, FeatureView::Classical(bank)) => {
                for i in 0..n {
                    let rows = without(n, i);
                    let result = bank.fold_matrix(&rows, labels).and_then(|x| self.score_matrix(x.view(), labels, &rows, i));
                    let (z, conv) = result.map_err(|e| e.in_context(format!("fold {i}")))?;
                    unconverged += usize::from(!conv);
                    scores.row_mut(i).assign(&z);
                    train_sizes.push(rows.len());
                }
            }
            (Cache::None, FeatureView::Matrix(_)) => unreachable!("plan cache matches features"),
        }
        Ok(FoldScores {
            scores,
            train_sizes,
            unconverged,
        })
    }

    fn fit_linear(
        &self,
        spec: &Spectral,
        y: &[ClassId],
        cfg: &TrainConfig,
        start: Option<&WarmStart>,
    ) -> Result<crate::linear::span::SpanSolution> {
        match self.probe.family() {
            ProbeFamily::Logistic => fit_logistic_kernel(spec, y, cfg, start),
            _ => fit_svm_kernel(spec, y, cfg, start),
        }
    }

    fn tree_scores(
        &self,
        x: ArrayView2<'_, f64>,
        order: &FeatureOrder,
        labels: &[ClassId],
        rows: &[usize],
        held_out: usize,
    ) -> Result<ndarray::Array1<f64>> {
        match &self.probe.config {
            ProbeConfig::RandomForest(cfg) => fit_forest(x, order, labels, rows, cfg)?.scores(x.row(held_out)),
            ProbeConfig::Gbt(cfg) => fit_gbt(x, order, labels, rows, cfg)?.scores(x.row(held_out)),
            _ => unreachable!("tree probe"),
        }
    }

    /// One fold on a freshly built matrix (classical features).
    fn score_matrix(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[ClassId],
        rows: &[usize],
        held_out: usize,
    ) -> Result<(ndarray::Array1<f64>, bool)> {
        match self.probe.linear_config() {
            Some(cfg) => {
                let train = x.select(Axis(0), rows);
                let kv = KernelView::build(train.view(), x.slice(s![held_out..held_out + 1, ..]))?;
                let y: Vec<ClassId> = rows.iter().map(|&j| labels[j]).collect();
                let sol = self.fit_linear(&kv.spectral, &y, cfg, None)?;
                Ok((ndarray::Array1::from(sol.scores(&kv.cross[0])), sol.converged))
            }
            None => {
                let order = FeatureOrder::new(x);
                Ok((self.tree_scores(x, &order, labels, rows, held_out)?, true))
            }
        }
    }

    /// Macro one-vs-rest AUC of the pooled held-out scores under `labels`.
    pub fn auc(&self, labels: &[ClassId], ids: &[String]) -> Result<f64> {
        let fs = self.fold_scores(labels)?;
        macro_ovr_auc(&PooledPredictions::new(ids.to_vec(), labels.to_vec(), fs.scores)?)
    }
}

#[derive(Debug, Clone)]
pub struct LoocvResult {
    pub probe: ProbeSpec,
    pub pooled: PooledPredictions,
    pub metrics: MetricBundle,
    pub per_fold_train_size: usize,
    /// Training-set size of every fold, in held-out order.
    pub fold_train_sizes: Vec<usize>,
    pub unconverged_folds: usize,
}

impl LoocvResult {
    pub fn num_folds(&self) -> usize {
        self.fold_train_sizes.len()
    }
}

pub fn run_loocv(data: &AlignedDataset, probe: &ProbeSpec) -> Result<LoocvResult> {
    check_loocv_labels(&data.y)?;
    let plan = LoocvPlan::new(probe, FeatureView::Matrix(data.x.view()))?;
    loocv_with_plan(&plan, &data.y, &data.ids)
}

pub fn loocv_with_plan(plan: &LoocvPlan<'_>, labels: &[ClassId], ids: &[String]) -> Result<LoocvResult> {
    check_loocv_labels(labels)?;
    let fs = plan.fold_scores(labels)?;
    if fs.unconverged > 0 {
        log::warn!(
            "{}: {} of {} folds stopped at the iteration cap",
            plan.probe().name,
            fs.unconverged,
            labels.len()
        );
    }
    let pooled = PooledPredictions::new(ids.to_vec(), labels.to_vec(), fs.scores)?;
    let metrics = MetricBundle::compute(&pooled)?;
    Ok(LoocvResult {
        probe: plan.probe().clone(),
        per_fold_train_size: labels.len() - 1,
        fold_train_sizes: fs.train_sizes,
        unconverged_folds: fs.unconverged,
        pooled,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_auc: f64,
    pub null_aucs: Vec<f64>,
    /// Fraction of null statistics at or above the observed one.
    pub p_value: f64,
    /// `(count + 1) / (n_perm + 1)`.
    pub p_value_conservative: f64,
    pub n_perm: usize,
    pub seed: u64,
}

/// Label vector of permutation `j`: a Fisher–Yates shuffle driven by the
/// child stream `sub_seed(seed, j)`.
pub fn permuted_labels(labels: &[ClassId], seed: u64, j: usize) -> Vec<ClassId> {
    let mut out = labels.to_vec();
    shuffle(&mut stream(sub_seed(seed, j as u64)), &mut out);
    out
}

/// Counts null values at or above `observed`.
pub fn p_values(observed: f64, null: &[f64]) -> (f64, f64) {
    let count = null.iter().filter(|&&v| v >= observed).count();
    (
        count as f64 / null.len() as f64,
        (count + 1) as f64 / (null.len() + 1) as f64,
    )
}

/// Evaluates `statistic` on `n_perm` permuted label vectors in parallel.
/// Results land at their permutation index, so the output does not depend
/// on the schedule; the first failing permutation (by index) aborts the run.
pub fn null_distribution<F>(labels: &[ClassId], n_perm: usize, seed: u64, statistic: F) -> Result<Vec<f64>>
where
    F: Fn(&[ClassId]) -> Result<f64> + Sync,
{
    if n_perm < 1 {
        return Err(Error::InvalidArgument("n_perm must be >= 1".into()));
    }
    let results: Vec<Result<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|j| statistic(&permuted_labels(labels, seed, j)).map_err(|e| e.in_context(format!("permutation {j}"))))
        .collect();
    results.into_iter().collect()
}

pub fn permutation_test_with_plan(
    plan: &LoocvPlan<'_>,
    labels: &[ClassId],
    ids: &[String],
    n_perm: usize,
    seed: u64,
    observed_auc: Option<f64>,
) -> Result<PermutationResult> {
    let observed_auc = match observed_auc {
        Some(a) => a,
        None => plan.auc(labels, ids)?,
    };
    let null_aucs = null_distribution(labels, n_perm, seed, |perm| plan.auc(perm, ids))?;
    let (p_value, p_value_conservative) = p_values(observed_auc, &null_aucs);
    Ok(PermutationResult {
        observed_auc,
        null_aucs,
        p_value,
        p_value_conservative,
        n_perm,
        seed,
    })
}

pub fn permutation_test(data: &AlignedDataset, probe: &ProbeSpec, n_perm: usize, seed: u64) -> Result<PermutationResult> {
    if n_perm < 1 {
        return Err(Error::InvalidArgument("n_perm must be >= 1".into()));
    }
    check_loocv_labels(&data.y)?;
    let plan = LoocvPlan::new(probe, FeatureView::Matrix(data.x.view()))?;
    permutation_test_with_plan(&plan, &data.y, &data.ids, n_perm, seed, None)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
