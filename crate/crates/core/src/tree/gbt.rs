//! Multiclass gradient boosting with a softmax link and second-order leaf
//! values: each round fits one regression tree per class to the gradient and
//! Hessian diagonal of the cross-entropy at the current scores.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_dim, grow, unit_weights, Candidates, Criterion, DecisionTree, FeatureOrder};
use crate::dataset::{class_counts, ClassId};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::NUM_CLASSES;

/// Hessian entries are floored here so leaves stay finite on saturated rows.
const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda_leaf: f64,
    /// Reserved; boosting here draws no random numbers.
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            lambda_leaf: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds < 1 {
            return Err(Error::InvalidArgument("n_rounds must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if !(self.lambda_leaf >= 0.0) || !self.lambda_leaf.is_finite() {
            return Err(Error::InvalidArgument("lambda_leaf must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// `stage_trees[r][k]` is round r's tree for class k; leaves hold the
    /// unscaled step `−G/(H+λ)`.
    pub stage_trees: Vec<Vec<DecisionTree>>,
    pub base_score: Vec<f64>,
    pub config: GbtConfig,
    pub dim: usize,
    /// Mean training cross-entropy before the first round and after each.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    /// Logits `base_score + lr·Σ_r tree_rk(x)`.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x)?;
        let mut z = Array1::from(self.base_score.clone());
        let lr = self.config.learning_rate;
        for round in &self.stage_trees {
            for (k, t) in round.iter().enumerate() {
                z[k] += lr * t.leaf_value(x)[0];
            }
        }
        Ok(z)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        Ok(ClassId::new(argmax(self.scores(x)?.view()))?)
    }
}

struct SecondOrder<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
}

impl Criterion for SecondOrder<'_> {
    type Stats = (f64, f64);

    #[inline]
    fn add(&self, s: &mut Self::Stats, i: usize) {
        s.0 += self.grad[i];
        s.1 += self.hess[i];
    }

    #[inline]
    fn difference(&self, t: &Self::Stats, p: &Self::Stats) -> Self::Stats {
        (t.0 - p.0, t.1 - p.1)
    }

    #[inline]
    fn score(&self, s: &Self::Stats) -> f64 {
        // H > 0 for any nonempty side since every Hessian entry is floored
        s.0 * s.0 / (s.1 + self.lambda)
    }

    fn leaf(&self, s: &Self::Stats) -> Vec<f64> {
        let denom = s.1 + self.lambda;
        vec![if denom > 0.0 { -s.0 / denom } else { 0.0 }]
    }
}

pub fn train_gbt(x: ArrayView2<'_, f64>, y: &[ClassId], cfg: &GbtConfig) -> Result<GbtModel> {
    let order = FeatureOrder::new(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    fit_gbt(x, &order, y, &rows, cfg)
}

/// Trains on the subset `rows` of `x`; `y` is indexed like the rows of `x`.
pub fn fit_gbt(
    x: ArrayView2<'_, f64>,
    order: &FeatureOrder,
    y: &[ClassId],
    rows: &[usize],
    cfg: &GbtConfig,
) -> Result<GbtModel> {
    cfg.validate()?;
    let weights = unit_weights(order, x, rows)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let train_labels: Vec<ClassId> = rows.iter().map(|&r| y[r]).collect();
    let counts = class_counts(&train_labels);
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    let n = x.nrows();
    let total = rows.len() as f64;
    let base_score: Vec<f64> = counts.iter().map(|&c| (c as f64 / total).ln()).collect();

    let mut f: Vec<[f64; NUM_CLASSES]> = vec![std::array::from_fn(|k| base_score[k]); n];
    let mut p = vec![[0.0; NUM_CLASSES]; n];
    let mut grad = vec![vec![0.0; n]; NUM_CLASSES];
    let mut hess = vec![vec![0.0; n]; NUM_CLASSES];
    let mut stage_trees = Vec::with_capacity(cfg.n_rounds);
    let mut train_loss = Vec::with_capacity(cfg.n_rounds + 1);

    let refresh = |f: &[[f64; NUM_CLASSES]], p: &mut [[f64; NUM_CLASSES]]| -> f64 {
        let mut loss = 0.0;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let max = f[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: [f64; NUM_CLASSES] = std::array::from_fn(|k| (f[i][k] - max).exp());
            let s: f64 = e.iter().sum();
            for k in 0..NUM_CLASSES {
                p[i][k] = e[k] / s;
            }
            loss += weights[i] * (max + s.ln() - f[i][y[i].index()]);
        }
        loss / total
    };
    train_loss.push(refresh(&f, &mut p));

    for _ in 0..cfg.n_rounds {
        for k in 0..NUM_CLASSES {
            for i in 0..n {
                let w = weights[i];
                if w == 0.0 {
                    grad[k][i] = 0.0;
                    hess[k][i] = 0.0;
                    continue;
                }
                let target = if y[i].index() == k { 1.0 } else { 0.0 };
                grad[k][i] = w * (p[i][k] - target);
                hess[k][i] = w * (p[i][k] * (1.0 - p[i][k])).max(MIN_HESSIAN);
            }
        }
        let round: Vec<DecisionTree> = (0..NUM_CLASSES)
            .map(|k| {
                let crit = SecondOrder {
                    grad: &grad[k],
                    hess: &hess[k],
                    lambda: cfg.lambda_leaf,
                };
                grow(x, order, &weights, &crit, cfg.max_depth, || Candidates::All)
            })
            .collect();
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            for (k, t) in round.iter().enumerate() {
                f[i][k] += cfg.learning_rate * t.leaf_value(x.row(i))[0];
            }
        }
        stage_trees.push(round);
        train_loss.push(refresh(&f, &mut p));
    }

    Ok(GbtModel {
        stage_trees,
        base_score,
        config: cfg.clone(),
        dim: x.ncols(),
        train_loss,
    })
}
