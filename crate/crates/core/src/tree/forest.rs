//! Random forest of Gini CART trees grown on bootstrap resamples.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, grow, unit_weights, Candidates, Criterion, DecisionTree, FeatureOrder};
use crate::dataset::{class_counts, ClassId};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::rng::{stream, sub_seed};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn per node; `None` means ⌊√d⌋ (at least 1).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: 4,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidArgument("features_per_split must be >= 1".into()));
        }
        Ok(())
    }

    pub fn features_for(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .min(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub config: ForestConfig,
    pub dim: usize,
}

impl ForestModel {
    /// Mean of the leaf class-frequency vectors across trees.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x)?;
        let mut p = Array1::<f64>::zeros(NUM_CLASSES);
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_value(x)) {
                *acc += v;
            }
        }
        Ok(p / self.trees.len() as f64)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        Ok(ClassId::new(argmax(self.scores(x)?.view()))?)
    }
}

/// Weighted class counts.
pub(crate) struct Gini<'a> {
    pub labels: &'a [usize],
    pub weights: &'a [f64],
}

impl Criterion for Gini<'_> {
    type Stats = [f64; NUM_CLASSES];

    #[inline]
    fn add(&self, stats: &mut Self::Stats, sample: usize) {
        stats[self.labels[sample]] += self.weights[sample];
    }

    #[inline]
    fn difference(&self, total: &Self::Stats, part: &Self::Stats) -> Self::Stats {
        std::array::from_fn(|k| total[k] - part[k])
    }

    /// Σ c_k² / W, so that the gain equals the drop in weighted Gini impurity.
    #[inline]
    fn score(&self, s: &Self::Stats) -> f64 {
        let w: f64 = s.iter().sum();
        if w <= 0.0 {
            return 0.0;
        }
        s.iter().map(|c| c * c).sum::<f64>() / w
    }

    fn leaf(&self, s: &Self::Stats) -> Vec<f64> {
        let w: f64 = s.iter().sum();
        s.iter().map(|c| c / w).collect()
    }

    fn is_terminal(&self, s: &Self::Stats) -> bool {
        s.iter().filter(|&&c| c > 0.0).count() <= 1
    }
}

/// A single Gini tree on `rows` (with multiplicity) using all features.
pub fn train_gini_tree(
    x: ArrayView2<'_, f64>,
    y: &[ClassId],
    rows: &[usize],
    max_depth: usize,
) -> Result<DecisionTree> {
    let order = FeatureOrder::new(x);
    let weights = unit_weights(&order, x, rows)?;
    let labels: Vec<usize> = y.iter().map(|c| c.index()).collect();
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let crit = Gini {
        labels: &labels,
        weights: &weights,
    };
    Ok(grow(x, &order, &weights, &crit, max_depth, || Candidates::All))
}

pub fn train_random_forest(x: ArrayView2<'_, f64>, y: &[ClassId], cfg: &ForestConfig) -> Result<ForestModel> {
    let order = FeatureOrder::new(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    fit_forest(x, &order, y, &rows, cfg)
}

/// Trains on the subset `rows` of `x`; `y` is indexed like the rows of `x`.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    order: &FeatureOrder,
    y: &[ClassId],
    rows: &[usize],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    cfg.validate()?;
    let base = unit_weights(order, x, rows)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let train_labels: Vec<ClassId> = rows.iter().map(|&r| y[r]).collect();
    if let Some(k) = class_counts(&train_labels).iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    let labels: Vec<usize> = y.iter().map(|c| c.index()).collect();
    let d = x.ncols();
    let m = cfg.features_for(d);

    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(sub_seed(cfg.seed, t as u64));
            let mut weights = vec![0.0; base.len()];
            for _ in 0..rows.len() {
                weights[rows[rng.random_range(0..rows.len())]] += 1.0;
            }
            let crit = Gini {
                labels: &labels,
                weights: &weights,
            };
            grow(x, order, &weights, &crit, cfg.max_depth, || {
                if m == d {
                    Candidates::All
                } else {
                    let mut fs = rand::seq::index::sample(&mut rng, d, m).into_vec();
                    fs.sort_unstable();
                    Candidates::Subset(fs)
                }
            })
        })
        .collect();
    Ok(ForestModel {
        trees,
        config: cfg.clone(),
        dim: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn ids(v: &[usize]) -> Vec<ClassId> {
        v.iter().map(|&c| ClassId::new(c).unwrap()).collect()
    }

    #[test]
    fn depth_zero_gives_bootstrap_priors() {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i * 3 + j) as f64);
        let y = ids(&[0, 0, 0, 1, 1, 2]);
        let cfg = ForestConfig {
            n_trees: 400,
            max_depth: 0,
            ..Default::default()
        };
        let m = train_random_forest(x.view(), &y, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let p = m.scores(x.row(0)).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        for (got, want) in p.iter().zip([0.5, 1.0 / 3.0, 1.0 / 6.0]) {
            assert!((got - want).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn averaging_of_leaves() {
        let leaf = |v: Vec<f64>| DecisionTree {
            nodes: vec![super::super::Node::Leaf { value: v }],
            max_depth: 0,
        };
        let m = ForestModel {
            trees: vec![leaf(vec![1.0, 0.0, 0.0]), leaf(vec![0.0, 1.0, 0.0])],
            config: ForestConfig::default(),
            dim: 1,
        };
        assert_eq!(m.scores(array![0.0].view()).unwrap(), array![0.5, 0.5, 0.0]);
        assert!(m.scores(array![0.0, 1.0].view()).is_err());
    }

    #[test]
    fn single_feature_split_fits_training_set() {
        // x < 0 is class 0, x >= 0 class 1; class 2 sits far to the right
        let mut xs: Vec<f64> = (0..20).map(|i| i as f64 - 10.0).collect();
        let mut y: Vec<usize> = xs.iter().map(|&v| usize::from(v >= 0.0)).collect();
        xs.extend([100.0, 101.0]);
        y.extend([2, 2]);
        let x = Array2::from_shape_vec((22, 1), xs).unwrap();
        let y = ids(&y);
        let cfg = ForestConfig {
            n_trees: 50,
            max_depth: 2,
            ..Default::default()
        };
        let m = train_random_forest(x.view(), &y, &cfg).unwrap();
        assert!((0..22).all(|i| m.predict(x.row(i)).unwrap() == y[i]));
    }

    #[test]
    fn missing_class_and_bad_config() {
        let x = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let y = ids(&[0, 0, 1, 1]);
        assert!(matches!(
            train_random_forest(x.view(), &y, &ForestConfig::default()),
            Err(Error::MissingClass(2))
        ));
        let y = ids(&[0, 1, 2, 2]);
        let bad = ForestConfig {
            n_trees: 0,
            ..Default::default()
        };
        assert!(train_random_forest(x.view(), &y, &bad).is_err());
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let x = Array2::from_shape_fn((15, 9), |(i, j)| ((i * 7 + j * 13) % 11) as f64);
        let y = ids(&(0..15).map(|i| i % 3).collect::<Vec<_>>());
        let cfg = ForestConfig {
            n_trees: 30,
            seed: 9,
            ..Default::default()
        };
        let a = train_random_forest(x.view(), &y, &cfg).unwrap();
        let b = train_random_forest(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_random_forest(x.view(), &y, &ForestConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, c);
    }
}
