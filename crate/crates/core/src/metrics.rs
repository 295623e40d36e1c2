//! Accuracy, macro F1 and macro one-vs-rest AUC over pooled held-out scores.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// One held-out score row per specimen.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPredictions {
    pub ids: Vec<String>,
    pub labels: Vec<ClassId>,
    pub scores: Array2<f64>,
    pub predicted: Vec<ClassId>,
}

impl PooledPredictions {
    pub fn new(ids: Vec<String>, labels: Vec<ClassId>, scores: Array2<f64>) -> Result<Self> {
        if ids.len() != labels.len() || labels.len() != scores.nrows() {
            return Err(Error::Data(format!(
                "pooled predictions disagree on length: {} ids, {} labels, {} score rows",
                ids.len(),
                labels.len(),
                scores.nrows()
            )));
        }
        let predicted = scores
            .rows()
            .into_iter()
            .map(|row| ClassId::new(argmax(row)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PooledPredictions {
            ids,
            labels,
            scores,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    fn confusion(&self) -> Vec<Vec<usize>> {
        let k = self.num_classes();
        let mut m = vec![vec![0usize; k]; k];
        for (y, p) in self.labels.iter().zip(&self.predicted) {
            m[y.index()][p.index()] += 1;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    /// Mean per-class recall; reported alongside the plain accuracy.
    pub balanced_accuracy: f64,
}

impl MetricBundle {
    pub fn compute(p: &PooledPredictions) -> Result<Self> {
        Ok(MetricBundle {
            accuracy: accuracy(p)?,
            macro_f1: macro_f1(p)?,
            macro_auc: macro_ovr_auc(p)?,
            balanced_accuracy: balanced_accuracy(p)?,
        })
    }
}

fn non_empty(p: &PooledPredictions) -> Result<()> {
    if p.is_empty() {
        Err(Error::Data("no predictions to score".into()))
    } else {
        Ok(())
    }
}

pub fn accuracy(p: &PooledPredictions) -> Result<f64> {
    non_empty(p)?;
    let hits = p.labels.iter().zip(&p.predicted).filter(|(y, q)| y == q).count();
    Ok(hits as f64 / p.len() as f64)
}

pub fn balanced_accuracy(p: &PooledPredictions) -> Result<f64> {
    non_empty(p)?;
    let m = p.confusion();
    let mut sum = 0.0;
    let mut present = 0;
    for (k, row) in m.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support > 0 {
            sum += row[k] as f64 / support as f64;
            present += 1;
        }
    }
    Ok(sum / present as f64)
}

/// Unweighted mean of per-class F1. Zero denominators count as 0, including a
/// class that is neither present nor predicted.
pub fn macro_f1(p: &PooledPredictions) -> Result<f64> {
    non_empty(p)?;
    let m = p.confusion();
    let k = m.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let total: f64 = (0..k)
        .map(|c| {
            let tp = m[c][c];
            let actual: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    Ok(total / k as f64)
}

/// Binary AUC of `scores` for `positive` rows via the Mann–Whitney midrank
/// statistic; tied scores contribute one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&b| b).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "AUC needs at least one positive and one negative (got {n_pos} positive, {n_neg} negative)"
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {s} cannot be ranked")));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; doubled so tie midranks stay integral.
    let mut pos_rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank_x2 = (i + 1 + j) as u64;
        let pos_in_block = order[i..j].iter().filter(|&&r| positive[r]).count() as u64;
        pos_rank_sum_x2 += midrank_x2 * pos_in_block;
        i = j;
    }
    let (n_pos, n_neg) = (n_pos as u64, n_neg as u64);
    let u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Per-class one-vs-rest AUC of score column `k`.
pub fn ovr_auc(p: &PooledPredictions) -> Result<Vec<f64>> {
    (0..p.num_classes())
        .map(|k| {
            let col: Vec<f64> = p.scores.column(k).to_vec();
            let pos: Vec<bool> = p.labels.iter().map(|y| y.index() == k).collect();
            binary_auc(&col, &pos).map_err(|e| Error::Data(format!("class {k}: {e}")))
        })
        .collect()
}

pub fn macro_ovr_auc(p: &PooledPredictions) -> Result<f64> {
    let per_class = ovr_auc(p)?;
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn cls(v: &[usize]) -> Vec<ClassId> {
        v.iter().map(|&k| ClassId::new(k).unwrap()).collect()
    }

    fn pooled(labels: &[usize], scores: Array2<f64>) -> PooledPredictions {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        PooledPredictions::new(ids, cls(labels), scores).unwrap()
    }

    fn one_hot(classes: &[usize], k: usize) -> Array2<f64> {
        let mut m = Array2::zeros((classes.len(), k));
        for (i, &c) in classes.iter().enumerate() {
            m[[i, c]] = 1.0;
        }
        m
    }

    #[test]
    fn accuracy_cases() {
        let p = pooled(&[0, 1, 2], one_hot(&[0, 1, 2], 3));
        assert_eq!(accuracy(&p).unwrap(), 1.0);
        let p = pooled(&[0, 1, 2], one_hot(&[0, 1, 1], 3));
        assert!((accuracy(&p).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let labels: Vec<usize> = [vec![0; 21], vec![1; 9], vec![2; 7]].concat();
        let p = pooled(&labels, one_hot(&vec![0; 37], 3));
        let acc = accuracy(&p).unwrap();
        assert!((acc - 21.0 / 37.0).abs() < 1e-15);
        assert_eq!(format!("{acc:.3}"), "0.568");
    }

    #[test]
    fn f1_cases() {
        let p = pooled(&[0, 1, 2], one_hot(&[0, 1, 2], 3));
        assert_eq!(macro_f1(&p).unwrap(), 1.0);

        let p = pooled(&[0, 0, 1, 1], one_hot(&[0, 1, 0, 1], 2));
        assert!((macro_f1(&p).unwrap() - 0.5).abs() < 1e-15);

        let p = pooled(&[0, 1, 2], one_hot(&[0, 0, 0], 3));
        let f0 = 2.0 * (1.0 / 3.0) * 1.0 / (1.0 / 3.0 + 1.0);
        assert!((macro_f1(&p).unwrap() - f0 / 3.0).abs() < 1e-15);
        assert_eq!(format!("{:.4}", macro_f1(&p).unwrap()), "0.1667");
    }

    #[test]
    fn auc_cases() {
        let p = pooled(&[0, 1, 2, 0], one_hot(&[0, 1, 2, 0], 3));
        assert_eq!(macro_ovr_auc(&p).unwrap(), 1.0);

        let p = pooled(&[0, 1, 2, 0], Array2::from_elem((4, 3), 0.3));
        assert_eq!(macro_ovr_auc(&p).unwrap(), 0.5);

        let auc = binary_auc(&[0.4, 0.3, 0.2, 0.8], &[false, true, false, true]).unwrap();
        assert_eq!(auc, 0.75);

        let p = pooled(&[0, 0, 1], Array2::zeros((3, 3)));
        assert!(macro_ovr_auc(&p).is_err());
    }

    #[test]
    fn tie_break_is_lowest_index() {
        let p = pooled(&[1], array![[0.2, 0.5, 0.5]]);
        assert_eq!(p.predicted, cls(&[1]));
        let p = pooled(&[1], array![[0.0, 0.0, 0.0]]);
        assert_eq!(p.predicted, cls(&[0]));
    }

    #[test]
    fn balanced_accuracy_of_majority_collapse() {
        let labels: Vec<usize> = [vec![0; 21], vec![1; 9], vec![2; 7]].concat();
        let p = pooled(&labels, one_hot(&vec![0; 37], 3));
        assert!((balanced_accuracy(&p).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            for (j, &pj) in positive.iter().enumerate() {
                if pi && !pj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    proptest! {
        #[test]
        fn auc_complement_symmetry(scores in proptest::collection::vec(-5i32..5, 2..30), flips in proptest::collection::vec(any::<bool>(), 2..30)) {
            let n = scores.len().min(flips.len());
            let s: Vec<f64> = scores[..n].iter().map(|&v| v as f64).collect();
            let pos = &flips[..n];
            prop_assume!(pos.iter().any(|&b| b) && pos.iter().any(|&b| !b));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = binary_auc(&s, pos).unwrap();
            let b = binary_auc(&neg, pos).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            prop_assert!((a - pairwise_auc(&s, pos)).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_row_order_invariant(seed in any::<u64>()) {
            let n = 12;
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let mut scores = Array2::zeros((n, 3));
            crate::rng::fill_standard_normal(&mut crate::rng::stream(seed), scores.as_slice_mut().unwrap());
            let p = pooled(&labels, scores.clone());
            let mut order: Vec<usize> = (0..n).collect();
            crate::rng::shuffle(&mut crate::rng::stream(seed ^ 1), &mut order);
            let q = pooled(
                &order.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                scores.select(ndarray::Axis(0), &order),
            );
            let a = MetricBundle::compute(&p).unwrap();
            let b = MetricBundle::compute(&q).unwrap();
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert_eq!(a.macro_f1, b.macro_f1);
            prop_assert!((a.macro_auc - b.macro_auc).abs() < 1e-15);
        }

        #[test]
        fn auc_invariant_to_monotone_column_transform(seed in any::<u64>(), col in 0usize..3) {
            let n = 15;
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let mut scores = Array2::zeros((n, 3));
            crate::rng::fill_standard_normal(&mut crate::rng::stream(seed), scores.as_slice_mut().unwrap());
            let before = macro_ovr_auc(&pooled(&labels, scores.clone())).unwrap();
            scores.column_mut(col).mapv_inplace(|v| v.exp() * 3.0 + 1.0);
            let after = macro_ovr_auc(&pooled(&labels, scores)).unwrap();
            prop_assert!((before - after).abs() < 1e-15);
        }
    }
}
