//! Tree ensembles: a random forest of Gini CART trees and second-order
//! softmax gradient boosting.
//!
//! Both ensembles share one level-wise grower. Candidate splits are scanned
//! from per-feature presorted sample orders, so a node's cost is linear in
//! the number of samples; the presort depends on features only and can be
//! reused across folds and label permutations. Samples enter training
//! through nonnegative weights, which carry bootstrap multiplicities and
//! exclude held-out rows (weight 0).

pub mod forest;
pub mod gbt;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{train_random_forest, ForestConfig, ForestModel};
pub use gbt::{train_gbt, GbtConfig, GbtModel};

/// Gains within this relative distance of the best so far count as ties.
const GAIN_TIE: f64 = 1e-12;

/// Sample indices of every feature column in ascending value order (equal
/// values by index).
#[derive(Debug, Clone)]
pub struct FeatureOrder {
    n: usize,
    d: usize,
    /// Column-major (sample, value) pairs, each column sorted.
    entries: Vec<(u32, f64)>,
}

impl FeatureOrder {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let (n, d) = x.dim();
        let mut entries = Vec::with_capacity(n * d);
        for col in x.columns() {
            let start = entries.len();
            entries.extend(col.iter().enumerate().map(|(i, &v)| (i as u32, v)));
            entries[start..].sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        }
        FeatureOrder { n, d, entries }
    }

    fn column(&self, feature: usize) -> &[(u32, f64)] {
        &self.entries[feature * self.n..(feature + 1) * self.n]
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_features(&self) -> usize {
        self.d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// Binary tree; samples with `x[feature] <= threshold` go left. Node 0 is the
/// root and nodes are numbered breadth-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl DecisionTree {
    pub fn leaf_value(&self, x: ArrayView1<'_, f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Split criterion over additive per-sample statistics. A split's gain is
/// `score(left) + score(right) − score(parent)`.
pub(crate) trait Criterion {
    type Stats: Copy + Default;

    fn add(&self, stats: &mut Self::Stats, sample: usize);
    fn difference(&self, total: &Self::Stats, part: &Self::Stats) -> Self::Stats;
    fn score(&self, stats: &Self::Stats) -> f64;
    fn leaf(&self, stats: &Self::Stats) -> Vec<f64>;
    /// A node that cannot improve (e.g. a single class) becomes a leaf.
    fn is_terminal(&self, _stats: &Self::Stats) -> bool {
        false
    }
}

/// Features a node may split on.
pub(crate) enum Candidates {
    All,
    /// Ascending feature indices.
    Subset(Vec<usize>),
}

impl Candidates {
    fn mask(&self, d: usize) -> Option<Vec<bool>> {
        match self {
            Candidates::All => None,
            Candidates::Subset(fs) => {
                let mut m = vec![false; d];
                for &f in fs {
                    m[f] = true;
                }
                Some(m)
            }
        }
    }
}

#[derive(Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
}

struct Scan<S> {
    total: S,
    parent: f64,
    left: S,
    last: f64,
    used: bool,
    /// Gain a candidate must exceed to replace the current best.
    bar: f64,
    best: Option<(usize, f64, f64)>,
}

struct Frontier<S> {
    node: usize,
    stats: S,
    mask: Option<Vec<bool>>,
    best: Option<BestSplit>,
}

/// Grows one tree level by level. `weights[i] > 0` marks the training
/// samples; the criterion folds weights into its statistics. `candidates` is
/// called once per node as it is created, in breadth-first order.
pub(crate) fn grow<C: Criterion>(
    x: ArrayView2<'_, f64>,
    order: &FeatureOrder,
    weights: &[f64],
    criterion: &C,
    max_depth: usize,
    mut candidates: impl FnMut() -> Candidates,
) -> DecisionTree {
    let n = x.nrows();
    let d = x.ncols();
    const NONE: u32 = u32::MAX;
    let mut slot = vec![NONE; n];
    let mut root = C::Stats::default();
    for i in 0..n {
        if weights[i] > 0.0 {
            slot[i] = 0;
            criterion.add(&mut root, i);
        }
    }
    let mut nodes = vec![Node::Leaf {
        value: criterion.leaf(&root),
    }];
    let mut frontier = vec![Frontier {
        node: 0,
        stats: root,
        mask: None,
        best: None,
    }];

    for _depth in 0..max_depth {
        frontier.retain(|f| !criterion.is_terminal(&f.stats));
        if frontier.is_empty() {
            break;
        }
        for f in frontier.iter_mut() {
            f.mask = candidates().mask(d);
        }
        // Samples in retired nodes drop out of the scan.
        let mut active = vec![NONE; nodes.len()];
        for (s, f) in frontier.iter().enumerate() {
            active[f.node] = s as u32;
        }
        for s in slot.iter_mut() {
            if *s != NONE {
                *s = active[*s as usize];
            }
        }

        let mut scan: Vec<Scan<C::Stats>> = frontier
            .iter()
            .map(|f| Scan {
                total: f.stats,
                parent: criterion.score(&f.stats),
                left: C::Stats::default(),
                last: f64::NAN,
                used: false,
                bar: GAIN_TIE,
                best: None,
            })
            .collect();
        for feature in 0..d {
            let mut any = false;
            for (sc, f) in scan.iter_mut().zip(&frontier) {
                sc.used = f.mask.as_ref().is_none_or(|m| m[feature]);
                sc.left = C::Stats::default();
                sc.last = f64::NAN;
                any |= sc.used;
            }
            if !any {
                continue;
            }
            for &(i, v) in order.column(feature) {
                let i = i as usize;
                let s = slot[i];
                if s == NONE {
                    continue;
                }
                let sc = &mut scan[s as usize];
                if !sc.used {
                    continue;
                }
                if v > sc.last {
                    let right = criterion.difference(&sc.total, &sc.left);
                    let gain = criterion.score(&sc.left) + criterion.score(&right) - sc.parent;
                    // strictly better by more than rounding noise; the first
                    // accepted split must have positive gain
                    if gain > sc.bar {
                        sc.bar = gain + GAIN_TIE * gain.abs().max(1.0);
                        sc.best = Some((feature, sc.last, v));
                    }
                }
                criterion.add(&mut sc.left, i);
                sc.last = v;
            }
        }
        for (f, sc) in frontier.iter_mut().zip(&scan) {
            f.best = sc.best.map(|(feature, lo, hi)| BestSplit {
                feature,
                threshold: midpoint(lo, hi),
            });
        }

        // Materialise children in frontier order so numbering stays
        // breadth-first.
        let mut next = Vec::new();
        let mut child_of = vec![(NONE, NONE); frontier.len()];
        for (s, f) in frontier.iter().enumerate() {
            let Some(b) = f.best else { continue };
            let l = nodes.len();
            nodes.push(Node::Leaf { value: Vec::new() });
            nodes.push(Node::Leaf { value: Vec::new() });
            nodes[f.node] = Node::Split {
                feature: b.feature,
                threshold: b.threshold,
                left: l,
                right: l + 1,
            };
            child_of[s] = (l as u32, l as u32 + 1);
        }
        let mut child_stats: Vec<C::Stats> = vec![C::Stats::default(); nodes.len()];
        for i in 0..n {
            let s = slot[i];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            let (l, r) = child_of[s];
            if l == NONE {
                slot[i] = NONE;
                continue;
            }
            let b = frontier[s].best.expect("split chosen");
            let c = if x[[i, b.feature]] <= b.threshold { l } else { r };
            slot[i] = c;
            criterion.add(&mut child_stats[c as usize], i);
        }
        for (s, _) in frontier.iter().enumerate() {
            let (l, r) = child_of[s];
            if l == NONE {
                continue;
            }
            for c in [l as usize, r as usize] {
                nodes[c] = Node::Leaf {
                    value: criterion.leaf(&child_stats[c]),
                };
                next.push(Frontier {
                    node: c,
                    stats: child_stats[c],
                    mask: None,
                    best: None,
                });
            }
        }
        frontier = next;
    }
    DecisionTree { nodes, max_depth }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

pub(crate) fn check_dim(expected: usize, x: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Validates the training rows and returns a weight vector with 1 on `rows`.
pub(crate) fn unit_weights(order: &FeatureOrder, x: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Vec<f64>> {
    if order.num_samples() != x.nrows() || order.num_features() != x.ncols() {
        return Err(Error::InvalidArgument("feature order does not match the matrix".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let mut w = vec![0.0; x.nrows()];
    for &r in rows {
        if r >= x.nrows() {
            return Err(Error::InvalidArgument(format!("row {r} out of range")));
        }
        w[r] += 1.0;
    }
    Ok(w)
}
