//! Linear probes: multinomial logistic regression and one-vs-rest linear SVM
//! with a squared hinge.
//!
//! Both are fitted on z-scored features by full-batch gradient descent with
//! backtracking line search (see [`span`]). Scores are raw logits / decision
//! values; the predicted class is their argmax with lowest-index tie-break.

pub mod objective;
pub mod span;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{class_counts, ClassId};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::NUM_CLASSES;

use span::{SoftmaxCrossEntropy, SolverSettings, SpanSolution, Spectral, SquaredHinge, WarmStart};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Logistic: L2 strength λ (default 1/N). SVM: trade-off C (default 1).
    pub penalty: Option<f64>,
    pub max_iterations: usize,
    /// Gradient-norm stopping threshold.
    pub tolerance: f64,
    /// Unused by the deterministic solvers.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            penalty: None,
            max_iterations: 2000,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let Some(p) = self.penalty {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("penalty must be >= 0, got {p}")));
            }
        }
        Ok(())
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }

    pub fn logistic_lambda(&self, n: usize) -> f64 {
        self.penalty.unwrap_or(1.0 / n as f64)
    }

    pub fn svm_c(&self) -> f64 {
        self.penalty.unwrap_or(1.0)
    }
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Population mean/std per column; std floored at [`STD_FLOOR`].
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &m), &xi) in var.iter_mut().zip(&mean).zip(row) {
                let d = xi - m;
                *v += d * d;
            }
        }
        let std = var.mapv(|v| (v / n).sqrt().max(STD_FLOOR));
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            self.apply(row.as_slice_mut().expect("owned rows are contiguous"));
        }
        out
    }

    pub fn transform_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = x.to_owned();
        self.apply(out.as_slice_mut().expect("owned arrays are contiguous"));
        out
    }

    fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Row-major Gram matrix `X·Xᵀ`.
pub fn gram(x: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = x.row(i).dot(&x.row(j));
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Eigen-decomposed standardised training Gram matrix and the kernel rows of
/// held-out samples, both depending on the features only (never on labels).
#[derive(Debug, Clone)]
pub struct KernelView {
    pub n: usize,
    pub spectral: Spectral,
    /// One kernel row (length n) per held-out sample.
    pub cross: Vec<Vec<f64>>,
}

impl KernelView {
    pub fn build(train: ArrayView2<'_, f64>, held_out: ArrayView2<'_, f64>) -> Result<Self> {
        check_features(train)?;
        check_features(held_out)?;
        let scaler = Standardizer::fit(train);
        let xt = scaler.transform(train);
        let ht = scaler.transform(held_out);
        let cross = ht
            .rows()
            .into_iter()
            .map(|h| xt.rows().into_iter().map(|r| r.dot(&h)).collect())
            .collect();
        Ok(KernelView {
            n: train.nrows(),
            spectral: Spectral::new(&gram(xt.view()), train.nrows())?,
            cross,
        })
    }
}

pub(crate) fn check_training_labels(n_rows: usize, y: &[ClassId]) -> Result<()> {
    if y.len() != n_rows {
        return Err(Error::DimensionMismatch {
            expected: n_rows,
            got: y.len(),
        });
    }
    let counts = class_counts(y);
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(k));
    }
    Ok(())
}

fn check_features(x: ArrayView2<'_, f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    Ok(())
}

/// Solves the logistic problem in the span of the rows behind `spec`.
pub fn fit_logistic_kernel(
    spec: &Spectral,
    y: &[ClassId],
    cfg: &TrainConfig,
    start: Option<&WarmStart>,
) -> Result<SpanSolution> {
    cfg.validate()?;
    let n = y.len();
    check_training_labels(n, y)?;
    let labels: Vec<usize> = y.iter().map(|c| c.index()).collect();
    let counts = class_counts(y);
    // Intercepts start at the log class priors, the optimum of the
    // intercept-only model.
    let bias0: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let loss = SoftmaxCrossEntropy {
        labels: &labels,
        classes: NUM_CLASSES,
    };
    check_dim(spec.n, n)?;
    span::minimize(
        spec,
        &loss,
        cfg.logistic_lambda(n),
        &bias0,
        start,
        cfg.settings(),
    )
}

/// Solves the K one-vs-rest squared-hinge problems independently; the result
/// stacks them as a K-output solution. A warm start is split the same way.
pub fn fit_svm_kernel(
    spec: &Spectral,
    y: &[ClassId],
    cfg: &TrainConfig,
    start: Option<&WarmStart>,
) -> Result<SpanSolution> {
    cfg.validate()?;
    let n = y.len();
    check_training_labels(n, y)?;
    check_dim(spec.n, n)?;
    let c = cfg.svm_c();
    let mut coef = Vec::with_capacity(NUM_CLASSES * n);
    let mut bias = Vec::with_capacity(NUM_CLASSES);
    let mut iterations = 0;
    let mut converged = true;
    let mut gradient_norm: f64 = 0.0;
    let mut objective = 0.0;
    for class in ClassId::all() {
        let targets: Vec<f64> = y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        let loss = SquaredHinge { targets: &targets, c };
        let k = class.index();
        let class_start = start.map(|ws| WarmStart {
            coef: ws.coef[k * n..(k + 1) * n].to_vec(),
            bias: vec![ws.bias[k]],
        });
        let sol = span::minimize(
            spec,
            &loss,
            1.0,
            &[0.0],
            class_start.as_ref(),
            cfg.settings(),
        )?;
        coef.extend_from_slice(&sol.coef);
        bias.push(sol.bias[0]);
        iterations = iterations.max(sol.iterations);
        converged &= sol.converged;
        gradient_norm = gradient_norm.max(sol.gradient_norm);
        objective += sol.objective;
    }
    Ok(SpanSolution {
        coef,
        bias,
        n,
        iterations,
        converged,
        gradient_norm,
        objective,
    })
}

/// Maps span coefficients back to primal weights `W = A·X`.
fn primal_weights(sol: &SpanSolution, xt: &Array2<f64>) -> Array2<f64> {
    let k = sol.num_outputs();
    let a = Array2::from_shape_vec((k, sol.n), sol.coef.clone()).expect("coef shape");
    a.dot(xt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub objective: f64,
}

impl From<&SpanSolution> for FitDiagnostics {
    fn from(s: &SpanSolution) -> Self {
        FitDiagnostics {
            iterations: s.iterations,
            converged: s.converged,
            gradient_norm: s.gradient_norm,
            objective: s.objective,
        }
    }
}

/// Multinomial logistic regression on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// K×d weights in standardised feature space.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub lambda: f64,
    pub scaler: Standardizer,
    pub config: TrainConfig,
    pub diagnostics: FitDiagnostics,
}

pub fn train_logistic(
    x: ArrayView2<'_, f64>,
    y: &[ClassId],
    cfg: &TrainConfig,
) -> Result<LogisticModel> {
    check_training_labels(x.nrows(), y)?;
    check_features(x)?;
    let scaler = Standardizer::fit(x);
    let xt = scaler.transform(x);
    let sol = fit_logistic_kernel(&Spectral::new(&gram(xt.view()), xt.nrows())?, y, cfg, None)?;
    Ok(LogisticModel {
        w: primal_weights(&sol, &xt),
        b: Array1::from(sol.bias.clone()),
        lambda: cfg.logistic_lambda(y.len()),
        scaler,
        config: cfg.clone(),
        diagnostics: (&sol).into(),
    })
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    /// Pre-softmax logits `W·scale(x) + b`.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), x.len())?;
        let xs = self.scaler.transform_row(x);
        Ok(self.w.dot(&xs) + &self.b)
    }

    pub fn probabilities(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(softmax(self.scores(x)?.view()))
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        ClassId::new(argmax(self.scores(x)?.view()))
    }
}

pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// One-vs-rest linear SVM (squared hinge) on z-scored features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    /// Row k is the weight vector of the class-k-vs-rest classifier.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub c: f64,
    pub scaler: Standardizer,
    pub config: TrainConfig,
    pub diagnostics: FitDiagnostics,
}

pub fn train_linear_svm(
    x: ArrayView2<'_, f64>,
    y: &[ClassId],
    cfg: &TrainConfig,
) -> Result<LinearSvmModel> {
    check_training_labels(x.nrows(), y)?;
    check_features(x)?;
    let scaler = Standardizer::fit(x);
    let xt = scaler.transform(x);
    let sol = fit_svm_kernel(&Spectral::new(&gram(xt.view()), xt.nrows())?, y, cfg, None)?;
    Ok(LinearSvmModel {
        w: primal_weights(&sol, &xt),
        b: Array1::from(sol.bias.clone()),
        c: cfg.svm_c(),
        scaler,
        config: cfg.clone(),
        diagnostics: (&sol).into(),
    })
}

impl LinearSvmModel {
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    /// Decision values `w_k·scale(x) + b_k`.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), x.len())?;
        let xs = self.scaler.transform_row(x);
        Ok(self.w.dot(&xs) + &self.b)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        ClassId::new(argmax(self.scores(x)?.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn cls(v: &[usize]) -> Vec<ClassId> {
        v.iter().map(|&k| ClassId::new(k).unwrap()).collect()
    }

    /// Three well separated clusters in 2-D with a little deterministic jitter.
    fn clusters(per_class: usize) -> (Array2<f64>, Vec<ClassId>) {
        let centers = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)];
        let mut x = Array2::zeros((3 * per_class, 2));
        let mut y = Vec::new();
        let mut noise = vec![0.0; 6 * per_class];
        crate::rng::fill_standard_normal(&mut crate::rng::stream(1), &mut noise);
        for (k, c) in centers.iter().enumerate() {
            for i in 0..per_class {
                let r = k * per_class + i;
                x[[r, 0]] = c.0 + 0.3 * noise[2 * r];
                x[[r, 1]] = c.1 + 0.3 * noise[2 * r + 1];
                y.push(ClassId::new(k).unwrap());
            }
        }
        (x, y)
    }

    #[test]
    fn zero_weight_logits_and_tie_break() {
        let mut m = train_logistic(clusters(3).0.view(), &clusters(3).1, &TrainConfig::default()).unwrap();
        m.w.fill(0.0);
        m.b = array![0.3, 0.2, 0.1];
        let z = m.scores(array![1.0, 2.0].view()).unwrap();
        assert_eq!(z, array![0.3, 0.2, 0.1]);
        assert_eq!(m.predict(array![1.0, 2.0].view()).unwrap(), ClassId::EYE_CLEAN);
        m.b.fill(0.0);
        assert_eq!(m.predict(array![1.0, 2.0].view()).unwrap(), ClassId::EYE_CLEAN);
        assert!(matches!(
            m.scores(array![1.0].view()),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn one_dimensional_separable() {
        // 10 copies at -1 (class 0), 10 at +1 (class 1), plus two points of
        // class 2 far away so every class is present.
        let mut xs = vec![-1.0; 10];
        xs.extend(vec![1.0; 10]);
        xs.extend([30.0, 31.0]);
        let mut y = vec![0; 10];
        y.extend(vec![1; 10]);
        y.extend([2, 2]);
        let x = Array2::from_shape_vec((22, 1), xs).unwrap();
        let y = cls(&y);
        let cfg = TrainConfig {
            penalty: Some(0.1),
            ..TrainConfig::default()
        };
        let m = train_logistic(x.view(), &y, &cfg).unwrap();
        assert!(m.w[[1, 0]] - m.w[[0, 0]] > 0.0);
        assert_eq!(m.predict(array![-1.0].view()).unwrap().index(), 0);
        assert_eq!(m.predict(array![1.0].view()).unwrap().index(), 1);
        for (row, label) in x.rows().into_iter().zip(&y) {
            assert_eq!(m.predict(row).unwrap(), *label);
        }
    }

    #[test]
    fn missing_class_is_rejected() {
        let x = Array2::zeros((4, 2));
        let y = cls(&[0, 0, 1, 1]);
        assert!(matches!(
            train_logistic(x.view(), &y, &TrainConfig::default()),
            Err(Error::MissingClass(2))
        ));
        assert!(matches!(
            train_linear_svm(x.view(), &y, &TrainConfig::default()),
            Err(Error::MissingClass(2))
        ));
        let y = cls(&[1, 1, 1, 1]);
        assert!(train_logistic(x.view(), &y, &TrainConfig::default()).is_err());
    }

    #[test]
    fn heavy_penalty_recovers_priors() {
        let (x, y) = clusters(4);
        // unbalance: drop two class-2 rows
        let keep: Vec<usize> = (0..10).collect();
        let x = x.select(Axis(0), &keep);
        let y: Vec<ClassId> = keep.iter().map(|&i| y[i]).collect();
        let cfg = TrainConfig {
            penalty: Some(1e6),
            ..TrainConfig::default()
        };
        let m = train_logistic(x.view(), &y, &cfg).unwrap();
        assert!(m.w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-4);
        let counts = class_counts(&y);
        for row in x.rows() {
            let p = m.probabilities(row).unwrap();
            for k in 0..3 {
                assert!((p[k] - counts[k] as f64 / y.len() as f64).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = clusters(5);
        let m = train_logistic(x.view(), &y, &TrainConfig::default()).unwrap();
        for row in x.rows() {
            assert!((m.probabilities(row).unwrap().sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (x, y) = clusters(5);
        let cfg = TrainConfig::default();
        assert_eq!(
            train_logistic(x.view(), &y, &cfg).unwrap(),
            train_logistic(x.view(), &y, &cfg).unwrap()
        );
        assert_eq!(
            train_linear_svm(x.view(), &y, &cfg).unwrap(),
            train_linear_svm(x.view(), &y, &cfg).unwrap()
        );
    }

    #[test]
    fn column_rescaling_does_not_change_predictions() {
        let (x, y) = clusters(6);
        let mut scaled = x.clone();
        scaled.column_mut(1).mapv_inplace(|v| v * 1000.0);
        let cfg = TrainConfig::default();
        let a = train_logistic(x.view(), &y, &cfg).unwrap();
        let b = train_logistic(scaled.view(), &y, &cfg).unwrap();
        let sa = train_linear_svm(x.view(), &y, &cfg).unwrap();
        let sb = train_linear_svm(scaled.view(), &y, &cfg).unwrap();
        for (r0, r1) in x.rows().into_iter().zip(scaled.rows()) {
            assert_eq!(a.predict(r0).unwrap(), b.predict(r1).unwrap());
            assert_eq!(sa.predict(r0).unwrap(), sb.predict(r1).unwrap());
        }
    }

    #[test]
    fn svm_separates_each_one_vs_rest_task() {
        let (x, y) = clusters(6);
        let m = train_linear_svm(x.view(), &y, &TrainConfig::default()).unwrap();
        for (row, label) in x.rows().into_iter().zip(&y) {
            let s = m.scores(row).unwrap();
            for k in 0..3 {
                if k == label.index() {
                    assert!(s[k] > 0.0, "class {k} score {}", s[k]);
                } else {
                    assert!(s[k] < 0.0, "class {k} score {}", s[k]);
                }
            }
        }
    }

    #[test]
    fn duplicated_rows_give_the_same_svm() {
        let (x, y) = clusters(4);
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2: Vec<ClassId> = y.iter().chain(&y).copied().collect();
        let cfg = TrainConfig {
            tolerance: 1e-10,
            max_iterations: 20_000,
            ..TrainConfig::default()
        };
        let a = train_linear_svm(x.view(), &y, &cfg).unwrap();
        let b = train_linear_svm(x2.view(), &y2, &cfg).unwrap();
        let scale = a.w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in a.w.iter().zip(&b.w) {
            assert!((u - v).abs() <= 1e-8 * scale.max(1.0), "{u} vs {v}");
        }
        for (u, v) in a.b.iter().zip(&b.b) {
            assert!((u - v).abs() <= 1e-8, "{u} vs {v}");
        }
    }

    #[test]
    fn span_gradient_matches_primal_gradient() {
        let (x, y) = clusters(3);
        let scaler = Standardizer::fit(x.view());
        let xt = scaler.transform(x.view());
        let n = xt.nrows();
        let mut a = vec![0.0; 3 * n];
        crate::rng::fill_standard_normal(&mut crate::rng::stream(9), &mut a);
        let a_mat = Array2::from_shape_vec((3, n), a.clone()).unwrap();
        let w = a_mat.dot(&xt);
        let b = array![0.1, -0.2, 0.05];
        let lambda = 0.3;
        let labels: Vec<usize> = y.iter().map(|c| c.index()).collect();
        let (_, gw, gb) = objective::logistic(w.view(), b.view(), xt.view(), &labels, lambda);

        // span-form gradient on class-major scores
        let z = (xt.dot(&w.t()) + &b).t().as_standard_layout().to_owned();
        let mut resid = vec![0.0; 3 * n];
        use span::ScoreLoss;
        SoftmaxCrossEntropy {
            labels: &labels,
            classes: 3,
        }
        .evaluate(z.as_slice().unwrap(), Some(&mut resid));
        let r = Array2::from_shape_vec((3, n), resid).unwrap().reversed_axes();
        let m = r.t().to_owned() + &(a_mat * lambda);
        let gw_span = m.dot(&xt);
        for (u, v) in gw.iter().zip(&gw_span) {
            assert!((u - v).abs() < 1e-10);
        }
        let gb_span = r.sum_axis(Axis(0));
        for (u, v) in gb.iter().zip(&gb_span) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn model_json_has_documented_fields() {
        let (x, y) = clusters(3);
        let m = train_logistic(x.view(), &y, &TrainConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["w", "b", "scaler", "config"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: LogisticModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
