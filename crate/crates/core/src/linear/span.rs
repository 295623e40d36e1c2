//! Accelerated gradient descent for L2-regularised linear models, carried out
//! in the span of the training rows.
//!
//! With weights `W = A·X` (X the standardised training matrix, `A` a K×n
//! coefficient matrix) the primal gradient of a loss on the scores
//! `Z = X·Wᵀ + b` plus `(reg/2)·‖W‖²` is `(Rᵀ + reg·A)·X`, where `R = ∂loss/∂Z`,
//! so primal descent started in the span never leaves it. The solver works in
//! the eigenbasis of the Gram matrix `G = X·Xᵀ = U·Λ·Uᵀ`: with `F = U·Λ^½` and
//! `v = Fᵀ·a` the scores are `F·v + b` and `‖w‖ = ‖v‖`, so Euclidean norms in
//! `v` are primal norms. Each iteration costs O(n²K) instead of O(ndK).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// A data-fit term evaluated on the K×n score matrix (class-major: the n
/// scores of output 0, then output 1, ...).
pub trait ScoreLoss {
    fn num_outputs(&self) -> usize;

    /// Loss at `z`; when `grad` is given it receives `∂loss/∂z`.
    fn evaluate(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64;

    /// `h` such that the Hessian of the loss in `z` is bounded by `(h/n)·I`
    /// for each output's n scores.
    fn curvature_bound(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop once the Euclidean norm of the full (weights and bias) gradient
    /// falls to this value.
    pub tolerance: f64,
}

/// Eigenvalues below this fraction of the largest are treated as zero.
const EIGEN_CUTOFF: f64 = 1e-10;

/// Eigen-decomposition of a Gram matrix, kept as the two maps between span
/// coefficients `a` and eigen coordinates `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectral {
    pub n: usize,
    /// Retained eigenvalues, descending.
    pub values: Vec<f64>,
    /// r×n rows `√λ_j·u_j`: `v = ft·a`, and `z = ftᵀ·v`.
    ft: Vec<f64>,
    /// r×n rows `u_j/√λ_j`: `a = invᵀ·v`.
    inv: Vec<f64>,
}

impl Spectral {
    /// `gram` is the n×n row-major Gram matrix of the training rows.
    pub fn new(gram: &[f64], n: usize) -> Result<Self> {
        if gram.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: gram.len(),
            });
        }
        if gram.iter().any(|g| !g.is_finite()) {
            return Err(Error::Data("non-finite Gram matrix".into()));
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, gram));
        let mut idx: Vec<usize> = (0..n).collect();
        // descending, index order on ties
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = idx.first().map_or(0.0, |&j| eig.eigenvalues[j]);
        let mut values = Vec::new();
        let mut ft = Vec::new();
        let mut inv = Vec::new();
        for &j in &idx {
            let lambda = eig.eigenvalues[j];
            if !(lambda > EIGEN_CUTOFF * top) || lambda <= 0.0 {
                break;
            }
            let col = eig.eigenvectors.column(j);
            // fix the sign so the first nonzero entry is positive
            let sign = col.iter().find(|u| **u != 0.0).map_or(1.0, |u| u.signum());
            let s = lambda.sqrt();
            values.push(lambda);
            ft.extend(col.iter().map(|u| sign * u * s));
            inv.extend(col.iter().map(|u| sign * u / s));
        }
        Ok(Spectral { n, values, ft, inv })
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Eigen coordinates of span coefficients (one output).
    fn to_eigen(&self, a: &[f64], v: &mut [f64]) {
        for (vj, row) in v.iter_mut().zip(self.ft.chunks_exact(self.n)) {
            *vj = dot(row, a);
        }
    }

    /// Span coefficients of eigen coordinates (one output).
    fn to_span(&self, v: &[f64], a: &mut [f64]) {
        a.iter_mut().for_each(|x| *x = 0.0);
        for (&vj, row) in v.iter().zip(self.inv.chunks_exact(self.n)) {
            axpy(a, vj, row);
        }
    }

    /// Scores without bias, `z = F·v` (one output).
    fn scores(&self, v: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|x| *x = 0.0);
        for (&vj, row) in v.iter().zip(self.ft.chunks_exact(self.n)) {
            axpy(z, vj, row);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanSolution {
    /// K×n row-major coefficients on the training rows.
    pub coef: Vec<f64>,
    pub bias: Vec<f64>,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub objective: f64,
}

impl SpanSolution {
    pub fn num_outputs(&self) -> usize {
        self.bias.len()
    }

    /// Scores of a sample given its kernel row `k[j] = ⟨x, x_j⟩` against the
    /// training rows.
    pub fn scores(&self, kernel_row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(kernel_row.len(), self.n);
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| b + dot(&self.coef[k * self.n..(k + 1) * self.n], kernel_row))
            .collect()
    }
}

/// Starting point in span coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub coef: Vec<f64>,
    pub bias: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators so the loop vectorises
    let mut acc = [0.0; 4];
    let a4 = a.chunks_exact(4);
    let b4 = b.chunks_exact(4);
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in a4.zip(b4) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

const MIN_STEP: f64 = 1e-18;
const MAX_STEP: f64 = 1e6;
const STEP_GROWTH: f64 = 2.0;

/// Minimises `loss(F·V + 1·bᵀ) + (reg/2)·‖V‖²` by preconditioned
/// Nesterov-accelerated gradient descent.
///
/// The diagonal preconditioner `D` is the curvature bound of the loss in
/// these coordinates (`h·λ_j/n + reg` for weights, `h` for biases), so unit
/// steps descend when the training rows are centred. Steps are chosen by
/// backtracking from twice the previous step until
/// `f(x⁺) ≤ f(y) − (η/2)·gᵀD⁻¹g` holds, and momentum is reset whenever the
/// new step points against the previous displacement. The search starts at
/// `start` (default `A = 0` with `bias_init`) and returns the first search
/// point whose Euclidean gradient norm is at most the tolerance, or the last
/// one after `max_iterations`.
pub fn minimize<L: ScoreLoss>(
    spec: &Spectral,
    loss: &L,
    reg: f64,
    bias_init: &[f64],
    start: Option<&WarmStart>,
    settings: SolverSettings,
) -> Result<SpanSolution> {
    let k = loss.num_outputs();
    let n = spec.n;
    let r = spec.rank();
    if bias_init.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bias_init.len(),
        });
    }
    if let Some(ws) = start {
        if ws.coef.len() != k * n || ws.bias.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k * n,
                got: ws.coef.len(),
            });
        }
    }
    if !(settings.tolerance > 0.0) || settings.max_iterations == 0 {
        return Err(Error::InvalidArgument(
            "solver needs tolerance > 0 and max_iterations >= 1".into(),
        ));
    }

    let h = loss.curvature_bound();
    let precond_v: Vec<f64> = spec.values.iter().map(|l| 1.0 / (h * l / n as f64 + reg)).collect();
    let precond_b = 1.0 / h;

    // Search point y, previous iterate and next iterate, each as eigen
    // coordinates (K×r), biases and bias-free scores (K×n).
    let mut y_v = vec![0.0; k * r];
    let mut y_b = bias_init.to_vec();
    if let Some(ws) = start {
        for c in 0..k {
            spec.to_eigen(&ws.coef[c * n..(c + 1) * n], &mut y_v[c * r..(c + 1) * r]);
        }
        y_b.copy_from_slice(&ws.bias);
    }
    let mut y_fz = vec![0.0; k * n];
    for c in 0..k {
        spec.scores(&y_v[c * r..(c + 1) * r], &mut y_fz[c * n..(c + 1) * n]);
    }
    let (mut prev_v, mut prev_b, mut prev_fz) = (y_v.clone(), y_b.clone(), y_fz.clone());
    let (mut next_v, mut next_b, mut next_fz) = (vec![0.0; k * r], vec![0.0; k], vec![0.0; k * n]);

    let mut z = vec![0.0; k * n];
    let mut z_try = vec![0.0; k * n];
    let mut resid = vec![0.0; k * n];
    let mut gv = vec![0.0; k * r];
    let mut gb = vec![0.0; k];
    let mut pv = vec![0.0; k * r];
    let mut pb = vec![0.0; k];
    let mut fp = vec![0.0; k * n];

    let mut momentum = 1.0f64;
    let mut step: f64 = 0.5;
    let mut iterations = 0;
    let mut converged = false;
    let (mut grad_norm, mut objective);

    loop {
        for c in 0..k {
            for i in 0..n {
                z[c * n + i] = y_fz[c * n + i] + y_b[c];
            }
        }
        let fit = loss.evaluate(&z, Some(&mut resid));
        let w2 = dot(&y_v, &y_v);
        objective = fit + 0.5 * reg * w2;

        // ∇v = Fᵀ·R + reg·v ; ∇b = Rᵀ·1 ; p = D⁻¹·∇ ; F·p_v
        for c in 0..k {
            let rc = &resid[c * n..(c + 1) * n];
            gb[c] = rc.iter().sum();
            pb[c] = precond_b * gb[c];
            let gvc = &mut gv[c * r..(c + 1) * r];
            spec.to_eigen(rc, gvc);
            for (j, g) in gvc.iter_mut().enumerate() {
                *g += reg * y_v[c * r + j];
                pv[c * r + j] = precond_v[j] * *g;
            }
            spec.scores(&pv[c * r..(c + 1) * r], &mut fp[c * n..(c + 1) * n]);
        }
        let g2 = dot(&gv, &gv) + dot(&gb, &gb);
        let gpg = dot(&gv, &pv) + dot(&gb, &pb);
        let vp = dot(&y_v, &pv);
        let pp = dot(&pv, &pv);
        grad_norm = g2.sqrt();
        if !grad_norm.is_finite() || !objective.is_finite() {
            return Err(Error::Data(format!(
                "solver diverged at iteration {iterations} (objective {objective})"
            )));
        }
        if grad_norm <= settings.tolerance {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }

        step = (step * STEP_GROWTH).min(MAX_STEP);
        let accepted = loop {
            for c in 0..k {
                let shift = step * pb[c];
                for i in 0..n {
                    z_try[c * n + i] = z[c * n + i] - step * fp[c * n + i] - shift;
                }
            }
            let w_try = w2 - 2.0 * step * vp + step * step * pp;
            let obj_try = loss.evaluate(&z_try, None) + 0.5 * reg * w_try;
            if obj_try.is_finite() && obj_try <= objective - 0.5 * step * gpg {
                break true;
            }
            step *= 0.5;
            if step < MIN_STEP {
                break false;
            }
        };
        if !accepted {
            // no representable descent step remains
            break;
        }

        let mut against = 0.0;
        for (idx, nv) in next_v.iter_mut().enumerate() {
            *nv = y_v[idx] - step * pv[idx];
            against += (*nv - prev_v[idx]) * gv[idx];
        }
        for c in 0..k {
            next_b[c] = y_b[c] - step * pb[c];
            against += (next_b[c] - prev_b[c]) * gb[c];
        }
        for (nz, (yz, d)) in next_fz.iter_mut().zip(y_fz.iter().zip(&fp)) {
            *nz = yz - step * d;
        }

        let beta = if against > 0.0 {
            momentum = 1.0;
            0.0
        } else {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            momentum = next;
            beta
        };
        extrapolate(&mut y_v, &next_v, &prev_v, beta);
        extrapolate(&mut y_b, &next_b, &prev_b, beta);
        extrapolate(&mut y_fz, &next_fz, &prev_fz, beta);
        std::mem::swap(&mut prev_v, &mut next_v);
        std::mem::swap(&mut prev_b, &mut next_b);
        std::mem::swap(&mut prev_fz, &mut next_fz);
        iterations += 1;
    }

    let mut coef = vec![0.0; k * n];
    for c in 0..k {
        spec.to_span(&y_v[c * r..(c + 1) * r], &mut coef[c * n..(c + 1) * n]);
    }
    Ok(SpanSolution {
        coef,
        bias: y_b,
        n,
        iterations,
        converged,
        gradient_norm: grad_norm,
        objective,
    })
}

/// y = x + beta·(x − prev)
fn extrapolate(y: &mut [f64], x: &[f64], prev: &[f64], beta: f64) {
    for (yi, (xi, pi)) in y.iter_mut().zip(x.iter().zip(prev)) {
        *yi = xi + beta * (xi - pi);
    }
}

/// Mean softmax cross-entropy.
pub struct SoftmaxCrossEntropy<'a> {
    pub labels: &'a [usize],
    pub classes: usize,
}

impl ScoreLoss for SoftmaxCrossEntropy<'_> {
    fn num_outputs(&self) -> usize {
        self.classes
    }

    fn curvature_bound(&self) -> f64 {
        0.5
    }

    fn evaluate(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let k = self.classes;
        let n = self.labels.len();
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        // Every row's partition sum lies in [1, k]; they are multiplied and
        // passed through one logarithm, flushing before the product could
        // overflow.
        let mut prod = 1.0;
        let mut e = [0.0; 8];
        let e = &mut e[..k.min(8)];
        debug_assert!(k <= 8);
        let mut row = [0.0; 8];
        let row = &mut row[..k.min(8)];
        for (i, &y) in self.labels.iter().enumerate() {
            for (c, r) in row.iter_mut().enumerate() {
                *r = z[c * n + i];
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (ec, &zc) in e.iter_mut().zip(row.iter()) {
                *ec = if zc == max { 1.0 } else { (zc - max).exp() };
                sum += *ec;
            }
            total += max - row[y];
            prod *= sum;
            if prod > 1e250 {
                total += prod.ln();
                prod = 1.0;
            }
            if let Some(g) = grad.as_deref_mut() {
                let scale = inv_n / sum;
                for c in 0..k {
                    g[c * n + i] = e[c] * scale - if c == y { inv_n } else { 0.0 };
                }
            }
        }
        (total + prod.ln()) * inv_n
    }
}

/// `(C/n)·Σ max(0, 1 − t·z)²` for a single one-vs-rest column with targets ±1.
pub struct SquaredHinge<'a> {
    pub targets: &'a [f64],
    pub c: f64,
}

impl ScoreLoss for SquaredHinge<'_> {
    fn num_outputs(&self) -> usize {
        1
    }

    fn curvature_bound(&self) -> f64 {
        2.0 * self.c
    }

    fn evaluate(&self, z: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let scale = self.c / self.targets.len() as f64;
        let mut total = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            let slack = (1.0 - t * z[i]).max(0.0);
            total += slack * slack;
            if let Some(g) = grad.as_deref_mut() {
                g[i] = -2.0 * scale * t * slack;
            }
        }
        total * scale
    }
}
