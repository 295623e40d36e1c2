//! Primal objectives with analytic gradients, evaluated directly on the
//! feature matrix. These are the reference forms the span solver reproduces.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Mean softmax cross-entropy of `X·Wᵀ + b` plus `(λ/2)·‖W‖²_F`.
/// Returns (value, ∂/∂W, ∂/∂b).
pub fn logistic(
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    lambda: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let z = x.dot(&w.t()) + &b;
    let mut gz = Array2::<f64>::zeros(z.raw_dim());
    let mut value = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        value += lse - row[labels[i]];
        for (k, &zk) in row.iter().enumerate() {
            gz[[i, k]] = ((zk - lse).exp() - if k == labels[i] { 1.0 } else { 0.0 }) / n;
        }
    }
    value /= n;
    value += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let gw = gz.t().dot(&x) + &(w.to_owned() * lambda);
    let gb = gz.sum_axis(ndarray::Axis(0));
    (value, gw, gb)
}

/// Sum over classes of the one-vs-rest objectives
/// `(1/2)·‖w_k‖² + (C/n)·Σ_i max(0, 1 − t_ik·(w_k·x_i + b_k))²`
/// with `t_ik = +1` when `labels[i] == k`, else −1.
pub fn squared_hinge_ovr(
    w: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    c: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let z = x.dot(&w.t()) + &b;
    let mut gz = Array2::<f64>::zeros(z.raw_dim());
    let mut value = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for (i, row) in z.rows().into_iter().enumerate() {
        for (k, &zk) in row.iter().enumerate() {
            let t = if labels[i] == k { 1.0 } else { -1.0 };
            let slack = (1.0 - t * zk).max(0.0);
            value += c / n * slack * slack;
            gz[[i, k]] = -2.0 * c / n * t * slack;
        }
    }
    let gw = gz.t().dot(&x) + &w;
    let gb = gz.sum_axis(ndarray::Axis(0));
    (value, gw, gb)
}
