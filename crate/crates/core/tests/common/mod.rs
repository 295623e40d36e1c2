#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use probe_bench::dataset::{ClassId, SpecimenRecord};
use probe_bench::rng::{fill_standard_normal, stream};

pub const COUNTS: [usize; 3] = [21, 9, 7];

/// Labels in class blocks with the given counts.
pub fn labels(counts: [usize; 3]) -> Vec<ClassId> {
    (0..3)
        .flat_map(|k| std::iter::repeat_n(ClassId::new(k).unwrap(), counts[k]))
        .collect()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:02}")).collect()
}

/// Gaussian clusters: class k centred at `separation/√2 · e_(k mod d)`, so for
/// d ≥ 3 centres are `separation` apart; unit noise.
pub fn clusters(y: &[ClassId], d: usize, separation: f64, seed: u64) -> Array2<f64> {
    let mut noise = vec![0.0; y.len() * d];
    fill_standard_normal(&mut stream(seed), &mut noise);
    let mut x = Array2::from_shape_vec((y.len(), d), noise).unwrap();
    let offset = separation / std::f64::consts::SQRT_2;
    for (i, c) in y.iter().enumerate() {
        x[[i, c.index() % d]] += offset;
    }
    x
}

/// Gaussian clusters with centres `separation/√2 · u_k` for random orthonormal
/// directions u_0, u_1, u_2, so every pair of centres is exactly `separation`
/// apart and the offset is spread over all coordinates; unit noise. Needs d ≥ 3.
pub fn spread_clusters(y: &[ClassId], d: usize, separation: f64, seed: u64) -> Array2<f64> {
    let mut raw = vec![0.0; 3 * d];
    fill_standard_normal(&mut stream(seed ^ 0x5eed), &mut raw);
    let mut dirs: Vec<Array1<f64>> = Vec::new();
    for k in 0..3 {
        let mut u = Array1::from(raw[k * d..(k + 1) * d].to_vec());
        for v in &dirs {
            u = &u - &(v * u.dot(v));
        }
        let norm = u.dot(&u).sqrt();
        dirs.push(u / norm);
    }
    let mut noise = vec![0.0; y.len() * d];
    fill_standard_normal(&mut stream(seed), &mut noise);
    let mut x = Array2::from_shape_vec((y.len(), d), noise).unwrap();
    let offset = separation / std::f64::consts::SQRT_2;
    for (i, c) in y.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.scaled_add(offset, &dirs[c.index()]);
    }
    x
}

pub fn records(y: &[ClassId]) -> Vec<SpecimenRecord> {
    ids(y.len())
        .into_iter()
        .zip(y)
        .map(|(id, &label)| SpecimenRecord {
            id,
            label,
            image_path: None,
            pair_id: None,
        })
        .collect()
}

/// Manifest CSV text for the given labels, ids from [`ids`].
pub fn manifest_csv(y: &[ClassId]) -> String {
    let mut s = String::from("id,label,image_path,pair_id\n");
    for (id, c) in ids(y.len()).iter().zip(y) {
        s.push_str(&format!("{id},{},,\n", c.token()));
    }
    s
}

/// Mean over classes of (wins + ½·ties) / (positives · negatives).
pub fn brute_macro_auc(scores: &Array2<f64>, y: &[usize]) -> f64 {
    let k = scores.ncols();
    let mut total = 0.0;
    for c in 0..k {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == c && y[j] != c {
                    pairs += 1.0;
                    let (a, b) = (scores[[i, c]], scores[[j, c]]);
                    wins += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total += wins / pairs;
    }
    total / k as f64
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-12)
}

pub type Objective = fn(ArrayView2<'_, f64>, ArrayView1<'_, f64>, ArrayView2<'_, f64>, &[usize], f64) -> (f64, Array2<f64>, Array1<f64>);

/// Relative error between the analytic gradient and central differences
/// (step 1e-5) at a random point drawn from `seed`.
pub fn gradient_error(f: Objective, param: f64, seed: u64) -> f64 {
    let (n, d, k) = (12, 5, 3);
    let mut buf = vec![0.0; n * d + k * d + k];
    fill_standard_normal(&mut stream(seed), &mut buf);
    let x = Array2::from_shape_vec((n, d), buf[..n * d].to_vec()).unwrap();
    let w = Array2::from_shape_vec((k, d), buf[n * d..n * d + k * d].to_vec()).unwrap();
    let b = Array1::from(buf[n * d + k * d..].to_vec());
    let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let (_, gw, gb) = f(w.view(), b.view(), x.view(), &y, param);
    let h = 1e-5;
    let mut numeric = Vec::new();
    for idx in 0..k * d {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.as_slice_mut().unwrap()[idx] += h;
        wm.as_slice_mut().unwrap()[idx] -= h;
        let fp = f(wp.view(), b.view(), x.view(), &y, param).0;
        let fm = f(wm.view(), b.view(), x.view(), &y, param).0;
        numeric.push((fp - fm) / (2.0 * h));
    }
    for idx in 0..k {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[idx] += h;
        bm[idx] -= h;
        let fp = f(w.view(), bp.view(), x.view(), &y, param).0;
        let fm = f(w.view(), bm.view(), x.view(), &y, param).0;
        numeric.push((fp - fm) / (2.0 * h));
    }
    let analytic: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
    relative_error(&analytic, &numeric)
}
