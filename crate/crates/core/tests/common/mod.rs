//! Reference computations shared by the integration tests. Nothing here calls
//! into the DP kernels: paths are enumerated explicitly.
#![allow(dead_code)]

use dilate::{SquareMatrix, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_series(rng: &mut ChaCha8Rng, dims: usize, k: usize) -> TimeSeries {
    let v: Vec<f64> = (0..dims * k).map(|_| rng.gen::<f64>()).collect();
    TimeSeries::new(dims, k, v).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, k: usize) -> SquareMatrix {
    SquareMatrix::from_fn(k, |_, _| rng.gen::<f64>())
}

/// Every monotone warping path through a `k x k` grid, as zero-based cells.
pub fn all_paths(k: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(i: usize, j: usize, k: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((i, j));
        if i == k - 1 && j == k - 1 {
            out.push(cur.clone());
        } else {
            if i + 1 < k {
                walk(i + 1, j, k, cur, out);
            }
            if j + 1 < k {
                walk(i, j + 1, k, cur, out);
            }
            if i + 1 < k && j + 1 < k {
                walk(i + 1, j + 1, k, cur, out);
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, k, &mut Vec::new(), &mut out);
    out
}

pub fn path_cost(path: &[(usize, usize)], m: &SquareMatrix) -> f64 {
    path.iter().map(|&(i, j)| m.get(i, j)).sum()
}

/// Direct double-loop squared Euclidean cost.
pub fn reference_cost(p: &TimeSeries, t: &TimeSeries) -> SquareMatrix {
    let k = p.len();
    let mut m = SquareMatrix::zeros(k);
    for h in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for c in 0..p.dims() {
                s += (p.at(c, h) - t.at(c, j)).powi(2);
            }
            m.set(h, j, s);
        }
    }
    m
}

/// `-gamma * log sum_paths exp(-cost / gamma)`, shifted by the minimum cost.
pub fn enum_soft_dtw(delta: &SquareMatrix, gamma: f64) -> f64 {
    let costs: Vec<f64> = all_paths(delta.size()).iter().map(|p| path_cost(p, delta)).collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = costs.iter().map(|c| (-(c - min) / gamma).exp()).sum();
    min - gamma * s.ln()
}

/// Gibbs expectation of the path indicator matrix.
pub fn enum_alignment(delta: &SquareMatrix, gamma: f64) -> SquareMatrix {
    let k = delta.size();
    let paths = all_paths(k);
    let costs: Vec<f64> = paths.iter().map(|p| path_cost(p, delta)).collect();
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = costs.iter().map(|c| (-(c - min) / gamma).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut a = SquareMatrix::zeros(k);
    for (p, w) in paths.iter().zip(&weights) {
        for &(i, j) in p {
            a.set(i, j, a.get(i, j) + w / z);
        }
    }
    a
}

/// Minimum-cost path, preferring among equal costs the one a
/// diagonal-then-vertical-then-horizontal backtrack from the end would pick.
pub fn enum_hard_dtw(delta: &SquareMatrix) -> (f64, Vec<(usize, usize)>) {
    all_paths(delta.size())
        .into_iter()
        .map(|p| (path_cost(&p, delta), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Max relative error of two vectors, normalised by the larger vector norm.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-6);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Central differences of a scalar function of a flat vector.
pub fn fd_gradient(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(&x);
            x[i] = orig - step;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}
