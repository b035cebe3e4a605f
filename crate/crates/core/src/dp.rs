//! Dynamic-programming kernels for soft-DTW.
//!
//! The forward recursion fills an accumulated-cost table
//!
//! ```text
//! r[i][j] = delta[i][j] + softmin_gamma(r[i-1][j-1], r[i-1][j], r[i][j-1])
//! ```
//!
//! with `r[0][0] = 0` and the remaining boundary cells set to [`SENTINEL`].
//! The backward recursion walks the same lattice in reverse and produces the
//! occupancy table `e = d r[k][k] / d r[i][j]`, which on interior cells equals
//! the gradient of soft-DTW with respect to the cost matrix (the smoothed
//! alignment). Transition weights are read off the forward table, so the
//! forward pass is never repeated.
//!
//! Differentiating both recursions in a direction `omega` gives a
//! Hessian-vector product in `O(k^2)`, which is what the temporal loss needs
//! for its own gradient.
//!
//! Tables are `(k+1) x (k+1)` and use one-based interior indices; public
//! matrices ([`CostMatrix`], [`SoftAlignment`]) are zero-based `k x k`.

use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::series::{SquareMatrix, TimeSeries};

/// Stand-in for `+inf` on boundary and forbidden cells. Finite so that
/// arithmetic on it never produces NaN; any value at or above half of it is
/// treated as infinite.
pub const SENTINEL: f64 = 1e30;

#[inline]
pub fn is_sentinel(x: f64) -> bool {
    x >= 0.5 * SENTINEL
}

/// Smoothed minimum `-gamma * log(sum_i exp(-a_i / gamma))`.
///
/// Sentinel entries are skipped; if every entry is a sentinel the result is
/// [`SENTINEL`].
pub fn softmin(values: &[f64], gamma: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::usage("softmin of an empty list"));
    }
    check_gamma(gamma)?;
    let min = values
        .iter()
        .copied()
        .filter(|v| !is_sentinel(*v))
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Ok(SENTINEL);
    }
    let sum: f64 = values
        .iter()
        .filter(|v| !is_sentinel(**v))
        .map(|v| (-(v - min) / gamma).exp())
        .sum();
    Ok(min - gamma * sum.ln())
}

#[inline]
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if is_sentinel(m) {
        return SENTINEL;
    }
    let term = |x: f64| {
        if is_sentinel(x) {
            0.0
        } else {
            (-(x - m) / gamma).exp()
        }
    };
    m - gamma * (term(a) + term(b) + term(c)).ln()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Pairwise dissimilarities between prediction steps (rows) and target steps
/// (columns), with the soft-DTW smoothing parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    delta: SquareMatrix,
    gamma: f64,
}

impl CostMatrix {
    /// Entries must be finite and non-negative; [`SENTINEL`] marks a
    /// forbidden cell.
    pub fn new(delta: SquareMatrix, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if delta.size() == 0 {
            return Err(Error::usage("cost matrix must be at least 1x1"));
        }
        if let Some(v) = delta.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::usage(format!("cost entries must be finite and >= 0, got {v}")));
        }
        Ok(Self { delta, gamma })
    }

    pub fn delta(&self) -> &SquareMatrix {
        &self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn size(&self) -> usize {
        self.delta.size()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            delta: self.delta.clone(),
            gamma,
        })
    }

    fn digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.gamma.to_bits().hash(&mut h);
        for v in self.delta.as_slice() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Squared Euclidean distance between every prediction step and every target
/// step, summed over channels.
pub fn pairwise_cost(pred: &TimeSeries, target: &TimeSeries, gamma: f64) -> Result<CostMatrix> {
    pred.check_same_shape(target)?;
    let k = pred.len();
    let delta = SquareMatrix::from_fn(k, |h, j| {
        (0..pred.dims())
            .map(|c| {
                let d = pred.at(c, h) - target.at(c, j);
                d * d
            })
            .sum()
    });
    CostMatrix::new(delta, gamma)
}

/// Forward/backward lattices of one soft-DTW evaluation.
#[derive(Debug, Clone)]
pub struct DpTables {
    k: usize,
    digest: u64,
    /// Accumulated soft cost, `(k+1) x (k+1)`.
    pub r: Vec<f64>,
    /// Occupancy (gradient) table, filled by [`soft_dtw_grad`].
    pub e: Option<Vec<f64>>,
    /// Directional derivative of `r`, filled by a JVP pass.
    pub r_dot: Option<Vec<f64>>,
    /// Directional derivative of `e`, filled by a JVP pass.
    pub e_dot: Option<Vec<f64>>,
}

impl DpTables {
    pub fn size(&self) -> usize {
        self.k
    }

    /// Table entry at one-based lattice coordinates.
    pub fn r_at(&self, i: usize, j: usize) -> f64 {
        self.r[i * (self.k + 1) + j]
    }

    fn check_matches(&self, cost: &CostMatrix) -> Result<()> {
        if self.k != cost.size() || self.digest != cost.digest() {
            return Err(Error::usage("DP tables were produced from a different cost matrix"));
        }
        Ok(())
    }
}

/// Smoothed alignment: expected path occupancy under the Gibbs distribution
/// over warping paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAlignment {
    pub weights: SquareMatrix,
}

/// Optimal warping path as zero-based `(prediction step, target step)` cells,
/// from `(0, 0)` to `(k-1, k-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardPath {
    pub cells: Vec<(usize, usize)>,
}

impl HardPath {
    /// `<A, M>` for the binary path matrix `A`.
    pub fn dot(&self, m: &SquareMatrix) -> f64 {
        self.cells.iter().map(|&(i, j)| m.get(i, j)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.cells.iter().all(|&(i, j)| i == j)
    }
}

/// Soft-DTW value and the forward table.
pub fn soft_dtw_forward(cost: &CostMatrix) -> Result<(f64, DpTables)> {
    let k = cost.size();
    let w = k + 1;
    let gamma = cost.gamma;
    let mut r = vec![SENTINEL; w * w];
    r[0] = 0.0;
    for i in 1..=k {
        for j in 1..=k {
            let d = cost.delta.get(i - 1, j - 1);
            r[i * w + j] = if is_sentinel(d) {
                SENTINEL
            } else {
                let sm = softmin3(r[(i - 1) * w + j - 1], r[(i - 1) * w + j], r[i * w + j - 1], gamma);
                if is_sentinel(sm) {
                    SENTINEL
                } else {
                    d + sm
                }
            };
        }
    }
    let value = r[k * w + k];
    let tables = DpTables {
        k,
        digest: cost.digest(),
        r,
        e: None,
        r_dot: None,
        e_dot: None,
    };
    Ok((value, tables))
}

/// Weight of the edge `(i, j) -> (si, sj)` in the backward recursion, i.e.
/// `d r[si][sj] / d r[i][j]`. Zero if the successor is forbidden.
#[inline]
fn transition(cost: &CostMatrix, r: &[f64], w: usize, i: usize, j: usize, si: usize, sj: usize) -> f64 {
    let rs = r[si * w + sj];
    if is_sentinel(rs) {
        return 0.0;
    }
    let ds = cost.delta.get(si - 1, sj - 1);
    ((rs - ds - r[i * w + j]) / cost.gamma).exp()
}

const SUCCESSORS: [(usize, usize); 3] = [(1, 0), (0, 1), (1, 1)];

/// Gradient of soft-DTW with respect to the cost matrix.
///
/// Fills `tables.e`; the forward table must come from the same `cost`.
pub fn soft_dtw_grad(cost: &CostMatrix, tables: &mut DpTables) -> Result<SoftAlignment> {
    tables.check_matches(cost)?;
    let k = cost.size();
    let w = k + 1;
    let r = &tables.r;
    if is_sentinel(r[k * w + k]) {
        return Err(Error::DegenerateCost("no admissible warping path".into()));
    }
    let mut e = vec![0.0; w * w];
    e[k * w + k] = 1.0;
    for i in (1..=k).rev() {
        for j in (1..=k).rev() {
            if (i == k && j == k) || is_sentinel(r[i * w + j]) {
                continue;
            }
            let mut acc = 0.0;
            for (di, dj) in SUCCESSORS {
                let (si, sj) = (i + di, j + dj);
                if si > k || sj > k {
                    continue;
                }
                acc += e[si * w + sj] * transition(cost, r, w, i, j, si, sj);
            }
            e[i * w + j] = acc;
        }
    }
    // Every path starts at (1, 1); drop the accumulated rounding.
    e[w + 1] = 1.0;
    let weights = SquareMatrix::from_fn(k, |h, j| e[(h + 1) * w + j + 1]);
    tables.e = Some(e);
    Ok(SoftAlignment { weights })
}

/// Hessian-vector product `(d^2 softDTW / d delta^2) * direction`.
///
/// Equivalently the gradient of `delta -> <soft_dtw_grad(delta), direction>`.
pub fn soft_dtw_grad_jvp(cost: &CostMatrix, direction: &SquareMatrix) -> Result<SquareMatrix> {
    let (_, mut tables) = soft_dtw_forward(cost)?;
    soft_dtw_grad(cost, &mut tables)?;
    grad_jvp_with_tables(cost, &mut tables, direction)
}

/// [`soft_dtw_grad_jvp`] reusing tables that already hold `r` and `e`.
pub fn grad_jvp_with_tables(
    cost: &CostMatrix,
    tables: &mut DpTables,
    direction: &SquareMatrix,
) -> Result<SquareMatrix> {
    tables.check_matches(cost)?;
    let k = cost.size();
    if direction.size() != k {
        return Err(Error::ShapeMismatch(format!(
            "direction is {0}x{0}, cost is {k}x{k}",
            direction.size()
        )));
    }
    if !direction.is_finite() {
        return Err(Error::usage("JVP direction must have finite entries"));
    }
    let Some(e) = tables.e.as_ref() else {
        return Err(Error::usage("occupancy table missing; run soft_dtw_grad first"));
    };
    let w = k + 1;
    let gamma = cost.gamma;
    let r = &tables.r;

    let mut r_dot = vec![0.0; w * w];
    for i in 1..=k {
        for j in 1..=k {
            let rij = r[i * w + j];
            if is_sentinel(rij) {
                continue;
            }
            let sm = rij - cost.delta.get(i - 1, j - 1);
            let mut acc = direction.get(i - 1, j - 1);
            for (pi, pj) in [(i - 1, j - 1), (i - 1, j), (i, j - 1)] {
                let rp = r[pi * w + pj];
                if !is_sentinel(rp) {
                    acc += ((sm - rp) / gamma).exp() * r_dot[pi * w + pj];
                }
            }
            r_dot[i * w + j] = acc;
        }
    }

    let mut e_dot = vec![0.0; w * w];
    for i in (1..=k).rev() {
        for j in (1..=k).rev() {
            if (i == k && j == k) || is_sentinel(r[i * w + j]) {
                continue;
            }
            let mut acc = 0.0;
            for (di, dj) in SUCCESSORS {
                let (si, sj) = (i + di, j + dj);
                if si > k || sj > k {
                    continue;
                }
                let t = transition(cost, r, w, i, j, si, sj);
                if t == 0.0 {
                    continue;
                }
                let s = si * w + sj;
                let slope = (r_dot[s] - direction.get(si - 1, sj - 1) - r_dot[i * w + j]) / gamma;
                acc += t * (e_dot[s] + e[s] * slope);
            }
            e_dot[i * w + j] = acc;
        }
    }
    e_dot[w + 1] = 0.0;
    let out = SquareMatrix::from_fn(k, |h, j| e_dot[(h + 1) * w + j + 1]);
    tables.r_dot = Some(r_dot);
    tables.e_dot = Some(e_dot);
    Ok(out)
}

/// Classic DTW on the cost matrix (gamma ignored) with the optimal path.
///
/// Ties during backtracking prefer the diagonal move, then the vertical move
/// (previous prediction step), then the horizontal move.
pub fn hard_dtw(cost: &CostMatrix) -> (f64, HardPath) {
    let k = cost.size();
    let w = k + 1;
    let mut d = vec![f64::INFINITY; w * w];
    d[0] = 0.0;
    for i in 1..=k {
        for j in 1..=k {
            let best = d[(i - 1) * w + j - 1].min(d[(i - 1) * w + j]).min(d[i * w + j - 1]);
            d[i * w + j] = cost.delta.get(i - 1, j - 1) + best;
        }
    }
    let value = d[k * w + k];

    let mut cells = vec![(k - 1, k - 1)];
    let (mut i, mut j) = (k, k);
    while (i, j) != (1, 1) {
        let diag = d[(i - 1) * w + j - 1];
        let up = d[(i - 1) * w + j];
        let left = d[i * w + j - 1];
        (i, j) = if diag <= up && diag <= left {
            (i - 1, j - 1)
        } else if up <= left {
            (i - 1, j)
        } else {
            (i, j - 1)
        };
        cells.push((i - 1, j - 1));
    }
    cells.reverse();
    (value, HardPath { cells })
}

/// Number of monotone warping paths through a `k x k` grid (central Delannoy
/// number `D(k-1)`): 1, 3, 13, 63, 321, ...
pub fn path_count(k: usize) -> f64 {
    let w = k.max(1);
    let mut t = vec![0.0f64; w * w];
    for i in 0..w {
        for j in 0..w {
            t[i * w + j] = if i == 0 || j == 0 {
                1.0
            } else {
                t[(i - 1) * w + j] + t[i * w + j - 1] + t[(i - 1) * w + j - 1]
            };
        }
    }
    t[w * w - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cost(rows: &[Vec<f64>], gamma: f64) -> CostMatrix {
        CostMatrix::new(SquareMatrix::from_rows(rows).unwrap(), gamma).unwrap()
    }

    #[test]
    fn softmin_closed_forms() {
        assert_eq!(softmin(&[0.5], 0.01).unwrap(), 0.5);
        let v = softmin(&[1.0, 1.0, 1.0], 0.1).unwrap();
        assert!((v - (1.0 - 0.1 * 3f64.ln())).abs() < 1e-15);
        assert!((softmin(&[1.0, 2.0, 3.0], 0.001).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmin_sentinels() {
        assert_eq!(softmin(&[SENTINEL, SENTINEL], 0.1).unwrap(), SENTINEL);
        assert_eq!(softmin(&[SENTINEL, 2.0], 0.1).unwrap(), 2.0);
        assert!(matches!(softmin(&[], 0.1), Err(Error::Usage(_))));
        assert!(matches!(softmin(&[1.0], 0.0), Err(Error::InvalidGamma(_))));
    }

    #[test]
    fn pairwise_cost_small() {
        let p = TimeSeries::univariate(&[0.0, 1.0]).unwrap();
        let t = TimeSeries::univariate(&[1.0, 0.0]).unwrap();
        let c = pairwise_cost(&p, &t, 1.0).unwrap();
        assert_eq!(c.delta().to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let flat = TimeSeries::univariate(&[0.3; 4]).unwrap();
        let c = pairwise_cost(&flat, &flat, 1.0).unwrap();
        assert!(c.delta().as_slice().iter().all(|v| *v == 0.0));

        let short = TimeSeries::univariate(&[0.0]).unwrap();
        assert!(matches!(pairwise_cost(&p, &short, 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn forward_single_cell_and_zero_2x2() {
        let (v, t) = soft_dtw_forward(&cost(&[vec![0.7]], 0.01)).unwrap();
        assert_eq!(v, 0.7);
        assert_eq!(t.r_at(1, 1), 0.7);

        let c = cost(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0.01);
        let (v, _) = soft_dtw_forward(&c).unwrap();
        assert!((v + 0.01 * 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn grad_small_cases() {
        let c = cost(&[vec![2.5]], 0.1);
        let (_, mut t) = soft_dtw_forward(&c).unwrap();
        assert_eq!(soft_dtw_grad(&c, &mut t).unwrap().weights.to_rows(), vec![vec![1.0]]);

        let c = cost(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0.01);
        let (_, mut t) = soft_dtw_forward(&c).unwrap();
        let a = soft_dtw_grad(&c, &mut t).unwrap().weights;
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(1, 1), 1.0);
        assert!((a.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grad_rejects_foreign_tables() {
        let a = cost(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.1);
        let b = cost(&[vec![0.0, 2.0], vec![1.0, 0.0]], 0.1);
        let (_, mut t) = soft_dtw_forward(&a).unwrap();
        assert!(matches!(soft_dtw_grad(&b, &mut t), Err(Error::Usage(_))));
    }

    #[test]
    fn jvp_single_cell_is_zero() {
        let c = cost(&[vec![1.3]], 0.5);
        let dir = SquareMatrix::from_rows(&[vec![4.0]]).unwrap();
        assert_eq!(soft_dtw_grad_jvp(&c, &dir).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn jvp_rejects_nonfinite_direction() {
        let c = cost(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.1);
        let dir = SquareMatrix::from_rows(&[vec![0.0, f64::INFINITY], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(soft_dtw_grad_jvp(&c, &dir), Err(Error::Usage(_))));
    }

    #[test]
    fn hard_dtw_examples() {
        let p = TimeSeries::univariate(&[0.0, 1.0, 1.0]).unwrap();
        let t = TimeSeries::univariate(&[0.0, 0.0, 1.0]).unwrap();
        let (v, path) = hard_dtw(&pairwise_cost(&p, &t, 1.0).unwrap());
        assert_eq!(v, 0.0);
        assert_eq!(path.cells, vec![(0, 0), (0, 1), (1, 2), (2, 2)]);

        let (v, path) = hard_dtw(&pairwise_cost(&p, &p, 1.0).unwrap());
        assert_eq!(v, 0.0);
        assert!(path.is_diagonal());
        assert_eq!(path.cells.len(), 3);
    }

    #[test]
    fn delannoy_counts() {
        let counts: Vec<f64> = (1..=6).map(path_count).collect();
        assert_eq!(counts, vec![1.0, 3.0, 13.0, 63.0, 321.0, 1683.0]);
    }
}
