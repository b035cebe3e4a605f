//! Evaluation metrics: hard DTW, hard TDI, ramp score, change-point Hausdorff
//! distance and Welch's t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dp;
use crate::error::{Error, Result};
use crate::losses::PenaltyMatrix;
use crate::series::TimeSeries;

/// Mean squared error over all entries.
pub fn eval_mse(pred: &TimeSeries, target: &TimeSeries) -> Result<f64> {
    pred.check_same_shape(target)?;
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Hard DTW on the squared Euclidean cost.
pub fn eval_dtw(pred: &TimeSeries, target: &TimeSeries) -> Result<f64> {
    let cost = dp::pairwise_cost(pred, target, 1.0)?;
    Ok(dp::hard_dtw(&cost).0)
}

/// Time distortion index: squared penalty summed along the optimal DTW path.
pub fn eval_tdi(pred: &TimeSeries, target: &TimeSeries) -> Result<f64> {
    let cost = dp::pairwise_cost(pred, target, 1.0)?;
    let (_, path) = dp::hard_dtw(&cost);
    Ok(path.dot(PenaltyMatrix::squared(pred.len()).matrix()))
}

/// Sorted one-based indices where a new segment starts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePointSet {
    indices: Vec<usize>,
}

impl ChangePointSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::usage("change points must be distinct"));
        }
        if indices.first() == Some(&0) {
            return Err(Error::usage("change points are one-based"));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Optimal partitioning with a piecewise-constant L2 segment cost.
///
/// Penalty per extra segment is `2 * s2 * ln(k)` where `s2` is half the
/// variance of the first differences (a noise-variance estimate that is
/// insensitive to level shifts). Splits must beat the penalty strictly.
pub fn detect_change_points(series: &[f64]) -> ChangePointSet {
    let k = series.len();
    if k < 2 {
        return ChangePointSet::default();
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var_diff = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / diffs.len() as f64;
    let penalty = (2.0 * (var_diff / 2.0) * (k as f64).ln()).max(f64::EPSILON);
    detect_with_penalty(series, penalty)
}

/// Optimal partitioning for an explicit penalty.
pub fn detect_with_penalty(series: &[f64], penalty: f64) -> ChangePointSet {
    let k = series.len();
    if k < 2 {
        return ChangePointSet::default();
    }
    // Centre first so the prefix sums stay well conditioned.
    let mean = series.iter().sum::<f64>() / k as f64;
    let mut s1 = vec![0.0; k + 1];
    let mut s2 = vec![0.0; k + 1];
    for (t, x) in series.iter().enumerate() {
        let x = x - mean;
        s1[t + 1] = s1[t] + x;
        s2[t + 1] = s2[t] + x * x;
    }
    let seg_cost = |a: usize, b: usize| {
        let n = (b - a) as f64;
        let s = s1[b] - s1[a];
        (s2[b] - s2[a] - s * s / n).max(0.0)
    };
    let tol = 1e-12 * (1.0 + s2[k]);

    // best[t] = optimal penalised cost of series[..t], last[t] = start of the last segment.
    let mut best = vec![0.0; k + 1];
    let mut last = vec![0usize; k + 1];
    best[0] = -penalty;
    for t in 1..=k {
        let mut b = best[0] + penalty + seg_cost(0, t);
        let mut arg = 0;
        for s in 1..t {
            let c = best[s] + penalty + seg_cost(s, t);
            if c < b - tol {
                b = c;
                arg = s;
            }
        }
        best[t] = b;
        last[t] = arg;
    }
    let mut cps = Vec::new();
    let mut t = k;
    while last[t] > 0 {
        t = last[t];
        cps.push(t + 1);
    }
    cps.reverse();
    ChangePointSet { indices: cps }
}

/// Hausdorff distance between two change-point sets within horizon `k`.
///
/// One empty set scores `k`, two empty sets score `0`.
pub fn hausdorff(a: &ChangePointSet, b: &ChangePointSet, k: usize) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => k as f64,
        _ => {
            let directed = |x: &[usize], y: &[usize]| {
                x.iter()
                    .map(|&i| y.iter().map(|&j| i.abs_diff(j)).min().unwrap_or(0))
                    .max()
                    .unwrap_or(0)
            };
            directed(a.indices(), b.indices()).max(directed(b.indices(), a.indices())) as f64
        }
    }
}

/// Swinging-door compression: indices of the retained knots. Every original
/// point lies within `tolerance` of the piecewise-linear interpolant.
pub fn swinging_door(series: &[f64], tolerance: f64) -> Vec<usize> {
    let n = series.len();
    if n <= 2 {
        return (0..n).collect();
    }
    let mut knots = vec![0];
    let mut anchor = 0;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut i = 1;
    while i < n {
        let dt = (i - anchor) as f64;
        let l = (series[i] - tolerance - series[anchor]) / dt;
        let h = (series[i] + tolerance - series[anchor]) / dt;
        let (nlo, nhi) = (lo.max(l), hi.min(h));
        if nlo > nhi && i - 1 > anchor {
            anchor = i - 1;
            knots.push(anchor);
            lo = f64::NEG_INFINITY;
            hi = f64::INFINITY;
            continue;
        }
        lo = nlo;
        hi = nhi;
        i += 1;
    }
    knots.push(n - 1);
    knots
}

/// Slope of the piecewise-linear interpolant on each unit interval.
fn knot_slopes(series: &[f64], knots: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len().saturating_sub(1));
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let s = (series[b] - series[a]) / (b - a) as f64;
        out.extend(std::iter::repeat_n(s, b - a));
    }
    out
}

/// Relative swinging-door tolerance used by [`ramp_score`].
pub const RAMP_TOLERANCE: f64 = 0.03;

/// Mean absolute difference between the slopes of the swinging-door
/// approximations of both series. The door tolerance is
/// [`RAMP_TOLERANCE`] times the target range.
pub fn ramp_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    ramp_score_with_tolerance(pred, target, RAMP_TOLERANCE)
}

pub fn ramp_score_with_tolerance(pred: &[f64], target: &[f64], relative_tolerance: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", pred.len(), target.len())));
    }
    if target.len() < 2 {
        return Err(Error::usage("ramp score needs at least two steps"));
    }
    let (min, max) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let tol = relative_tolerance * (max - min);
    let sp = knot_slopes(pred, &swinging_door(pred, tol));
    let st = knot_slopes(target, &swinging_door(target, tol));
    Ok(sp.iter().zip(&st).map(|(a, b)| (a - b).abs()).sum::<f64>() / sp.len() as f64)
}

/// Welch's two-sample t statistic and two-sided significance at 5%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::usage("Welch's test needs at least two runs per side"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        let significant = ma != mb;
        let t = if significant { (ma - mb).signum() * f64::INFINITY } else { 0.0 };
        return Ok(WelchTest {
            t,
            dof: na + nb - 2.0,
            p_value: if significant { 0.0 } else { 1.0 },
            significant,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::usage(e.to_string()))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(WelchTest {
        t,
        dof,
        p_value,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

/// All five per-sample metrics, averaged over a test set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mse: f64,
    pub dtw: f64,
    pub tdi: f64,
    pub ramp: f64,
    pub hausdorff: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 5] = ["mse", "dtw", "tdi", "ramp", "hausdorff"];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mse" => self.mse,
            "dtw" => self.dtw,
            "tdi" => self.tdi,
            "ramp" => self.ramp,
            "hausdorff" => self.hausdorff,
            _ => return None,
        })
    }
}

/// Metrics for one univariate (prediction, target) pair.
pub fn evaluate_pair(pred: &TimeSeries, target: &TimeSeries) -> Result<MetricValues> {
    let (p, t) = (pred.channel(0), target.channel(0));
    Ok(MetricValues {
        mse: eval_mse(pred, target)?,
        dtw: eval_dtw(pred, target)?,
        tdi: eval_tdi(pred, target)?,
        ramp: ramp_score(p, t)?,
        hausdorff: hausdorff(&detect_change_points(p), &detect_change_points(t), pred.len()),
    })
}
