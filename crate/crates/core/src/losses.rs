//! Trainable losses and their gradients with respect to the prediction.
//!
//! All soft-DTW based losses differentiate through the squared Euclidean
//! cost, so a gradient `G` on the cost matrix maps back to the prediction as
//! `grad[c][h] = sum_j G[h][j] * 2 * (pred[c][h] - target[c][j])`.

use serde::{Deserialize, Serialize};

use crate::dp::{self, is_sentinel, CostMatrix, SENTINEL};
use crate::error::{Error, Result};
use crate::series::{SquareMatrix, TimeSeries};

/// Which temporal penalty a [`PenaltyMatrix`] encodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PenaltyKind {
    /// `(h - j)^2 / k^2`.
    Squared,
    /// `+inf` outside the band `|h - j| <= band`, zero inside.
    SakoeChiba { band: usize },
    /// `f(|h - j|)` for a nondecreasing `f` with `f(0) = 0`.
    Weighted,
}

/// Temporal penalty `omega[h][j]` for associating prediction step `h` with
/// target step `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    omega: SquareMatrix,
    kind: PenaltyKind,
}

impl PenaltyMatrix {
    pub fn squared(k: usize) -> Self {
        let norm = (k * k) as f64;
        let omega = SquareMatrix::from_fn(k, |h, j| {
            let d = h as f64 - j as f64;
            d * d / norm
        });
        Self {
            omega,
            kind: PenaltyKind::Squared,
        }
    }

    pub fn sakoe_chiba(k: usize, band: usize) -> Self {
        let omega = SquareMatrix::from_fn(k, |h, j| if h.abs_diff(j) > band { f64::INFINITY } else { 0.0 });
        Self {
            omega,
            kind: PenaltyKind::SakoeChiba { band },
        }
    }

    /// Penalty `f(|h - j|)`. `f` must vanish at zero and be nondecreasing on
    /// `0..k`.
    pub fn weighted(k: usize, f: impl Fn(usize) -> f64) -> Result<Self> {
        let table: Vec<f64> = (0..k).map(&f).collect();
        if table.first().is_some_and(|v| *v != 0.0) {
            return Err(Error::usage("weighted penalty must satisfy f(0) = 0"));
        }
        if table.iter().any(|v| !v.is_finite()) || table.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::usage("weighted penalty must be finite and nondecreasing"));
        }
        Ok(Self {
            omega: SquareMatrix::from_fn(k, |h, j| table[h.abs_diff(j)]),
            kind: PenaltyKind::Weighted,
        })
    }

    /// Default weighted penalty `f(m) = m / k`.
    pub fn weighted_linear(k: usize) -> Self {
        let kf = k as f64;
        Self::weighted(k, |m| m as f64 / kf).expect("linear weight is valid")
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.omega
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.omega.size()
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite()
    }
}

/// Balance and smoothing of the DILATE loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let cfg = Self { alpha, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::usage(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        Ok(())
    }
}

/// Loss value, gradient with respect to the prediction, and the two DILATE
/// components (zero where not applicable).
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: TimeSeries,
    pub shape_part: f64,
    pub temporal_part: f64,
}

/// Pull a cost-matrix gradient back onto the prediction.
fn chain_through_cost(pred: &TimeSeries, target: &TimeSeries, g: &SquareMatrix) -> Vec<f64> {
    let (dims, k) = (pred.dims(), pred.len());
    let mut out = vec![0.0; dims * k];
    for c in 0..dims {
        for h in 0..k {
            let p = pred.at(c, h);
            out[c * k + h] = (0..k).map(|j| g.get(h, j) * 2.0 * (p - target.at(c, j))).sum();
        }
    }
    out
}

/// Soft-DTW shape loss.
pub fn shape_loss(pred: &TimeSeries, target: &TimeSeries, gamma: f64) -> Result<LossResult> {
    let cost = dp::pairwise_cost(pred, target, gamma)?;
    let (value, mut tables) = dp::soft_dtw_forward(&cost)?;
    let align = dp::soft_dtw_grad(&cost, &mut tables)?;
    let grad = chain_through_cost(pred, target, &align.weights);
    Ok(LossResult {
        value,
        grad: TimeSeries::from_raw(pred.dims(), pred.len(), grad),
        shape_part: value,
        temporal_part: 0.0,
    })
}

fn check_temporal_penalty(omega: &PenaltyMatrix, k: usize) -> Result<()> {
    if omega.size() != k {
        return Err(Error::ShapeMismatch(format!("penalty is {0}x{0}, series has {k} steps", omega.size())));
    }
    if !omega.is_finite() {
        return Err(Error::usage(
            "banded penalty has infinite entries; it is only valid in the tangled loss",
        ));
    }
    Ok(())
}

/// Smoothed temporal distortion `<A*_gamma, omega>`.
pub fn temporal_loss(
    pred: &TimeSeries,
    target: &TimeSeries,
    gamma: f64,
    omega: &PenaltyMatrix,
) -> Result<LossResult> {
    check_temporal_penalty(omega, pred.len())?;
    let cost = dp::pairwise_cost(pred, target, gamma)?;
    let (_, mut tables) = dp::soft_dtw_forward(&cost)?;
    let align = dp::soft_dtw_grad(&cost, &mut tables)?;
    let value = align.weights.dot(omega.matrix());
    let hvp = dp::grad_jvp_with_tables(&cost, &mut tables, omega.matrix())?;
    let grad = chain_through_cost(pred, target, &hvp);
    Ok(LossResult {
        value,
        grad: TimeSeries::from_raw(pred.dims(), pred.len(), grad),
        shape_part: 0.0,
        temporal_part: value,
    })
}

/// `alpha * shape + (1 - alpha) * temporal` with a single shared DP pass.
pub fn dilate_loss(
    pred: &TimeSeries,
    target: &TimeSeries,
    config: &LossConfig,
    omega: &PenaltyMatrix,
) -> Result<LossResult> {
    config.validate()?;
    check_temporal_penalty(omega, pred.len())?;
    let alpha = config.alpha;
    let cost = dp::pairwise_cost(pred, target, config.gamma)?;
    let (shape, mut tables) = dp::soft_dtw_forward(&cost)?;
    let align = dp::soft_dtw_grad(&cost, &mut tables)?;
    let temporal = align.weights.dot(omega.matrix());

    let shape_grad = chain_through_cost(pred, target, &align.weights);
    // The Hessian product only feeds the temporal gradient.
    let temporal_grad = if alpha < 1.0 {
        let hvp = dp::grad_jvp_with_tables(&cost, &mut tables, omega.matrix())?;
        chain_through_cost(pred, target, &hvp)
    } else {
        vec![0.0; shape_grad.len()]
    };
    let grad = shape_grad
        .iter()
        .zip(&temporal_grad)
        .map(|(s, t)| alpha * s + (1.0 - alpha) * t)
        .collect();
    Ok(LossResult {
        value: alpha * shape + (1.0 - alpha) * temporal,
        grad: TimeSeries::from_raw(pred.dims(), pred.len(), grad),
        shape_part: shape,
        temporal_part: temporal,
    })
}

/// Blend `alpha * delta + (1 - alpha) * omega`, mapping forbidden cells to the
/// sentinel.
pub fn blended_cost(delta: &SquareMatrix, omega: &PenaltyMatrix, alpha: f64) -> SquareMatrix {
    SquareMatrix::from_fn(delta.size(), |h, j| {
        let o = omega.matrix().get(h, j);
        if alpha < 1.0 && (!o.is_finite() || is_sentinel(o)) {
            SENTINEL
        } else if alpha < 1.0 {
            alpha * delta.get(h, j) + (1.0 - alpha) * o
        } else {
            delta.get(h, j)
        }
    })
}

/// Soft-DTW on the blended cost `alpha * delta + (1 - alpha) * omega`.
///
/// `shape_part` carries the soft-DTW value of the blended cost and
/// `temporal_part` the expected penalty under its alignment.
pub fn dilate_tangled_loss(
    pred: &TimeSeries,
    target: &TimeSeries,
    config: &LossConfig,
    omega: &PenaltyMatrix,
) -> Result<LossResult> {
    config.validate()?;
    if omega.size() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "penalty is {0}x{0}, series has {1} steps",
            omega.size(),
            pred.len()
        )));
    }
    let alpha = config.alpha;
    if alpha == 0.0 && matches!(omega.kind(), PenaltyKind::SakoeChiba { .. }) {
        return Err(Error::DegenerateCost(
            "alpha = 0 with a banded penalty leaves no dependence on the prediction".into(),
        ));
    }
    let delta = dp::pairwise_cost(pred, target, config.gamma)?;
    let cost = CostMatrix::new(blended_cost(delta.delta(), omega, alpha), config.gamma)?;
    let (value, mut tables) = dp::soft_dtw_forward(&cost)?;
    let align = dp::soft_dtw_grad(&cost, &mut tables)?;
    let mut grad = chain_through_cost(pred, target, &align.weights);
    grad.iter_mut().for_each(|g| *g *= alpha);
    let temporal = align
        .weights
        .as_slice()
        .iter()
        .zip(omega.matrix().as_slice())
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, o)| a * o)
        .sum();
    Ok(LossResult {
        value,
        grad: TimeSeries::from_raw(pred.dims(), pred.len(), grad),
        shape_part: value,
        temporal_part: temporal,
    })
}

/// Mean squared error over every channel and step.
pub fn mse_loss(pred: &TimeSeries, target: &TimeSeries) -> Result<LossResult> {
    pred.check_same_shape(target)?;
    let n = pred.values().len() as f64;
    let diff: Vec<f64> = pred.values().iter().zip(target.values()).map(|(p, t)| p - t).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok(LossResult {
        value,
        grad: TimeSeries::from_raw(pred.dims(), pred.len(), grad),
        shape_part: 0.0,
        temporal_part: 0.0,
    })
}

/// Temporal penalty used by a tangled loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "penalty")]
pub enum TangledPenalty {
    Squared,
    Weighted,
    Band { width: usize },
}

impl TangledPenalty {
    pub fn build(&self, k: usize) -> PenaltyMatrix {
        match *self {
            TangledPenalty::Squared => PenaltyMatrix::squared(k),
            TangledPenalty::Weighted => PenaltyMatrix::weighted_linear(k),
            TangledPenalty::Band { width } => PenaltyMatrix::sakoe_chiba(k, width),
        }
    }
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "loss")]
pub enum LossSpec {
    Mse,
    SoftDtw { gamma: f64 },
    Dilate { alpha: f64, gamma: f64 },
    DilateTangled { alpha: f64, gamma: f64, penalty: TangledPenalty },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Mse => Ok(()),
            LossSpec::SoftDtw { gamma } => LossConfig::new(1.0, gamma).map(|_| ()),
            LossSpec::Dilate { alpha, gamma } | LossSpec::DilateTangled { alpha, gamma, .. } => {
                LossConfig::new(alpha, gamma).map(|_| ())
            }
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::Mse => "mse".into(),
            LossSpec::SoftDtw { gamma } => format!("dtw(gamma={gamma})"),
            LossSpec::Dilate { alpha, gamma } => format!("dilate(alpha={alpha},gamma={gamma})"),
            LossSpec::DilateTangled { alpha, gamma, penalty } => {
                let p = match penalty {
                    TangledPenalty::Squared => "squared".to_string(),
                    TangledPenalty::Weighted => "weighted".to_string(),
                    TangledPenalty::Band { width } => format!("band{width}"),
                };
                format!("dilate-t-{p}(alpha={alpha},gamma={gamma})")
            }
        }
    }

    /// Penalty matrices depend only on the horizon; build them once per run.
    pub fn prepare(&self, k: usize) -> PreparedLoss {
        let omega = match *self {
            LossSpec::Dilate { .. } => Some(PenaltyMatrix::squared(k)),
            LossSpec::DilateTangled { penalty, .. } => Some(penalty.build(k)),
            _ => None,
        };
        PreparedLoss { spec: *self, omega }
    }
}

/// A [`LossSpec`] with its penalty matrix built for a fixed horizon.
#[derive(Debug, Clone)]
pub struct PreparedLoss {
    spec: LossSpec,
    omega: Option<PenaltyMatrix>,
}

impl PreparedLoss {
    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn evaluate(&self, pred: &TimeSeries, target: &TimeSeries) -> Result<LossResult> {
        match (self.spec, &self.omega) {
            (LossSpec::Mse, _) => mse_loss(pred, target),
            (LossSpec::SoftDtw { gamma }, _) => shape_loss(pred, target, gamma),
            (LossSpec::Dilate { alpha, gamma }, Some(omega)) => {
                dilate_loss(pred, target, &LossConfig { alpha, gamma }, omega)
            }
            (LossSpec::DilateTangled { alpha, gamma, .. }, Some(omega)) => {
                dilate_tangled_loss(pred, target, &LossConfig { alpha, gamma }, omega)
            }
            _ => unreachable!("penalty is built for every DILATE variant"),
        }
    }
}
