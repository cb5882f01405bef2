use serde::{Deserialize, Serialize};

use super::{add_assign, scaled_direction, sigmoid, LossValue};
use crate::cloud::{BiAssignment, PointCloud};
use crate::{Error, Result};

/// Hyperparameters of the quality-aware loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QalParams {
    /// Tolerance, in coordinate units.
    pub eps: f64,
    /// Sharpness of the sigmoid margin, in 1/length.
    pub omega: f64,
    /// Weight of the attraction term.
    pub lambda_attr: f64,
    /// Experimental: also attract prediction points that no ground-truth
    /// point selects as its nearest neighbor, mirroring the one-way term.
    #[serde(default)]
    pub symmetric_attraction: bool,
}

impl Default for QalParams {
    fn default() -> Self {
        Self {
            eps: 0.001,
            omega: 10.0,
            lambda_attr: 1.0,
            symmetric_attraction: false,
        }
    }
}

impl QalParams {
    pub fn new(eps: f64, omega: f64, lambda_attr: f64) -> Result<Self> {
        let p = Self {
            eps,
            omega,
            lambda_attr,
            symmetric_attraction: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.lambda_attr >= 0.0 && self.lambda_attr.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_attr must be nonnegative, got {}",
                self.lambda_attr
            )));
        }
        Ok(())
    }

    /// `w(d) = 1.5 - sigmoid(omega * (eps - d))`, in (0.5, 1.5).
    #[inline]
    fn weight(&self, d: f64) -> f64 {
        1.5 - sigmoid(self.omega * (self.eps - d))
    }

    #[inline]
    fn gate(&self, d: f64) -> f64 {
        sigmoid(self.omega * (self.eps - d))
    }

    /// d/dd of `w(d) * d`.
    #[inline]
    fn weighted_slope(&self, d: f64) -> f64 {
        let s = self.gate(d);
        (1.5 - s) + d * self.omega * s * (1.0 - s)
    }

    /// d/dd of `sigmoid(omega * (eps - d)) * d`. Negative for large `d`.
    #[inline]
    fn gated_slope(&self, d: f64) -> f64 {
        let s = self.gate(d);
        s - d * self.omega * s * (1.0 - s)
    }
}

/// Soft coverage weight of a nearest-neighbor distance.
pub fn coverage_weight(d: f64, eps: f64, omega: f64) -> Result<f64> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::invalid(format!("distance must be nonnegative, got {d}")));
    }
    let params = QalParams {
        eps,
        omega,
        lambda_attr: 0.0,
        symmetric_attraction: false,
    };
    params.validate()?;
    Ok(params.weight(d))
}

/// Per-ground-truth flags; `true` means no prediction picked that point as
/// its nearest neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UncoveredMask {
    pub flags: Vec<bool>,
}

impl UncoveredMask {
    /// Marks every target index that no query selected.
    pub fn from_indices(n_targets: usize, chosen: &[usize]) -> Self {
        let mut flags = vec![true; n_targets];
        for &j in chosen {
            flags[j] = false;
        }
        Self { flags }
    }

    pub fn count_uncovered(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

pub fn uncovered_mask(pred: &PointCloud, gt: &PointCloud) -> Result<UncoveredMask> {
    let nn = crate::cloud::nn_one_way(pred, gt, Default::default())?;
    Ok(UncoveredMask::from_indices(gt.len(), &nn.indices))
}

pub fn qal_cov_term(pred: &PointCloud, gt: &PointCloud, params: &QalParams) -> Result<f64> {
    Ok(qal(pred, gt, params, false)?.cov_term)
}

pub fn qal_attr_term(pred: &PointCloud, gt: &PointCloud, params: &QalParams) -> Result<f64> {
    Ok(qal(pred, gt, params, false)?.attr_term)
}

/// Quality-aware loss of `pred` against `gt`.
pub fn qal(pred: &PointCloud, gt: &PointCloud, params: &QalParams, want_grad: bool) -> Result<LossValue> {
    params.validate()?;
    let nn = BiAssignment::compute(pred, gt, Default::default())?;
    qal_from_assignment(pred, gt, &nn, params, want_grad)
}

/// Quality-aware loss from precomputed nearest-neighbor assignments.
///
/// Sums run sequentially in point order so results are bit-reproducible.
pub fn qal_from_assignment(
    pred: &PointCloud,
    gt: &PointCloud,
    nn: &BiAssignment,
    params: &QalParams,
    want_grad: bool,
) -> Result<LossValue> {
    params.validate()?;
    pred.ensure_non_empty()?;
    gt.ensure_non_empty()?;
    let a = pred.points();
    let b = gt.points();
    let inv_n = 1.0 / a.len() as f64;
    let inv_m = 1.0 / b.len() as f64;
    let fwd = &nn.pred_to_gt;
    let bwd = &nn.gt_to_pred;

    let gt_mask = UncoveredMask::from_indices(b.len(), &fwd.indices);
    let pred_mask = params
        .symmetric_attraction
        .then(|| UncoveredMask::from_indices(a.len(), &bwd.indices));

    let cov_pred: f64 = fwd.distances.iter().map(|&d| params.weight(d) * d).sum();
    let cov_gt: f64 = bwd.distances.iter().map(|&d| params.weight(d) * d).sum();
    let cov_term = cov_pred * inv_n + cov_gt * inv_m;

    let attr_gt: f64 = bwd
        .distances
        .iter()
        .zip(&gt_mask.flags)
        .filter(|(_, &uncovered)| uncovered)
        .map(|(&d, _)| params.gate(d) * d)
        .sum();
    let mut attr_term = attr_gt * inv_m;
    if let Some(mask) = &pred_mask {
        let attr_pred: f64 = fwd
            .distances
            .iter()
            .zip(&mask.flags)
            .filter(|(_, &uncovered)| uncovered)
            .map(|(&d, _)| params.gate(d) * d)
            .sum();
        attr_term += attr_pred * inv_n;
    }

    let total = cov_term + params.lambda_attr * attr_term;

    let grad = want_grad.then(|| {
        let mut grad = vec![[0.0; 3]; a.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let d = fwd.distances[i];
            let mut slope = params.weighted_slope(d);
            if pred_mask.as_ref().is_some_and(|m| m.flags[i]) {
                slope += params.lambda_attr * params.gated_slope(d);
            }
            add_assign(g, scaled_direction(&a[i], &b[fwd.indices[i]], d, slope * inv_n));
        }
        for (j, bj) in b.iter().enumerate() {
            let i = bwd.indices[j];
            let d = bwd.distances[j];
            let mut slope = params.weighted_slope(d);
            if gt_mask.flags[j] {
                slope += params.lambda_attr * params.gated_slope(d);
            }
            add_assign(&mut grad[i], scaled_direction(&a[i], bj, d, slope * inv_m));
        }
        grad
    });

    Ok(LossValue {
        total,
        cov_term,
        attr_term,
        grad,
    })
}
