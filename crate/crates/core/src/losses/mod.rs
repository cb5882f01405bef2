//! Point-set losses: the quality-aware loss (coverage-weighted matching plus
//! attraction toward uncovered ground truth), Chamfer baselines and EMD.
//!
//! Every differentiable loss returns its gradient with respect to the
//! prediction coordinates under the fixed-assignment convention: nearest
//! neighbor indices and the uncovered mask are treated as locally constant.

mod chamfer;
mod emd;
mod gradcheck;
mod qal;

use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer, chamfer_from_assignment, chamfer_with_grad, ChamferVariant};
pub use emd::{emd, optimal_assignment, sinkhorn_cost, EmdMode, MAX_EXACT_POINTS};
pub use gradcheck::{finite_difference_grad, loss_grad_check, DEFAULT_FD_STEP};
pub use qal::{
    coverage_weight, qal, qal_attr_term, qal_cov_term, qal_from_assignment, uncovered_mask, QalParams, UncoveredMask,
};

use crate::cloud::{BiAssignment, Point3, PointCloud};
use crate::Result;

const SIGMOID_CLAMP: f64 = 40.0;

/// Logistic sigmoid with the argument clamped to `[-40, 40]`.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

/// Scalar loss with its breakdown and optional gradient.
///
/// For Chamfer losses `cov_term` carries the whole value and `attr_term` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub cov_term: f64,
    pub attr_term: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<Point3>>,
}

/// A differentiable loss usable by the gradient checker and the fitting loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum LossKind {
    Qal(QalParams),
    ChamferL1,
    ChamferL2,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Qal(_) => "qal",
            LossKind::ChamferL1 => "cd-l1",
            LossKind::ChamferL2 => "cd-l2",
        }
    }

    pub fn evaluate(&self, pred: &PointCloud, gt: &PointCloud, want_grad: bool) -> Result<LossValue> {
        let nn = BiAssignment::compute(pred, gt, Default::default())?;
        self.evaluate_with(pred, gt, &nn, want_grad)
    }

    pub fn evaluate_with(
        &self,
        pred: &PointCloud,
        gt: &PointCloud,
        nn: &BiAssignment,
        want_grad: bool,
    ) -> Result<LossValue> {
        match self {
            LossKind::Qal(params) => qal_from_assignment(pred, gt, nn, params, want_grad),
            LossKind::ChamferL1 => Ok(chamfer_from_assignment(pred, gt, nn, ChamferVariant::L1, want_grad)),
            LossKind::ChamferL2 => Ok(chamfer_from_assignment(pred, gt, nn, ChamferVariant::L2, want_grad)),
        }
    }
}

/// Unit vector from `from` to `to` scaled by `scale`, or zero when the points
/// coincide (the gradient of a distance at 0 is defined as 0).
#[inline]
pub(crate) fn scaled_direction(to: &Point3, from: &Point3, dist: f64, scale: f64) -> Point3 {
    if dist > 0.0 {
        let s = scale / dist;
        [(to[0] - from[0]) * s, (to[1] - from[1]) * s, (to[2] - from[2]) * s]
    } else {
        [0.0; 3]
    }
}

#[inline]
pub(crate) fn add_assign(acc: &mut Point3, v: Point3) {
    acc[0] += v[0];
    acc[1] += v[1];
    acc[2] += v[2];
}
