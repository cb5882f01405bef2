//! Central finite-difference verification of analytic loss gradients.

use super::LossKind;
use crate::cloud::{BiAssignment, PointCloud};
use crate::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central differences of the loss value with respect to every prediction
/// coordinate, returned row-major as `(N, 3)`.
pub fn finite_difference_grad(pred: &PointCloud, gt: &PointCloud, loss: &LossKind, h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pred.len() * 3);
    for i in 0..pred.len() {
        for axis in 0..3 {
            let (plus, minus) = perturbed_pair(pred, i, axis, h)?;
            let span = plus.points()[i][axis] - minus.points()[i][axis];
            let fp = loss.evaluate(&plus, gt, false)?.total;
            let fm = loss.evaluate(&minus, gt, false)?.total;
            out.push((fp - fm) / span);
        }
    }
    Ok(out)
}

/// Maximum relative error between the analytic gradient and central
/// differences with step `h`:
/// `max |analytic - fd| / (|fd| + 1e-12)` over all coordinates.
///
/// Fails with [`Error::AssignmentUnstable`] when a `±h` perturbation changes
/// any nearest-neighbor index in either direction, since the loss is then not
/// smooth over the difference stencil.
///
/// A prediction point that coincides with a point it is matched to sits on
/// the kink of the Euclidean norm; its coordinates report an error of 0 and
/// the analytic gradient there is the conventional zero subgradient.
pub fn loss_grad_check(pred: &PointCloud, gt: &PointCloud, loss: &LossKind, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let base_nn = BiAssignment::compute(pred, gt, Default::default())?;
    let analytic = loss
        .evaluate_with(pred, gt, &base_nn, true)?
        .grad
        .expect("gradient requested");

    let on_kink = kinked_points(pred, &base_nn);
    let mut worst: f64 = 0.0;
    for (i, grad_i) in analytic.iter().enumerate() {
        for (axis, &an) in grad_i.iter().enumerate() {
            let (plus, minus) = perturbed_pair(pred, i, axis, h)?;
            let span = plus.points()[i][axis] - minus.points()[i][axis];
            let mut values = [0.0; 2];
            for (slot, moved) in [&plus, &minus].into_iter().enumerate() {
                let nn = BiAssignment::compute(moved, gt, Default::default())?;
                if nn.pred_to_gt.indices != base_nn.pred_to_gt.indices
                    || nn.gt_to_pred.indices != base_nn.gt_to_pred.indices
                {
                    return Err(Error::AssignmentUnstable { point: i, axis });
                }
                values[slot] = loss.evaluate_with(moved, gt, &nn, false)?.total;
            }
            if on_kink[i] {
                continue;
            }
            let fd = (values[0] - values[1]) / span;
            let err = (an - fd).abs() / (fd.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn kinked_points(pred: &PointCloud, nn: &BiAssignment) -> Vec<bool> {
    let mut kinked: Vec<bool> = nn.pred_to_gt.distances.iter().map(|&d| d == 0.0).collect();
    for (&i, &d) in nn.gt_to_pred.indices.iter().zip(&nn.gt_to_pred.distances) {
        kinked[i] |= d == 0.0;
    }
    debug_assert_eq!(kinked.len(), pred.len());
    kinked
}

fn perturbed_pair(pred: &PointCloud, i: usize, axis: usize, h: f64) -> Result<(PointCloud, PointCloud)> {
    let mut plus = pred.points().to_vec();
    let mut minus = plus.clone();
    plus[i][axis] += h;
    minus[i][axis] -= h;
    Ok((PointCloud::new(plus)?, PointCloud::new(minus)?))
}
