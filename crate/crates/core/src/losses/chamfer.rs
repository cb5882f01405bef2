use serde::{Deserialize, Serialize};

use super::{add_assign, scaled_direction, LossValue};
use crate::cloud::{BiAssignment, PointCloud};
use crate::Result;

/// L1 averages Euclidean NN distances; L2 averages their squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChamferVariant {
    L1,
    L2,
}

/// Mean-of-both-directions Chamfer distance.
pub fn chamfer(pred: &PointCloud, gt: &PointCloud, variant: ChamferVariant) -> Result<f64> {
    Ok(chamfer_with_grad(pred, gt, variant, false)?.total)
}

pub fn chamfer_with_grad(
    pred: &PointCloud,
    gt: &PointCloud,
    variant: ChamferVariant,
    want_grad: bool,
) -> Result<LossValue> {
    let nn = BiAssignment::compute(pred, gt, Default::default())?;
    Ok(chamfer_from_assignment(pred, gt, &nn, variant, want_grad))
}

pub fn chamfer_from_assignment(
    pred: &PointCloud,
    gt: &PointCloud,
    nn: &BiAssignment,
    variant: ChamferVariant,
    want_grad: bool,
) -> LossValue {
    let a = pred.points();
    let b = gt.points();
    let inv_n = 1.0 / a.len() as f64;
    let inv_m = 1.0 / b.len() as f64;
    let fwd = &nn.pred_to_gt;
    let bwd = &nn.gt_to_pred;

    let cost = |d: f64| match variant {
        ChamferVariant::L1 => d,
        ChamferVariant::L2 => d * d,
    };
    // d/dd of the per-point cost
    let slope = |d: f64| match variant {
        ChamferVariant::L1 => 1.0,
        ChamferVariant::L2 => 2.0 * d,
    };

    let fwd_sum: f64 = fwd.distances.iter().map(|&d| cost(d)).sum();
    let bwd_sum: f64 = bwd.distances.iter().map(|&d| cost(d)).sum();
    let total = fwd_sum * inv_n + bwd_sum * inv_m;

    let grad = want_grad.then(|| {
        let mut grad = vec![[0.0; 3]; a.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let d = fwd.distances[i];
            add_assign(g, scaled_direction(&a[i], &b[fwd.indices[i]], d, slope(d) * inv_n));
        }
        for (j, bj) in b.iter().enumerate() {
            let i = bwd.indices[j];
            let d = bwd.distances[j];
            add_assign(&mut grad[i], scaled_direction(&a[i], bj, d, slope(d) * inv_m));
        }
        grad
    });

    LossValue {
        total,
        cov_term: total,
        attr_term: 0.0,
        grad,
    }
}
