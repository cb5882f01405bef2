//! Entry points over flat row-major `(N, 3)` coordinate buffers, for callers
//! that hold contiguous arrays rather than [`PointCloud`] values.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::losses::{chamfer, emd, qal, ChamferVariant, EmdMode, QalParams};
use crate::metrics::{quality_report, QualityReport};
use crate::Result;

/// QAL value, its two terms and the gradient with respect to `pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatQalOutput {
    pub total: f64,
    pub cov_term: f64,
    pub attr_term: f64,
    /// Same layout as the `pred` buffer.
    pub grad: Vec<f64>,
}

pub fn qal_value_and_grad(pred: &[f64], gt: &[f64], eps: f64, omega: f64, lambda_attr: f64) -> Result<FlatQalOutput> {
    let params = QalParams::new(eps, omega, lambda_attr)?;
    let value = qal(
        &PointCloud::from_flat(pred)?,
        &PointCloud::from_flat(gt)?,
        &params,
        true,
    )?;
    Ok(FlatQalOutput {
        total: value.total,
        cov_term: value.cov_term,
        attr_term: value.attr_term,
        grad: value.grad.expect("gradient requested").into_iter().flatten().collect(),
    })
}

/// Evaluates many `(pred, gt)` pairs in parallel, returning results in
/// input order.
pub fn qal_value_and_grad_batch(
    pairs: &[(&[f64], &[f64])],
    eps: f64,
    omega: f64,
    lambda_attr: f64,
) -> Result<Vec<FlatQalOutput>> {
    pairs
        .par_iter()
        .map(|(pred, gt)| qal_value_and_grad(pred, gt, eps, omega, lambda_attr))
        .collect()
}

pub fn chamfer_value(pred: &[f64], gt: &[f64], variant: ChamferVariant) -> Result<f64> {
    chamfer(&PointCloud::from_flat(pred)?, &PointCloud::from_flat(gt)?, variant)
}

pub fn emd_value(pred: &[f64], gt: &[f64], mode: EmdMode) -> Result<f64> {
    emd(&PointCloud::from_flat(pred)?, &PointCloud::from_flat(gt)?, mode)
}

pub fn quality_at(pred: &[f64], gt: &[f64], tau: f64) -> Result<QualityReport> {
    quality_report(&PointCloud::from_flat(pred)?, &PointCloud::from_flat(gt)?, tau)
}
