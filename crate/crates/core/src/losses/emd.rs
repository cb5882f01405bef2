//! Earth mover's distance between point sets with uniform masses.
//!
//! The exact mode solves the assignment problem with a shortest augmenting
//! path Hungarian method (O(n^3)). The entropic mode runs log-domain Sinkhorn
//! iterations and accepts clouds of different sizes.

use serde::{Deserialize, Serialize};

use crate::cloud::{distance, joint_diameter, PointCloud};
use crate::{Error, Result};

/// Largest cloud accepted by the exact solver.
pub const MAX_EXACT_POINTS: usize = 512;

const DEFAULT_REG_FRACTION: f64 = 0.01;
const DEFAULT_SINKHORN_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EmdMode {
    /// Minimum mean matching cost over bijections. Requires equal sizes.
    Exact,
    /// Entropic optimal transport. `reg` defaults to 1% of the joint bounding
    /// box diagonal, `iters` to 200. The returned transport cost carries an
    /// upward entropic bias of order `reg * ln(n)`.
    Entropic { reg: Option<f64>, iters: Option<usize> },
}

impl EmdMode {
    pub fn entropic_default() -> Self {
        EmdMode::Entropic { reg: None, iters: None }
    }
}

pub fn emd(pred: &PointCloud, gt: &PointCloud, mode: EmdMode) -> Result<f64> {
    pred.ensure_non_empty()?;
    gt.ensure_non_empty()?;
    match mode {
        EmdMode::Exact => {
            if pred.len() != gt.len() {
                return Err(Error::SizeMismatch {
                    pred: pred.len(),
                    gt: gt.len(),
                });
            }
            if pred.len() > MAX_EXACT_POINTS {
                return Err(Error::TooLarge {
                    n: pred.len(),
                    max: MAX_EXACT_POINTS,
                });
            }
            let cost = cost_matrix(pred, gt);
            let n = pred.len();
            let assignment = optimal_assignment(&cost, n);
            let sum: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            Ok(sum / n as f64)
        }
        EmdMode::Entropic { reg, iters } => {
            let iters = iters.unwrap_or(DEFAULT_SINKHORN_ITERS);
            let reg = match reg {
                Some(r) if r > 0.0 && r.is_finite() => r,
                Some(r) => return Err(Error::invalid(format!("reg must be positive, got {r}"))),
                None => {
                    let diam = joint_diameter(pred, gt);
                    if diam == 0.0 {
                        return Ok(0.0);
                    }
                    DEFAULT_REG_FRACTION * diam
                }
            };
            if iters == 0 {
                return Err(Error::invalid("sinkhorn needs at least one iteration"));
            }
            Ok(sinkhorn_cost(&cost_matrix(pred, gt), pred.len(), gt.len(), reg, iters))
        }
    }
}

fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    a.points()
        .iter()
        .flat_map(|p| b.points().iter().map(move |q| distance(p, q)))
        .collect()
}

/// Minimum-cost perfect matching on a dense row-major `n x n` cost matrix.
/// Returns the column assigned to each row.
pub fn optimal_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (col - 1)] - u[r] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of[col0] = row_of[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[row_of[col] - 1] = col - 1;
    }
    assignment
}

/// Entropic transport cost `<P, C>` between uniform measures of sizes `n`
/// and `m` after `iters` log-domain Sinkhorn sweeps.
pub fn sinkhorn_cost(cost: &[f64], n: usize, m: usize, reg: f64, iters: usize) -> f64 {
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut scratch = Vec::with_capacity(n.max(m));

    for _ in 0..iters {
        for i in 0..n {
            scratch.clear();
            scratch.extend((0..m).map(|j| (g[j] - cost[i * m + j]) / reg));
            f[i] = reg * (log_a - log_sum_exp(&scratch));
        }
        for j in 0..m {
            scratch.clear();
            scratch.extend((0..n).map(|i| (f[i] - cost[i * m + j]) / reg));
            g[j] = reg * (log_b - log_sum_exp(&scratch));
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            total += ((f[i] + g[j] - c) / reg).exp() * c;
        }
    }
    total
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_swap_are_free() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(emd(&a, &a, EmdMode::Exact).unwrap(), 0.0);
        assert_eq!(emd(&a, &b, EmdMode::Exact).unwrap(), 0.0);
    }

    #[test]
    fn crossing_matching_is_avoided() {
        // Row 0 alone prefers column 0, but the optimum is 1.0 + 0.1.
        let cost = [0.9, 1.0, 0.1, 5.0];
        assert_eq!(optimal_assignment(&cost, 2), vec![1, 0]);
        let cost = [1.0, 2.0, 2.0, 1.0];
        assert_eq!(optimal_assignment(&cost, 2), vec![0, 1]);
    }

    #[test]
    fn exact_rejects_mismatch_and_oversize() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            emd(&a, &b, EmdMode::Exact),
            Err(Error::SizeMismatch { pred: 1, gt: 2 })
        ));
        let big = PointCloud::new((0..513).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        assert!(matches!(emd(&big, &big, EmdMode::Exact), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn entropic_close_to_exact_with_small_reg() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let b = cloud(&[[0.1, 0.0, 0.0], [1.0, 0.3, 0.0], [0.0, 2.0, 0.5]]);
        let exact = emd(&a, &b, EmdMode::Exact).unwrap();
        let approx = emd(
            &a,
            &b,
            EmdMode::Entropic {
                reg: Some(1e-3),
                iters: Some(500),
            },
        )
        .unwrap();
        assert!((exact - approx).abs() < 1e-3, "{exact} vs {approx}");
        let default = emd(&a, &b, EmdMode::entropic_default()).unwrap();
        assert!((exact - default).abs() < 0.05);
    }

    #[test]
    fn entropic_accepts_unequal_sizes() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let v = emd(&a, &b, EmdMode::entropic_default()).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert!(matches!(
            emd(
                &a,
                &b,
                EmdMode::Entropic {
                    reg: Some(0.0),
                    iters: None
                }
            ),
            Err(Error::InvalidParams(_))
        ));
    }
}
