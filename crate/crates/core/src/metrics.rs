//! Thresholded recall/precision metrics between a prediction and ground truth.
//!
//! Coverage counts ground-truth points with a prediction within `tau`
//! (inclusive); spurious counts predictions farther than `tau` (strict) from
//! all ground truth. All values are fractions in `[0, 1]`; rendering as
//! percentages is left to the presentation layer.
//!
//! A sensible `tau` is about twice the mean nearest-neighbor spacing of the
//! ground truth. For ~2k points on unit-scale shapes the spacing is around
//! 0.015, hence the default of 0.03.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{BiAssignment, PointCloud};
use crate::kdtree::SpatialIndex;
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.03;

/// How the F1 field is defined. Reports carry this string so readers know
/// it is not the point-level F-score of other toolkits.
pub const F1_CONVENTION: &str = "harmonic mean of coverage and sp_bar at tau";

/// Evaluation threshold: a fixed distance, or twice the mean nearest-neighbor
/// spacing of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    Fixed(f64),
    Auto,
}

impl Tau {
    pub fn resolve(self, gt: &PointCloud) -> Result<f64> {
        let tau = match self {
            Tau::Fixed(t) => t,
            Tau::Auto => 2.0 * mean_nn_spacing(gt)?,
        };
        check_tau(tau)?;
        Ok(tau)
    }
}

impl Default for Tau {
    fn default() -> Self {
        Tau::Fixed(DEFAULT_TAU)
    }
}

impl std::str::FromStr for Tau {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Tau::Auto);
        }
        s.parse::<f64>()
            .map(Tau::Fixed)
            .map_err(|e| format!("expected a number or 'auto': {e}"))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must be positive, got {tau}")))
    }
}

/// Metrics of one prediction/ground-truth pair at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub tau: f64,
    pub coverage: f64,
    pub spurious: f64,
    pub sp_bar: f64,
    pub quality: f64,
    pub f1: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub label: Option<String>,
}

impl QualityReport {
    fn assemble(tau: f64, coverage: f64, spurious: f64, n_pred: usize, n_gt: usize, label: Option<String>) -> Self {
        let sp_bar = 1.0 - spurious;
        Self {
            tau,
            coverage,
            spurious,
            sp_bar,
            quality: (coverage + sp_bar) / 2.0,
            f1: harmonic_mean(coverage, sp_bar),
            n_pred,
            n_gt,
            label,
        }
    }
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn fraction(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

pub fn coverage_at(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let nn = crate::cloud::nn_one_way(gt, pred, Default::default())?;
    Ok(fraction(nn.distances.iter().filter(|&&d| d <= tau).count(), gt.len()))
}

pub fn spurious_at(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let nn = crate::cloud::nn_one_way(pred, gt, Default::default())?;
    Ok(fraction(nn.distances.iter().filter(|&&d| d > tau).count(), pred.len()))
}

pub fn quality_report(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<QualityReport> {
    check_tau(tau)?;
    let nn = BiAssignment::compute(pred, gt, Default::default())?;
    quality_from_assignment(pred, gt, &nn, tau)
}

/// Same as [`quality_report`] but reuses nearest-neighbor assignments.
pub fn quality_from_assignment(
    pred: &PointCloud,
    gt: &PointCloud,
    nn: &BiAssignment,
    tau: f64,
) -> Result<QualityReport> {
    check_tau(tau)?;
    pred.ensure_non_empty()?;
    gt.ensure_non_empty()?;
    let covered = nn.gt_to_pred.distances.iter().filter(|&&d| d <= tau).count();
    let spurious = nn.pred_to_gt.distances.iter().filter(|&&d| d > tau).count();
    Ok(QualityReport::assemble(
        tau,
        fraction(covered, gt.len()),
        fraction(spurious, pred.len()),
        pred.len(),
        gt.len(),
        gt.label().or(pred.label()).map(str::to_owned),
    ))
}

/// Coverage restricted to ground-truth points whose `subset` flag is set.
/// Returns `None` when the subset is empty.
pub fn subset_coverage(gt_to_pred_distances: &[f64], subset: &[bool], tau: f64) -> Option<f64> {
    let (hit, total) = gt_to_pred_distances
        .iter()
        .zip(subset)
        .filter(|(_, &keep)| keep)
        .fold((0usize, 0usize), |(hit, total), (&d, _)| {
            (hit + usize::from(d <= tau), total + 1)
        });
    (total > 0).then(|| fraction(hit, total))
}

/// Mean distance from each point to the nearest other point of the cloud.
pub fn mean_nn_spacing(cloud: &PointCloud) -> Result<f64> {
    match cloud.len() {
        0 => return Err(Error::EmptyCloud),
        1 => return Err(Error::SinglePoint),
        _ => {}
    }
    let index = SpatialIndex::build(cloud)?;
    let spacing: Vec<f64> = cloud
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (_, d2) = index.nearest_excluding(p, i).expect("cloud has another point");
            d2.sqrt()
        })
        .collect();
    Ok(spacing.iter().sum::<f64>() / spacing.len() as f64)
}

/// Unweighted means of the report fields over a group of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub count: usize,
    pub coverage: f64,
    pub spurious: f64,
    pub sp_bar: f64,
    pub quality: f64,
    pub f1: f64,
}

impl MeanMetrics {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a QualityReport>) -> Option<Self> {
        let mut acc = [0.0; 5];
        let mut count = 0;
        for r in reports {
            for (slot, v) in acc.iter_mut().zip([r.coverage, r.spurious, r.sp_bar, r.quality, r.f1]) {
                *slot += v;
            }
            count += 1;
        }
        (count > 0).then(|| {
            let n = count as f64;
            Self {
                count,
                coverage: acc[0] / n,
                spurious: acc[1] / n,
                sp_bar: acc[2] / n,
                quality: acc[3] / n,
                f1: acc[4] / n,
            }
        })
    }
}

/// Per-pair reports plus per-category and overall means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub tau: f64,
    pub per_pair: Vec<QualityReport>,
    /// Keyed by cloud label; unlabeled pairs go under `"unlabeled"`.
    pub per_category: BTreeMap<String, MeanMetrics>,
    pub overall: MeanMetrics,
}

pub const UNLABELED: &str = "unlabeled";

/// Evaluates every pair (in parallel) and aggregates in input order.
pub fn aggregate(pairs: &[(PointCloud, PointCloud)], tau: f64) -> Result<AggregateReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no cloud pairs to evaluate"));
    }
    let per_pair = pairs
        .par_iter()
        .map(|(pred, gt)| quality_report(pred, gt, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_reports(tau, per_pair))
}

pub fn aggregate_reports(tau: f64, per_pair: Vec<QualityReport>) -> AggregateReport {
    let mut groups: BTreeMap<String, Vec<&QualityReport>> = BTreeMap::new();
    for r in &per_pair {
        groups
            .entry(r.label.clone().unwrap_or_else(|| UNLABELED.to_owned()))
            .or_default()
            .push(r);
    }
    let per_category = groups
        .into_iter()
        .map(|(k, v)| (k, MeanMetrics::of(v).expect("non-empty group")))
        .collect();
    let overall = MeanMetrics::of(&per_pair).expect("non-empty report list");
    AggregateReport {
        tau,
        per_pair,
        per_category,
        overall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn two_by_two() -> (PointCloud, PointCloud) {
        (
            cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
            cloud(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        )
    }

    #[test]
    fn identical_clouds_are_perfect() {
        let (p, _) = two_by_two();
        let r = quality_report(&p, &p, 0.01).unwrap();
        assert_eq!((r.coverage, r.spurious, r.quality, r.f1), (1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn two_by_two_at_half() {
        let (p, g) = two_by_two();
        assert_eq!(coverage_at(&p, &g, 0.5).unwrap(), 0.5);
        assert_eq!(spurious_at(&p, &g, 0.5).unwrap(), 0.5);
        let r = quality_report(&p, &g, 0.5).unwrap();
        assert_eq!((r.coverage, r.sp_bar, r.quality, r.f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn large_tau_covers_everything() {
        let (p, g) = two_by_two();
        assert_eq!(coverage_at(&p, &g, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn boundary_conventions() {
        let p = cloud(&[[0.0, 0.0, 0.0]]);
        let g = cloud(&[[0.25, 0.0, 0.0]]);
        // exactly tau: covered, not spurious
        assert_eq!(coverage_at(&p, &g, 0.25).unwrap(), 1.0);
        assert_eq!(spurious_at(&p, &g, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn far_prediction_scores_zero() {
        let p = cloud(&[[10.0, 0.0, 0.0]]);
        let g = cloud(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let r = quality_report(&p, &g, 0.5).unwrap();
        assert_eq!((r.coverage, r.sp_bar, r.quality, r.f1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_tau() {
        let (p, g) = two_by_two();
        assert!(matches!(coverage_at(&p, &g, 0.0), Err(Error::InvalidParams(_))));
        assert!(matches!(quality_report(&p, &g, -1.0), Err(Error::InvalidParams(_))));
        assert!("auto".parse::<Tau>().unwrap() == Tau::Auto);
        assert!("x".parse::<Tau>().is_err());
    }

    #[test]
    fn spacing_of_pair_and_singletons() {
        assert_eq!(mean_nn_spacing(&cloud(&[[0.0; 3], [1.0, 0.0, 0.0]])).unwrap(), 1.0);
        assert!(matches!(mean_nn_spacing(&cloud(&[[0.0; 3]])), Err(Error::SinglePoint)));
        assert!(matches!(mean_nn_spacing(&cloud(&[])), Err(Error::EmptyCloud)));
    }

    #[test]
    fn spacing_of_planar_grid_matches_brute_force() {
        let pts: Vec<[f64; 3]> = (0..11)
            .flat_map(|i| (0..11).map(move |j| [i as f64 * 0.1, j as f64 * 0.1, 0.0]))
            .collect();
        let oracle: f64 = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                pts.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / pts.len() as f64;
        let got = mean_nn_spacing(&cloud(&pts)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.1).abs() < 1e-9);
    }

    #[test]
    fn auto_tau_is_twice_spacing() {
        let g = cloud(&[[0.0; 3], [0.2, 0.0, 0.0]]);
        assert!((Tau::Auto.resolve(&g).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn aggregate_groups_by_label() {
        let (p, g) = two_by_two();
        let pairs = vec![
            (p.clone(), g.clone().with_label("chair")),
            (p.clone(), p.clone().with_label("chair")),
            (p.clone(), g.clone()),
        ];
        let agg = aggregate(&pairs, 0.5).unwrap();
        assert_eq!(agg.per_pair.len(), 3);
        assert_eq!(agg.per_category["chair"].count, 2);
        assert_eq!(agg.per_category["chair"].coverage, 0.75);
        assert_eq!(agg.per_category[UNLABELED].coverage, 0.5);
        assert!((agg.overall.coverage - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn subset_coverage_counts_flagged_only() {
        let d = [0.0, 0.5, 0.01, 0.2];
        assert_eq!(subset_coverage(&d, &[false, true, true, true], 0.03), Some(1.0 / 3.0));
        assert_eq!(subset_coverage(&d, &[false; 4], 0.03), None);
    }
}
