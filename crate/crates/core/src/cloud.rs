//! Point clouds and one-directional nearest-neighbor assignment.
//!
//! Distances are Euclidean (not squared). Candidates are compared on squared
//! distance and ties go to the lowest target index, so both search backends
//! return bit-identical assignments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kdtree::SpatialIndex;
use crate::{Error, Result};

pub type Point3 = [f64; 3];

/// Query batches smaller than this run on the calling thread.
const PAR_MIN_QUERIES: usize = 256;

#[inline]
pub fn squared_distance(p: &Point3, q: &Point3) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn distance(p: &Point3, q: &Point3) -> f64 {
    squared_distance(p, q).sqrt()
}

/// An ordered set of finite 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    label: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates. An empty cloud
    /// is representable; losses and metrics reject it.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if let Some(axis) = p.iter().position(|c| !c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { point: i, axis });
            }
        }
        Ok(Self { points, label: None })
    }

    /// Builds a cloud from a row-major `(N, 3)` buffer.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "coordinate buffer length {} is not a multiple of 3",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn set_label(&mut self, label: Option<String>) {
        self.label = label;
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Applies `f` to every point, keeping the label.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Result<Self> {
        let mut out = Self::new(self.points.iter().map(f).collect())?;
        out.label = self.label.clone();
        Ok(out)
    }

    /// Axis-aligned bounding box as `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            (lo, hi)
        }))
    }
}

/// Diagonal length of the joint bounding box of two clouds.
pub fn joint_diameter(a: &PointCloud, b: &PointCloud) -> f64 {
    match (a.bounds(), b.bounds()) {
        (Some((alo, ahi)), Some((blo, bhi))) => {
            let lo = [alo[0].min(blo[0]), alo[1].min(blo[1]), alo[2].min(blo[2])];
            let hi = [ahi[0].max(bhi[0]), ahi[1].max(bhi[1]), ahi[2].max(bhi[2])];
            distance(&lo, &hi)
        }
        (Some((lo, hi)), None) | (None, Some((lo, hi))) => distance(&lo, &hi),
        (None, None) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    BruteForce,
    #[default]
    SpatialIndex,
}

/// Nearest target for each query point.
#[derive(Debug, Clone, PartialEq)]
pub struct NnAssignment {
    pub distances: Vec<f64>,
    pub indices: Vec<usize>,
}

impl NnAssignment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Brute-force nearest neighbor of `q` in `targets`; lowest index wins ties.
pub(crate) fn brute_nearest(q: &Point3, targets: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, t) in targets.iter().enumerate() {
        let d2 = squared_distance(q, t);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// For every point of `query`, finds its nearest point in `target`.
pub fn nn_one_way(query: &PointCloud, target: &PointCloud, backend: Backend) -> Result<NnAssignment> {
    query.ensure_non_empty()?;
    target.ensure_non_empty()?;
    let pairs: Vec<(usize, f64)> = match backend {
        Backend::BruteForce => query
            .points()
            .par_iter()
            .with_min_len(PAR_MIN_QUERIES)
            .map(|q| brute_nearest(q, target.points()))
            .collect(),
        Backend::SpatialIndex => {
            let index = SpatialIndex::build(target)?;
            return Ok(index.query_cloud(query));
        }
    };
    Ok(collect_assignment(pairs))
}

pub(crate) fn collect_assignment(pairs: Vec<(usize, f64)>) -> NnAssignment {
    let (indices, distances) = pairs.into_iter().map(|(j, d2)| (j, d2.sqrt())).unzip();
    NnAssignment { distances, indices }
}

/// Both directions of matching between a prediction and a ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BiAssignment {
    /// prediction -> ground truth
    pub pred_to_gt: NnAssignment,
    /// ground truth -> prediction
    pub gt_to_pred: NnAssignment,
}

impl BiAssignment {
    pub fn compute(pred: &PointCloud, gt: &PointCloud, backend: Backend) -> Result<Self> {
        Ok(Self {
            pred_to_gt: nn_one_way(pred, gt, backend)?,
            gt_to_pred: nn_one_way(gt, pred, backend)?,
        })
    }
}
