//! Static kd-tree for exact 1-NN queries in 3D.
//!
//! Built once per cloud by median split along the axis of widest spread.
//! Leaves hold at most [`LEAF_SIZE`] points. Search prunes a subtree only when
//! its lower bound is strictly larger than the current best, so equal-distance
//! candidates are always visited and the lowest original index wins, exactly
//! as in brute force.

use rayon::prelude::*;

use crate::cloud::{collect_assignment, squared_distance, NnAssignment, Point3, PointCloud};
use crate::Result;

pub const LEAF_SIZE: usize = 16;

const PAR_MIN_QUERIES: usize = 256;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable spatial index over one point cloud.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    /// Points permuted into leaf order.
    points: Vec<Point3>,
    /// Original index of each entry of `points`.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        cloud.ensure_non_empty()?;
        let mut ids: Vec<usize> = (0..cloud.len()).collect();
        let mut nodes = Vec::with_capacity(2 * cloud.len() / LEAF_SIZE + 1);
        build_node(cloud.points(), &mut ids, 0, &mut nodes);
        let points = ids.iter().map(|&i| cloud.points()[i]).collect();
        Ok(Self { points, ids, nodes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Nearest indexed point to `q` as `(original index, squared distance)`.
    pub fn nearest_squared(&self, q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, None, 0.0, &mut [0.0; 3], &mut best);
        best
    }

    /// Nearest point other than original index `skip`. Returns `None` when the
    /// index holds only that point.
    pub fn nearest_excluding(&self, q: &Point3, skip: usize) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, Some(skip), 0.0, &mut [0.0; 3], &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let (i, d2) = self.nearest_squared(q);
        (i, d2.sqrt())
    }

    /// 1-NN for every point of `query`, in query order.
    pub fn query_cloud(&self, query: &PointCloud) -> NnAssignment {
        let pairs = query
            .points()
            .par_iter()
            .with_min_len(PAR_MIN_QUERIES)
            .map(|q| self.nearest_squared(q))
            .collect();
        collect_assignment(pairs)
    }

    /// `bound` is a lower bound on the squared distance from `q` to any point
    /// under `node`, assembled from the per-axis gaps in `gaps`.
    fn search(
        &self,
        node: usize,
        q: &Point3,
        skip: Option<usize>,
        bound: f64,
        gaps: &mut [f64; 3],
        best: &mut (usize, f64),
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let id = self.ids[k];
                    if Some(id) == skip {
                        continue;
                    }
                    let d2 = squared_distance(q, &self.points[k]);
                    if d2 < best.1 || (d2 == best.1 && id < best.0) {
                        *best = (id, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, skip, bound, gaps, best);
                let old = gaps[axis];
                let far_bound = bound - old * old + diff * diff;
                if far_bound <= best.1 {
                    gaps[axis] = diff;
                    self.search(far, q, skip, far_bound, gaps, best);
                    gaps[axis] = old;
                }
            }
        }
    }
}

fn build_node(points: &[Point3], ids: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let slot = nodes.len();
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + ids.len(),
        });
        return slot;
    }
    let axis = widest_axis(points, ids);
    let mid = ids.len() / 2;
    // Ordering by (coordinate, index) makes the partition independent of the
    // selection algorithm's internal choices.
    ids.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[ids[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = ids.split_at_mut(mid);
    let left = build_node(points, lo, offset, nodes);
    let right = build_node(points, hi, offset + mid, nodes);
    nodes[slot] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    slot
}

fn widest_axis(points: &[Point3], ids: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in ids {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::brute_nearest;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| rng.gen::<[f64; 3]>()).collect()).unwrap()
    }

    #[test]
    fn single_point_index() {
        let c = PointCloud::new(vec![[0.3, -1.0, 2.0]]).unwrap();
        let index = SpatialIndex::build(&c).unwrap();
        assert_eq!(index.nearest(&[0.3, -1.0, 2.0]), (0, 0.0));
        assert_eq!(index.nearest_excluding(&[0.0; 3], 0), None);
    }

    #[test]
    fn thousand_points_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 1000);
        let index = SpatialIndex::build(&cloud).unwrap();
        for _ in 0..100 {
            let q: Point3 = rng.gen();
            assert_eq!(index.nearest_squared(&q), brute_nearest(&q, cloud.points()));
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let mut pts = vec![[0.5, 0.5, 0.5]; 40];
        pts.extend((0..40).map(|i| [i as f64, 0.0, 0.0]));
        pts.push([0.5, 0.5, 0.5]);
        let c = PointCloud::new(pts).unwrap();
        let index = SpatialIndex::build(&c).unwrap();
        assert_eq!(index.nearest(&[0.5, 0.5, 0.5]), (0, 0.0));
        assert_eq!(index.nearest_excluding(&[0.5, 0.5, 0.5], 0), Some((1, 0.0)));
    }

    #[test]
    fn lattice_ties_match_brute_force() {
        // Integer lattice queries at half-integer offsets produce many exact ties.
        let pts: Vec<Point3> = (0..6)
            .flat_map(|x| (0..6).flat_map(move |y| (0..6).map(move |z| [x as f64, y as f64, z as f64])))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let index = SpatialIndex::build(&c).unwrap();
        for x in 0..11 {
            for y in 0..11 {
                let q = [x as f64 * 0.5, y as f64 * 0.5, 2.5];
                assert_eq!(index.nearest_squared(&q), brute_nearest(&q, c.points()));
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 500);
        let a = SpatialIndex::build(&c).unwrap();
        let b = SpatialIndex::build(&c).unwrap();
        assert_eq!(a.ids, b.ids);
    }
}
