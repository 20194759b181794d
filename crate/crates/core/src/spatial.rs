//! Exact k-nearest-neighbor and radius search over point coordinates.
//!
//! Results are ordered by `(distance, index)`, so equidistant points always
//! come out lowest index first. The brute-force scans at the bottom of this
//! file define correct answers and double as test oracles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::types::{dist2, Neighborhood, Point3, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced 3D kd-tree. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KdIndex {
    coords: Vec<Point3>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

/// Outcome of a ball query.
#[derive(Debug, Clone, PartialEq)]
pub enum BallQuery {
    /// At least one point lies within the radius. `padded` counts the
    /// repeats of the nearest index added to reach `k_max`; repeats are
    /// placed directly after it so distances stay ascending.
    Region { neighborhood: Neighborhood, padded: usize },
    /// No point lies within the radius.
    Empty,
}

impl BallQuery {
    pub fn neighborhood(&self) -> Option<&Neighborhood> {
        match self {
            BallQuery::Region { neighborhood, .. } => Some(neighborhood),
            BallQuery::Empty => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, BallQuery::Empty)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

pub fn build_index(cloud: &PointCloud) -> Result<KdIndex> {
    KdIndex::from_coords(cloud.coords().to_vec())
}

impl KdIndex {
    pub fn from_coords(coords: Vec<Point3>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = coords.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { index: i });
        }
        let mut perm: Vec<usize> = (0..coords.len()).collect();
        let mut nodes = Vec::with_capacity(2 * coords.len() / LEAF_SIZE + 1);
        build_node(&coords, &mut perm, 0, coords.len(), &mut nodes);
        Ok(KdIndex { coords, perm, nodes })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    /// The `k` exactly-nearest points to `query`.
    pub fn knn_query(&self, query: &Point3, k: usize) -> Result<Neighborhood> {
        self.knn_query_with(query, k, None)
    }

    /// KNN with one point index excluded from the candidates.
    pub fn knn_query_with(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Result<Neighborhood> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k == 0 || k > available {
            return Err(Error::KOutOfRange { k, available });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, exclude, &mut heap);
        let sorted = heap.into_sorted_vec();
        let (indices, distances) = sorted.iter().map(|c| (c.index, c.dist)).unzip();
        Ok(Neighborhood::new_unchecked(None, indices, distances))
    }

    /// KNN window around cloud point `center`; with `exclude_self` the center
    /// is dropped from its own window.
    pub fn knn_of_point(&self, center: usize, k: usize, exclude_self: bool) -> Result<Neighborhood> {
        if center >= self.len() {
            return Err(Error::InvalidIndex {
                index: center,
                len: self.len(),
            });
        }
        let nb = self.knn_query_with(&self.coords[center], k, exclude_self.then_some(center))?;
        Ok(Neighborhood::new_unchecked(
            Some(center),
            nb.indices().to_vec(),
            nb.distances().to_vec(),
        ))
    }

    fn knn_node(
        &self,
        node: usize,
        q: &Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist: dist2(q, &self.coords[i]).sqrt(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
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
                self.knn_node(near, q, k, exclude, heap);
                // Equal distance must still be explored: a lower index may tie.
                if heap.len() < k || diff.abs() <= heap.peek().unwrap().dist {
                    self.knn_node(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Up to `k_max` points within `radius` (inclusive), nearest first.
    pub fn ball_query(&self, query: &Point3, radius: f64, k_max: usize) -> Result<BallQuery> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        if k_max == 0 {
            return Err(Error::KOutOfRange {
                k: 0,
                available: self.len(),
            });
        }
        let mut found = Vec::new();
        self.range_node(0, query, radius, &mut found);
        found.sort_unstable();
        Ok(pad_region(found, k_max))
    }

    /// Every point within `radius` of `query`, ascending by (distance, index).
    pub fn range_query(&self, query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut found = Vec::new();
        self.range_node(0, query, radius, &mut found);
        found.sort_unstable();
        found.into_iter().map(|c| (c.index, c.dist)).collect()
    }

    fn range_node(&self, node: usize, q: &Point3, radius: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let dist = dist2(q, &self.coords[i]).sqrt();
                    if dist <= radius {
                        out.push(Candidate { dist, index: i });
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
                if diff <= radius {
                    self.range_node(left, q, radius, out);
                }
                if -diff <= radius {
                    self.range_node(right, q, radius, out);
                }
            }
        }
    }
}

fn pad_region(mut found: Vec<Candidate>, k_max: usize) -> BallQuery {
    if found.is_empty() {
        return BallQuery::Empty;
    }
    found.truncate(k_max);
    let padded = k_max - found.len();
    let first = found[0];
    let mut indices = Vec::with_capacity(k_max);
    let mut distances = Vec::with_capacity(k_max);
    for _ in 0..=padded {
        indices.push(first.index);
        distances.push(first.dist);
    }
    for c in &found[1..] {
        indices.push(c.index);
        distances.push(c.dist);
    }
    BallQuery::Region {
        neighborhood: Neighborhood::new_unchecked(None, indices, distances),
        padded,
    }
}

fn build_node(coords: &[Point3], perm: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut perm[start..end];
    let axis = widest_axis(coords, slice);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a][axis]
            .total_cmp(&coords[b][axis])
            .then(a.cmp(&b))
    });
    let value = coords[slice[mid]][axis];
    // Points left of `mid` are <= value, points from `mid` on are >= value.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(coords, perm, start, start + mid, nodes);
    let right = build_node(coords, perm, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(coords: &[Point3], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for a in 0..3 {
            lo[a] = lo[a].min(coords[i][a]);
            hi[a] = hi[a].max(coords[i][a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap()
}

/// Linear-scan KNN with the same ordering contract as [`KdIndex::knn_query`].
pub fn brute_force_knn(coords: &[Point3], query: &Point3, k: usize, exclude: Option<usize>) -> Result<Neighborhood> {
    let available = coords.len() - usize::from(exclude.is_some_and(|e| e < coords.len()));
    if k == 0 || k > available {
        return Err(Error::KOutOfRange { k, available });
    }
    let mut all: Vec<Candidate> = coords
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, c)| Candidate {
            dist: dist2(query, c).sqrt(),
            index: i,
        })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    let (indices, distances) = all.iter().map(|c| (c.index, c.dist)).unzip();
    Ok(Neighborhood::new_unchecked(None, indices, distances))
}

/// Linear-scan ball query with the same padding rule as [`KdIndex::ball_query`].
pub fn brute_force_ball(coords: &[Point3], query: &Point3, radius: f64, k_max: usize) -> Result<BallQuery> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidRadius(radius));
    }
    if k_max == 0 {
        return Err(Error::KOutOfRange {
            k: 0,
            available: coords.len(),
        });
    }
    let mut found: Vec<Candidate> = coords
        .iter()
        .enumerate()
        .map(|(i, c)| Candidate {
            dist: dist2(query, c).sqrt(),
            index: i,
        })
        .filter(|c| c.dist <= radius)
        .collect();
    found.sort_unstable();
    Ok(pad_region(found, k_max))
}
