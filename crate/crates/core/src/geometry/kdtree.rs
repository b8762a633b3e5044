use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};

/// Anything that can be viewed as a fixed-dimension coordinate slice.
pub trait PointLike {
    fn coords(&self) -> &[f64];
}

impl PointLike for Vector3<f64> {
    fn coords(&self) -> &[f64] {
        self.as_slice()
    }
}

impl PointLike for DVector<f64> {
    fn coords(&self) -> &[f64] {
        self.as_slice()
    }
}

impl PointLike for Vec<f64> {
    fn coords(&self) -> &[f64] {
        self
    }
}

impl<const N: usize> PointLike for [f64; N] {
    fn coords(&self) -> &[f64] {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

const LEAF_SIZE: usize = 8;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

/// Exact k-d tree over points of any fixed dimension.
///
/// Queries return exact nearest neighbors ordered by `(distance, index)`, so
/// equal distances resolve to the lower reference index.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Point coordinates permuted into tree order.
    data: Vec<f64>,
    /// Tree-order position → original index.
    order: Vec<usize>,
    nodes: Vec<Node>,
    /// Per node: `dim` lower bounds followed by `dim` upper bounds.
    bounds: Vec<f64>,
}

impl KdTree {
    pub fn new<P: PointLike>(points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.coords().len()).unwrap_or(0);
        if let Some(i) = points.iter().position(|p| p.coords().len() != dim) {
            return Err(Error::param(format!(
                "point {i} has dimension {} but expected {dim}",
                points[i].coords().len()
            )));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            flat.extend_from_slice(p.coords());
        }
        Ok(Self::from_flat(flat, dim))
    }

    /// Builds from row-major coordinates with `dim` values per point.
    pub fn from_flat(flat: Vec<f64>, dim: usize) -> Self {
        let n = flat.len().checked_div(dim).unwrap_or(0);
        let mut order: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            dim,
            data: Vec::new(),
            order: Vec::new(),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if n > 0 {
            tree.build(&flat, &mut order, 0, n);
        }
        let mut data = Vec::with_capacity(flat.len());
        for &i in &order {
            data.extend_from_slice(&flat[i * dim..(i + 1) * dim]);
        }
        tree.data = data;
        tree.order = order;
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn build(&mut self, flat: &[f64], order: &mut [usize], start: usize, end: usize) -> u32 {
        let dim = self.dim;
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            left: NO_CHILD,
            right: NO_CHILD,
        });
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &order[start..end] {
            let p = &flat[i * dim..(i + 1) * dim];
            for d in 0..dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);

        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] <= lo[axis] {
            // all points coincide
            return id;
        }
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            flat[a * dim + axis]
                .total_cmp(&flat[b * dim + axis])
                .then(a.cmp(&b))
        });
        let left = self.build(flat, order, start, mid);
        let right = self.build(flat, order, mid, end);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Squared distance from `q` to the node's bounding box. Summed in axis
    /// order so it never exceeds the squared distance of a contained point.
    fn box_dist2(&self, node: usize, q: &[f64]) -> f64 {
        let base = node * 2 * self.dim;
        let lo = &self.bounds[base..base + self.dim];
        let hi = &self.bounds[base + self.dim..base + 2 * self.dim];
        let mut s = 0.0;
        for d in 0..self.dim {
            let g = if q[d] < lo[d] {
                q[d] - lo[d]
            } else if q[d] > hi[d] {
                q[d] - hi[d]
            } else {
                0.0
            };
            s += g * g;
        }
        s
    }

    /// Exact `k` nearest neighbors of `query`, sorted ascending by distance
    /// with ties broken by lower index.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut best);
        best.into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect()
    }

    fn knn_visit(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for slot in n.start as usize..n.end as usize {
                let limit = if best.len() == k {
                    best[k - 1].0
                } else {
                    f64::INFINITY
                };
                let Some(d2) = dist2_bounded(self.point(slot), q, limit) else {
                    continue;
                };
                let cand = (d2, self.order[slot]);
                if best.len() == k {
                    let worst = best[k - 1];
                    if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                        continue;
                    }
                    best.pop();
                }
                let pos = best
                    .partition_point(|&(d, i)| d < cand.0 || (d == cand.0 && i < cand.1));
                best.insert(pos, cand);
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = self.box_dist2(l, q);
        let dr = self.box_dist2(r, q);
        let (first, df, second, ds) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
        for (child, bound) in [(first, df), (second, ds)] {
            if best.len() == k && bound > best[k - 1].0 {
                continue;
            }
            self.knn_visit(child, q, k, best);
        }
    }

    /// Nearest neighbor; `None` only for an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// All points within `radius` (inclusive), sorted by index.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f` with the index of every point within `radius` (inclusive),
    /// in tree order. The order is fixed for a given tree and query.
    pub fn for_each_within(&self, query: &[f64], radius: f64, mut f: impl FnMut(usize)) {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if !self.is_empty() {
            self.radius_visit(0, query, radius * radius, &mut f);
        }
    }

    fn radius_visit(&self, node: usize, q: &[f64], r2: f64, f: &mut impl FnMut(usize)) {
        if self.box_dist2(node, q) > r2 {
            return;
        }
        let n = &self.nodes[node];
        let slots = n.start as usize..n.end as usize;
        if self.box_far2(node, q) <= r2 {
            slots.for_each(|slot| f(self.order[slot]));
            return;
        }
        if n.left == NO_CHILD {
            for slot in slots {
                if dist2_bounded(self.point(slot), q, r2).is_some_and(|d| d <= r2) {
                    f(self.order[slot]);
                }
            }
            return;
        }
        self.radius_visit(n.left as usize, q, r2, f);
        self.radius_visit(n.right as usize, q, r2, f);
    }

    /// Squared distance from `q` to the farthest corner of the node's box. No
    /// contained point is farther, under the same rounding as `dist2_bounded`.
    fn box_far2(&self, node: usize, q: &[f64]) -> f64 {
        let base = node * 2 * self.dim;
        let lo = &self.bounds[base..base + self.dim];
        let hi = &self.bounds[base + self.dim..base + 2 * self.dim];
        let mut s = 0.0;
        for d in 0..self.dim {
            let g = (q[d] - lo[d]).max(hi[d] - q[d]);
            s += g * g;
        }
        s
    }
}

/// Squared distance, summed in axis order. Returns `None` once a partial
/// sum strictly exceeds `limit`.
#[inline]
fn dist2_bounded(p: &[f64], q: &[f64], limit: f64) -> Option<f64> {
    let mut s = 0.0;
    for (chunk_p, chunk_q) in p.chunks(8).zip(q.chunks(8)) {
        for (a, b) in chunk_p.iter().zip(chunk_q) {
            let d = a - b;
            s += d * d;
        }
        if s > limit {
            return None;
        }
    }
    Some(s)
}

/// Exact k-nearest-neighbor search of every query against `reference`.
pub fn knn_search<P: PointLike>(query: &[P], reference: &[P], k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if reference.len() < k {
        return Err(Error::param(format!(
            "k = {k} exceeds reference size {}",
            reference.len()
        )));
    }
    let tree = KdTree::new(reference)?;
    query
        .iter()
        .enumerate()
        .map(|(i, q)| {
            if q.coords().len() != tree.dim() {
                Err(Error::param(format!(
                    "query {i} has dimension {} but reference has {}",
                    q.coords().len(),
                    tree.dim()
                )))
            } else {
                Ok(tree.knn(q.coords(), k))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(q: &[f64], reference: &[Vec<f64>], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<(f64, usize)> = reference
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut s = 0.0;
                for (a, b) in r.iter().zip(q) {
                    let d = a - b;
                    s += d * d;
                }
                (s, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect()
    }

    fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn self_query_is_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 100, 3);
        let res = knn_search(&pts[10..11], &pts, 1).unwrap();
        assert_eq!(res[0][0], Neighbor { index: 10, distance: 0.0 });
    }

    #[test]
    fn matches_brute_force_3d_and_32d() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for dim in [3, 32] {
            let reference = random_points(&mut rng, 200, dim);
            let queries = random_points(&mut rng, 50, dim);
            let got = knn_search(&queries, &reference, 2).unwrap();
            for (q, g) in queries.iter().zip(&got) {
                assert_eq!(g, &brute_knn(q, &reference, 2));
            }
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        let reference = vec![
            vec![1.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ];
        let got = knn_search(&[vec![0.0, 0.0, 0.0]], &reference, 3).unwrap();
        let idx: Vec<_> = got[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![3, 0, 1]);
    }

    #[test]
    fn duplicate_points_tie_break() {
        let reference = vec![vec![0.5, 0.5]; 30];
        let got = knn_search(&[vec![0.0, 0.0]], &reference, 4).unwrap();
        let idx: Vec<_> = got[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_larger_than_reference_is_error() {
        let reference = vec![vec![0.0; 3]; 2];
        assert!(matches!(
            knn_search(&reference, &reference, 3),
            Err(Error::Parameter(_))
        ));
        assert!(knn_search(&reference, &reference, 0).is_err());
    }

    #[test]
    fn radius_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 300, 3);
        let tree = KdTree::new(&pts).unwrap();
        let q = [0.1, -0.2, 0.3];
        let got = tree.within_radius(&q, 0.5);
        let want: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let s: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                s <= 0.25
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, want);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knn_agrees_with_scan(seed in any::<u64>(), n in 2usize..500, dim in prop::sample::select(vec![3usize, 32]), k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = k.min(n);
            let reference = random_points(&mut rng, n, dim);
            let queries = random_points(&mut rng, 10, dim);
            let got = knn_search(&queries, &reference, k).unwrap();
            for (q, g) in queries.iter().zip(&got) {
                prop_assert_eq!(g, &brute_knn(q, &reference, k));
            }
        }
    }
}
