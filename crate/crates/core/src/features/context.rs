//! Per-point local context vectors, the encoder inputs.
//!
//! Geometric layout (`GEOMETRIC_DIM` = 75), all built from positions only
//! and invariant to rigid motion of the cloud:
//!
//! | range   | content                                                        |
//! |---------|----------------------------------------------------------------|
//! | 0..48   | k = 16 neighbor offsets in the local frame, nearest first, / 0.1 m |
//! | 48..51  | k-neighborhood covariance eigenvalues (descending), / (0.1 m)² |
//! | 51..75  | 4 radii × [ball eigenvalues / r², normal and tangential centroid offset / r, normal agreement] |
//!
//! The local frame is the covariance eigenbasis: the normal is the least
//! eigenvector oriented away from the centroid of the widest ball, the first
//! axis is the principal eigenvector with the sign of its third moment, and
//! the second completes a right-handed frame.
//!
//! Visual layout (`VISUAL_DIM` = 15), built from colors, with positions used
//! only to find neighbors. Colors are mapped from `[0, 1]` to `[-1, 1]`:
//!
//! | range  | content                                                         |
//! |--------|-----------------------------------------------------------------|
//! | 0..3   | center color                                                    |
//! | 3..12  | mean color of neighbors ranked 1–5, 6–10 and 11–16 by distance   |
//! | 12..15 | per-channel standard deviation of the 16 neighbor colors        |

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::Modality;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};

pub const DEFAULT_CONTEXT_K: usize = 16;
pub const GEOMETRIC_DIM: usize = 75;
pub const VISUAL_DIM: usize = 15;

/// Offset of the k-neighborhood eigenvalues inside a geometric context.
pub const GEOMETRIC_EIGEN_OFFSET: usize = 48;
/// Length scale (meters) dividing offsets; eigenvalues divide by its square.
pub const GEOMETRIC_SCALE: f64 = 0.1;
/// Ball radii (meters) of the multi-scale shape statistics.
pub const CONTEXT_RADII: [f64; 4] = [0.15, 0.3, 0.6, 1.2];

const RING_BOUNDS: [(usize, usize); 3] = [(0, 5), (5, 10), (10, 16)];

pub fn context_dim(modality: Modality) -> usize {
    match modality {
        Modality::Visual => VISUAL_DIM,
        Modality::Geometric => GEOMETRIC_DIM,
    }
}

/// One context row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Contexts {
    pub modality: Modality,
    pub data: DMatrix<f64>,
}

impl Contexts {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn select(&self, rows: &[usize]) -> Contexts {
        Contexts {
            modality: self.modality,
            data: self.data.select_rows(rows.iter()),
        }
    }
}

/// Builds the local context of every point. The k-neighborhood currently
/// requires `k = 16` for the fixed layout above.
pub fn build_context(cloud: &PointCloud, modality: Modality, k: usize) -> Result<Contexts> {
    if k != DEFAULT_CONTEXT_K {
        return Err(Error::param(format!(
            "context layout is defined for k = {DEFAULT_CONTEXT_K}, got {k}"
        )));
    }
    if cloud.len() < k + 1 {
        return Err(Error::param(format!(
            "cloud has {} points; context needs at least {}",
            cloud.len(),
            k + 1
        )));
    }
    if modality == Modality::Visual && cloud.colors.is_none() {
        return Err(Error::Input(
            "visual context requires a colored point cloud".into(),
        ));
    }
    let tree = KdTree::new(&cloud.positions)?;
    let neighborhoods: Vec<Vec<usize>> = cloud
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| neighbors_excluding_self(&tree, p, i, k))
        .collect();

    let dim = context_dim(modality);
    let mut data = DMatrix::zeros(cloud.len(), dim);
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        let row = match modality {
            Modality::Geometric => geometric_row(cloud, &tree, i, nbrs),
            Modality::Visual => visual_row(cloud, i, nbrs),
        };
        for (c, v) in row.into_iter().enumerate() {
            data[(i, c)] = v;
        }
    }
    Ok(Contexts { modality, data })
}

fn neighbors_excluding_self(tree: &KdTree, p: &Vector3<f64>, me: usize, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tree
        .knn(p.as_slice(), k + 1)
        .into_iter()
        .map(|n| n.index)
        .collect();
    match out.iter().position(|&j| j == me) {
        Some(pos) => {
            out.remove(pos);
        }
        None => {
            out.pop();
        }
    }
    out
}

fn covariance_about(points: impl Iterator<Item = Vector3<f64>>) -> Option<(Vector3<f64>, Matrix3<f64>, usize)> {
    let pts: Vec<Vector3<f64>> = points.collect();
    if pts.is_empty() {
        return None;
    }
    let (mean, cov) = crate::geometry::normals_covariance(&pts);
    Some((mean, cov, pts.len()))
}

/// Count, sum and upper-triangle second moments of a set of offsets.
#[derive(Debug, Clone, Copy, Default)]
struct BallMoments {
    count: usize,
    sum: Vector3<f64>,
    outer: [f64; 6],
}

impl BallMoments {
    fn add(&mut self, o: &Vector3<f64>) {
        self.count += 1;
        self.sum += o;
        let s = &mut self.outer;
        s[0] += o.x * o.x;
        s[1] += o.x * o.y;
        s[2] += o.x * o.z;
        s[3] += o.y * o.y;
        s[4] += o.y * o.z;
        s[5] += o.z * o.z;
    }

    fn merge(&mut self, other: &BallMoments) {
        self.count += other.count;
        self.sum += other.sum;
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += b;
        }
    }

    fn mean(&self) -> Vector3<f64> {
        self.sum / self.count.max(1) as f64
    }

    /// Population covariance. Offsets are relative to the ball center and at
    /// most a few meters long, so the one-pass form loses nothing that matters.
    fn covariance(&self) -> Matrix3<f64> {
        let n = self.count.max(1) as f64;
        let s = self.outer.map(|v| v / n);
        let m = self.mean();
        Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]) - m * m.transpose()
    }
}

fn geometric_row(cloud: &PointCloud, tree: &KdTree, i: usize, nbrs: &[usize]) -> Vec<f64> {
    let x = cloud.positions[i];
    let offsets: Vec<Vector3<f64>> = nbrs.iter().map(|&j| cloud.positions[j] - x).collect();

    // covariance of the neighborhood including the center, in relative coordinates
    let (_, cov, _) = covariance_about(
        std::iter::once(Vector3::zeros()).chain(offsets.iter().copied()),
    )
    .expect("neighborhood is non-empty");
    let (values, vectors) = crate::geometry::sorted_eigen(&cov);

    // raw moments of the ball offsets, bucketed by the smallest radius that
    // holds each point and accumulated outward, from one query
    let mut moments = [BallMoments::default(); CONTEXT_RADII.len()];
    let radii2 = CONTEXT_RADII.map(|r| r * r);
    let widest = *CONTEXT_RADII.last().expect("radii non-empty");
    tree.for_each_within(x.as_slice(), widest, |j| {
        let o = cloud.positions[j] - x;
        let d2 = o.norm_squared();
        let b = radii2.iter().position(|&r2| d2 <= r2).unwrap_or(radii2.len() - 1);
        moments[b].add(&o);
    });
    for b in 1..moments.len() {
        let inner = moments[b - 1];
        moments[b].merge(&inner);
    }
    let wide_centroid = moments[moments.len() - 1].mean();

    let mut normal: Vector3<f64> = vectors.column(2).into_owned();
    if normal.dot(&wide_centroid) > 0.0 {
        normal = -normal;
    }
    let mut axis1: Vector3<f64> = vectors.column(0).into_owned();
    let skew: f64 = offsets.iter().map(|o| o.dot(&axis1).powi(3)).sum();
    if skew < 0.0 {
        axis1 = -axis1;
    }
    let axis2 = normal.cross(&axis1);

    let mut row = Vec::with_capacity(GEOMETRIC_DIM);
    for o in &offsets {
        row.push(o.dot(&axis1) / GEOMETRIC_SCALE);
        row.push(o.dot(&axis2) / GEOMETRIC_SCALE);
        row.push(o.dot(&normal) / GEOMETRIC_SCALE);
    }
    let s2 = GEOMETRIC_SCALE * GEOMETRIC_SCALE;
    row.extend(values.iter().map(|v| v / s2));

    for (&r, m) in CONTEXT_RADII.iter().zip(&moments) {
        if m.count >= 3 {
            let centroid = m.mean();
            let (vals, vecs) = crate::geometry::sorted_eigen(&m.covariance());
            for v in vals.iter() {
                row.push(v.max(0.0) / (r * r));
            }
            let along = centroid.dot(&normal);
            let tangential = (centroid - normal * along).norm();
            row.push(along / r);
            row.push(tangential / r);
            row.push(vecs.column(2).dot(&normal).abs());
        } else {
            row.extend([0.0; 6]);
        }
    }
    debug_assert_eq!(row.len(), GEOMETRIC_DIM);
    row
}

fn visual_row(cloud: &PointCloud, i: usize, nbrs: &[usize]) -> Vec<f64> {
    let colors = cloud.colors.as_ref().expect("checked by caller");
    let centered = |c: &Vector3<f64>| c * 2.0 - Vector3::repeat(1.0);
    let mut row = Vec::with_capacity(VISUAL_DIM);
    row.extend(centered(&colors[i]).iter());
    for &(a, b) in &RING_BOUNDS {
        let ring = &nbrs[a..b];
        let mean: Vector3<f64> =
            ring.iter().map(|&j| centered(&colors[j])).sum::<Vector3<f64>>() / ring.len() as f64;
        row.extend(mean.iter());
    }
    // shifted by the first neighbor so that uniform colors give exactly zero
    let n = nbrs.len() as f64;
    let origin = centered(&colors[nbrs[0]]);
    for c in 0..3 {
        let (mut s1, mut s2) = (0.0, 0.0);
        for &j in nbrs {
            let d = centered(&colors[j])[c] - origin[c];
            s1 += d;
            s2 += d * d;
        }
        let var = (s2 / n - (s1 / n).powi(2)).max(0.0);
        row.push(var.sqrt());
    }
    debug_assert_eq!(row.len(), VISUAL_DIM);
    row
}
