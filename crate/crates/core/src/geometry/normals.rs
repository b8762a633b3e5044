use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalDiagnostics {
    /// Points whose neighborhood covariance had rank < 2. Their normal is the
    /// unit direction toward the viewpoint.
    pub degenerate: Vec<usize>,
}

/// Per-point normal from the least eigenvector of the k-neighborhood
/// covariance (the point itself included), flipped to face `viewpoint`.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: Vector3<f64>,
) -> Result<(PointCloud, NormalDiagnostics)> {
    if k < 3 {
        return Err(Error::param(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(Error::param(format!(
            "cloud has {} points, fewer than k = {k}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.positions)?;
    let mut diagnostics = NormalDiagnostics::default();
    let mut normals = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.positions.iter().enumerate() {
        let nbrs = tree.knn(p.as_slice(), k);
        let pts: Vec<Vector3<f64>> = nbrs.iter().map(|n| cloud.positions[n.index]).collect();
        let to_view = viewpoint - p;
        let fallback = if to_view.norm() > 0.0 {
            to_view.normalize()
        } else {
            Vector3::z()
        };
        match least_eigenvector(&pts) {
            Some(mut n) => {
                if n.dot(&to_view) < 0.0 {
                    n = -n;
                }
                normals.push(n);
            }
            None => {
                diagnostics.degenerate.push(i);
                normals.push(fallback);
            }
        }
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok((out, diagnostics))
}

pub(crate) fn covariance(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len().max(1) as f64;
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

/// Eigen-decomposition sorted descending: `(values, vectors as columns)`.
pub(crate) fn sorted_eigen(cov: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector3::new(
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    let vectors = Matrix3::from_columns(&[
        eig.eigenvectors.column(idx[0]).into_owned(),
        eig.eigenvectors.column(idx[1]).into_owned(),
        eig.eigenvectors.column(idx[2]).into_owned(),
    ]);
    (values, vectors)
}

/// Unit least eigenvector, or `None` when the covariance has rank < 2.
fn least_eigenvector(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let (_, cov) = covariance(points);
    let (values, vectors) = sorted_eigen(&cov);
    if !(values[0] > 0.0) || values[1] <= 1e-12 * values[0] {
        return None;
    }
    Some(vectors.column(2).normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_normals_face_viewpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = (0..200)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let (out, diag) = estimate_normals(&PointCloud::new(pts), 10, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(diag.degenerate.is_empty());
        for n in out.normals.unwrap() {
            assert!((n - Vector3::z()).norm() < 1e-6);
        }
    }

    #[test]
    fn sphere_normals_point_inward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vector3<f64>> = (0..2000)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                v.normalize()
            })
            .collect();
        let (out, _) = estimate_normals(&PointCloud::new(pts.clone()), 12, Vector3::zeros()).unwrap();
        for (p, n) in pts.iter().zip(out.normals.unwrap()) {
            // analytic normal is the radial direction; inward faces the origin
            assert!(n.dot(p) < -0.99, "n·x̂ = {}", n.dot(p));
        }
    }

    #[test]
    fn collinear_points_flagged() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let view = Vector3::new(0.0, 0.0, 5.0);
        let (out, diag) = estimate_normals(&PointCloud::new(pts.clone()), 3, view).unwrap();
        assert_eq!(diag.degenerate, vec![0, 1, 2]);
        let ns = out.normals.unwrap();
        assert!((ns[0] - (view - pts[0]).normalize()).norm() < 1e-12);
    }

    #[test]
    fn rejects_small_k() {
        let cloud = PointCloud::new(vec![Vector3::zeros(); 5]);
        assert!(estimate_normals(&cloud, 2, Vector3::zeros()).is_err());
        assert!(estimate_normals(&cloud, 6, Vector3::zeros()).is_err());
    }
}
