use nalgebra::{Matrix3, Vector3};

use super::FitResult;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

/// A fit is degenerate when the cross-covariance's second singular value
/// falls below this fraction of its largest.
pub const DEGENERACY_RATIO: f64 = 1e-10;

fn check_indices(c: &CorrespondenceSet, p0: &PointCloud, p1: &PointCloud) -> Result<()> {
    for k in c.iter() {
        if k.p >= p0.len() || k.q >= p1.len() {
            return Err(Error::Input(format!(
                "correspondence ({}, {}) out of range for clouds of {} and {} points",
                k.p,
                k.q,
                p0.len(),
                p1.len()
            )));
        }
    }
    Ok(())
}

/// `(1/|C|) Σ (w/Σw) ‖x_q − T x_p‖`, with unit weights when `use_weights`
/// is off.
pub fn residual_energy(
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    t: &RigidTransform,
    use_weights: bool,
) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    check_indices(c, p0, p1)?;
    let weight = |w: f64| if use_weights { w } else { 1.0 };
    let total: f64 = c.iter().map(|k| weight(k.weight)).sum();
    if total <= 0.0 {
        return Err(Error::param("correspondence weights sum to zero"));
    }
    let sum: f64 = c
        .iter()
        .map(|k| weight(k.weight) / total * (p1.positions[k.q] - t.apply_point(&p0.positions[k.p])).norm())
        .sum();
    Ok(sum / c.len() as f64)
}

/// Weighted least-squares rigid fit mapping `src[i]` onto `dst[i]`.
pub fn procrustes_points(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> Result<RigidTransform> {
    assert_eq!(src.len(), dst.len());
    assert_eq!(src.len(), weights.len());
    if src.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: src.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::param("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("correspondence weights sum to zero"));
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        cs += s * (w / total);
        cd += d * (w / total);
    }
    let mut h = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        h += (s - cs) * (d - cd).transpose() * (w / total);
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (s1, s2) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if !(s1 > 0.0) || s2 < DEGENERACY_RATIO * s1 {
        return Err(Error::Degenerate(format!(
            "correspondences are collinear or coincident (singular values {s1:e}, {s2:e})"
        )));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // flip the axis of the smallest singular value
    let mut flip = Matrix3::identity();
    flip[(order[2], order[2])] = d;
    let rotation = v * flip * u.transpose();
    let translation = cd - rotation * cs;
    Ok(RigidTransform::from_parts_unchecked(rotation, translation))
}

/// Closed-form minimizer of the weighted squared residuals; the reported
/// energy is the unsquared one of [`residual_energy`].
pub fn weighted_procrustes(
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    use_weights: bool,
) -> Result<FitResult> {
    check_indices(c, p0, p1)?;
    let src: Vec<Vector3<f64>> = c.iter().map(|k| p0.positions[k.p]).collect();
    let dst: Vec<Vector3<f64>> = c.iter().map(|k| p1.positions[k.q]).collect();
    let weights: Vec<f64> = c
        .iter()
        .map(|k| if use_weights { k.weight } else { 1.0 })
        .collect();
    let transform = procrustes_points(&src, &dst, &weights)?;
    let energy = residual_energy(c, p0, p1, &transform, use_weights)?;
    Ok(FitResult::new(transform, energy, use_weights))
}
