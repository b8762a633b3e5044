use nalgebra::Vector3;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{procrustes_points, residual_energy, FitResult};
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub n_iters: usize,
    /// Inlier distance in meters.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_iters: 1000,
            inlier_threshold: 0.05,
            seed: 0,
        }
    }
}

fn inliers(src: &[Vector3<f64>], dst: &[Vector3<f64>], t: &RigidTransform, thr: f64) -> Vec<usize> {
    (0..src.len())
        .filter(|&i| (dst[i] - t.apply_point(&src[i])).norm() < thr)
        .collect()
}

fn refit(src: &[Vector3<f64>], dst: &[Vector3<f64>], idx: &[usize]) -> Result<RigidTransform> {
    let s: Vec<Vector3<f64>> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<Vector3<f64>> = idx.iter().map(|&i| dst[i]).collect();
    procrustes_points(&s, &d, &vec![1.0; idx.len()])
}

/// Three-point hypothesize-and-verify; the hypothesis with the most inliers
/// (first found on ties) is refit on its inliers with uniform weights.
pub fn ransac_fit(
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    cfg: &RansacConfig,
) -> Result<FitResult> {
    if c.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: c.len(),
        });
    }
    if !(cfg.inlier_threshold > 0.0) {
        return Err(Error::param("inlier threshold must be positive"));
    }
    let src: Vec<Vector3<f64>> = c.iter().map(|k| p0.positions[k.p]).collect();
    let dst: Vec<Vector3<f64>> = c.iter().map(|k| p1.positions[k.q]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Vec<usize>> = None;
    let mut degenerate = 0usize;
    for _ in 0..cfg.n_iters {
        let sample = index::sample(&mut rng, c.len(), 3).into_vec();
        let Ok(t) = refit(&src, &dst, &sample) else {
            degenerate += 1;
            continue;
        };
        let inl = inliers(&src, &dst, &t, cfg.inlier_threshold);
        if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
            best = Some(inl);
        }
    }
    let best = best.filter(|b| b.len() >= 3).ok_or_else(|| {
        Error::Degenerate(format!(
            "no RANSAC hypothesis reached 3 inliers ({degenerate} degenerate samples)"
        ))
    })?;
    let mut transform = refit(&src, &dst, &best)?;
    // one re-estimation on the refit's own inlier set
    let second = inliers(&src, &dst, &transform, cfg.inlier_threshold);
    let mut inlier_count = best.len();
    if second.len() >= best.len() {
        if let Ok(t) = refit(&src, &dst, &second) {
            transform = t;
            inlier_count = second.len();
        }
    }
    let energy = residual_energy(c, p0, p1, &transform, false)?;
    let mut fit = FitResult::new(transform, energy, false);
    fit.inlier_count = Some(inlier_count);
    if degenerate > 0 {
        fit.diagnostics.push(format!("{degenerate} degenerate samples skipped"));
    }
    Ok(fit)
}
