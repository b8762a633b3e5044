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
pub struct RandomizedConfig {
    pub n_subsets: usize,
    pub subset_size: usize,
    /// Rounds of refitting the best candidate on its lowest-residual half.
    pub refine_rounds: usize,
    pub seed: u64,
}

impl Default for RandomizedConfig {
    fn default() -> Self {
        Self {
            n_subsets: 100,
            subset_size: 8,
            refine_rounds: 3,
            seed: 0,
        }
    }
}

/// Fits weight-proportional random subsets and keeps the candidate with the
/// lowest weighted energy over the whole set. The full-set fit is always a
/// candidate, so the result is never worse than a single weighted fit.
pub fn randomized_fit(
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    cfg: &RandomizedConfig,
) -> Result<FitResult> {
    if cfg.subset_size < 3 {
        return Err(Error::param("subset size must be at least 3"));
    }
    if c.len() < cfg.subset_size {
        return Err(Error::InsufficientData {
            needed: cfg.subset_size,
            got: c.len(),
        });
    }
    let src: Vec<Vector3<f64>> = c.iter().map(|k| p0.positions[k.p]).collect();
    let dst: Vec<Vector3<f64>> = c.iter().map(|k| p1.positions[k.q]).collect();
    let weights = c.weights();
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    let score = |t: &RigidTransform| residual_energy(c, p0, p1, t, true);

    let mut best: Option<(f64, RigidTransform)> = None;
    let consider = |t: RigidTransform, best: &mut Option<(f64, RigidTransform)>| -> Result<()> {
        let e = score(&t)?;
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            *best = Some((e, t));
        }
        Ok(())
    };
    let mut failures = 0usize;
    let mut last_error = None;

    match procrustes_points(&src, &dst, &weights) {
        Ok(t) => consider(t, &mut best)?,
        Err(e) => {
            failures += 1;
            last_error = Some(e);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.n_subsets {
        let picks: Vec<usize> = if positive >= cfg.subset_size {
            index::sample_weighted(&mut rng, c.len(), |i| weights[i], cfg.subset_size)
                .map_err(|e| Error::param(format!("weighted sampling failed: {e}")))?
                .into_vec()
        } else {
            index::sample(&mut rng, c.len(), cfg.subset_size).into_vec()
        };
        let s: Vec<Vector3<f64>> = picks.iter().map(|&i| src[i]).collect();
        let d: Vec<Vector3<f64>> = picks.iter().map(|&i| dst[i]).collect();
        let w: Vec<f64> = picks.iter().map(|&i| weights[i].max(1e-12)).collect();
        match procrustes_points(&s, &d, &w) {
            Ok(t) => consider(t, &mut best)?,
            Err(e) => {
                failures += 1;
                last_error = Some(e);
            }
        }
    }

    let Some((_, mut current)) = best else {
        return Err(last_error.unwrap_or_else(|| Error::Degenerate("no candidate fit".into())));
    };
    for _ in 0..cfg.refine_rounds {
        let mut order: Vec<usize> = (0..c.len()).collect();
        let resid: Vec<f64> = (0..c.len())
            .map(|i| (dst[i] - current.apply_point(&src[i])).norm())
            .collect();
        order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
        order.truncate((c.len() / 2).max(3));
        let s: Vec<Vector3<f64>> = order.iter().map(|&i| src[i]).collect();
        let d: Vec<Vector3<f64>> = order.iter().map(|&i| dst[i]).collect();
        let w: Vec<f64> = order.iter().map(|&i| weights[i].max(1e-12)).collect();
        match procrustes_points(&s, &d, &w) {
            Ok(t) => {
                consider(t, &mut best)?;
                current = t;
            }
            Err(_) => break,
        }
    }

    let (energy, transform) = best.expect("at least one candidate");
    let mut fit = FitResult::new(transform, energy, true);
    if failures > 0 {
        fit.diagnostics.push(format!("{failures} degenerate candidate fits skipped"));
    }
    Ok(fit)
}
