//! A simplified fast point feature histogram.
//!
//! For every neighbor pair the Darboux-frame angles (α, φ, θ) are binned
//! into 11 bins each. The per-point histograms (each third normalized to
//! unit mass) are then re-accumulated once with inverse-distance weights
//! over the same neighborhood, and the 33-bin result is L2-normalized.

use nalgebra::{DMatrix, Vector3};

use crate::autodiff::normalize_rows;
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};

pub const FPFH_BINS: usize = 11;
pub const FPFH_DIM: usize = 3 * FPFH_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct FpfhOutput {
    /// One unit-norm (or all-zero) 33-bin row per point.
    pub descriptors: DMatrix<f64>,
    /// Points whose whole neighborhood was unusable; their rows are zero.
    pub degenerate: Vec<usize>,
}

fn valid_normal(n: &Vector3<f64>) -> bool {
    n.iter().all(|v| v.is_finite()) && (n.norm() - 1.0).abs() < 1e-3
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let t = ((value - lo) / (hi - lo) * FPFH_BINS as f64).floor();
    (t.max(0.0) as usize).min(FPFH_BINS - 1)
}

/// Darboux-frame angles between two oriented points, or `None` when the
/// pair is coincident.
fn pair_features(
    p: &Vector3<f64>,
    np: &Vector3<f64>,
    q: &Vector3<f64>,
    nq: &Vector3<f64>,
) -> Option<(f64, f64, f64)> {
    let d = q - p;
    let dist = d.norm();
    if dist <= 0.0 {
        return None;
    }
    let dn = d / dist;
    // the source is the point whose normal makes the smaller angle with the line
    let (u, nt, dir) = if np.dot(&dn).abs() >= nq.dot(&dn).abs() {
        (*np, *nq, dn)
    } else {
        (*nq, *np, -dn)
    };
    let v = u.cross(&dir);
    let vn = v.norm();
    if vn < 1e-12 {
        // the line is parallel to the source normal; any perpendicular frame works
        let phi = u.dot(&dir);
        return Some((0.0, phi, 0.0));
    }
    let v = v / vn;
    let w = u.cross(&v);
    let alpha = v.dot(&nt);
    let phi = u.dot(&dir);
    let theta = w.dot(&nt).atan2(u.dot(&nt));
    Some((alpha, phi, theta))
}

pub fn fpfh_descriptor(cloud: &PointCloud, k: usize) -> Result<FpfhOutput> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::Input("FPFH requires normals".into()))?;
    if k == 0 || cloud.len() < k + 1 {
        return Err(Error::param(format!(
            "FPFH with k = {k} needs more than k points, cloud has {}",
            cloud.len()
        )));
    }
    let tree = KdTree::new(&cloud.positions)?;
    let n = cloud.len();
    let neighborhoods: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            tree.knn(cloud.positions[i].as_slice(), k + 1)
                .into_iter()
                .filter(|nb| nb.index != i)
                .take(k)
                .map(|nb| (nb.index, nb.distance))
                .collect()
        })
        .collect();

    let mut spfh = DMatrix::zeros(n, FPFH_DIM);
    let mut has_hist = vec![false; n];
    for i in 0..n {
        if !valid_normal(&normals[i]) {
            continue;
        }
        let mut count = 0usize;
        for &(j, _) in &neighborhoods[i] {
            if !valid_normal(&normals[j]) {
                continue;
            }
            let Some((alpha, phi, theta)) = pair_features(
                &cloud.positions[i],
                &normals[i],
                &cloud.positions[j],
                &normals[j],
            ) else {
                continue;
            };
            spfh[(i, bin(alpha, -1.0, 1.0))] += 1.0;
            spfh[(i, FPFH_BINS + bin(phi, -1.0, 1.0))] += 1.0;
            spfh[(i, 2 * FPFH_BINS + bin(theta, -std::f64::consts::PI, std::f64::consts::PI))] += 1.0;
            count += 1;
        }
        if count > 0 {
            for c in 0..FPFH_DIM {
                spfh[(i, c)] /= count as f64;
            }
            has_hist[i] = true;
        }
    }

    let mut fpfh = DMatrix::zeros(n, FPFH_DIM);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let mut row = spfh.row(i).into_owned();
        let mut any = has_hist[i];
        let usable: Vec<&(usize, f64)> = neighborhoods[i]
            .iter()
            .filter(|(j, d)| has_hist[*j] && *d > 0.0)
            .collect();
        if !usable.is_empty() {
            let scale = 1.0 / usable.len() as f64;
            for &&(j, d) in &usable {
                row += spfh.row(j) * (scale / d);
            }
            any = true;
        }
        if !any {
            degenerate.push(i);
        }
        fpfh.set_row(i, &row);
    }
    Ok(FpfhOutput {
        descriptors: normalize_rows(&fpfh),
        degenerate,
    })
}
