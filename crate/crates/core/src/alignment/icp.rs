use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{procrustes_points, FitResult};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcpVariant {
    PointToPoint,
    PointToPlane,
}

/// Iterative closest point from `init`. Each iteration matches every point
/// of `p0` to its nearest neighbor in `p1` and refits; iteration stops when
/// the mean squared match distance changes by less than `tol` relative, or
/// after `max_iters` matchings. The per-iteration energies are returned as
/// the energy trace.
pub fn icp(
    p0: &PointCloud,
    p1: &PointCloud,
    variant: IcpVariant,
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<FitResult> {
    p0.require_non_empty("source cloud")?;
    p1.require_non_empty("target cloud")?;
    if max_iters == 0 {
        return Err(Error::param("ICP needs at least one iteration"));
    }
    let normals = match variant {
        IcpVariant::PointToPlane => Some(
            p1.normals
                .as_ref()
                .ok_or_else(|| Error::Input("point-to-plane ICP requires normals on the target".into()))?,
        ),
        IcpVariant::PointToPoint => None,
    };
    let tree = KdTree::new(&p1.positions)?;
    let mut current = *init;
    let mut trace = Vec::new();
    let mut matches = vec![0usize; p0.len()];
    let mut diagnostics = Vec::new();
    let mut prev = f64::INFINITY;

    for _ in 0..max_iters {
        let moved: Vec<Vector3<f64>> = p0.positions.iter().map(|x| current.apply_point(x)).collect();
        let mut energy = 0.0;
        for (i, x) in moved.iter().enumerate() {
            let nn = tree.nearest(x.as_slice()).expect("non-empty tree");
            matches[i] = nn.index;
            energy += nn.distance * nn.distance;
        }
        energy /= p0.len() as f64;
        trace.push(energy);
        if energy == 0.0 || (prev.is_finite() && (prev - energy).abs() <= tol * prev) {
            break;
        }
        prev = energy;

        let dst: Vec<Vector3<f64>> = matches.iter().map(|&j| p1.positions[j]).collect();
        let next = match normals {
            None => procrustes_points(&p0.positions, &dst, &vec![1.0; p0.len()]),
            Some(ns) => point_to_plane_step(&moved, &dst, &matches, ns).map(|d| d.compose(&current)),
        };
        match next {
            Ok(t) => current = t,
            Err(e) => {
                diagnostics.push(format!("stopped on degenerate update: {e}"));
                break;
            }
        }
    }

    // final energy under the returned transform and its own matches
    let mut sum = 0.0;
    for x in &p0.positions {
        sum += tree.nearest(current.apply_point(x).as_slice()).expect("non-empty tree").distance;
    }
    let n = p0.len() as f64;
    let mut fit = FitResult::new(current, sum / (n * n), false);
    fit.iterations = Some(trace.len());
    fit.energy_trace = trace;
    fit.diagnostics = diagnostics;
    Ok(fit)
}

/// One Gauss-Newton step of `Σ (nᵀ(x + ω×x + v − y))²` around the
/// already-moved points, returned as the left increment.
fn point_to_plane_step(
    moved: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    matches: &[usize],
    normals: &[Vector3<f64>],
) -> Result<RigidTransform> {
    let mut a = Matrix6::zeros();
    let mut b = Vector6::zeros();
    for ((x, y), &j) in moved.iter().zip(dst).zip(matches) {
        let n = normals[j];
        let cx = x.cross(&n);
        let row = Vector6::new(cx.x, cx.y, cx.z, n.x, n.y, n.z);
        let r = n.dot(&(x - y));
        a += row * row.transpose();
        b += row * r;
    }
    let delta = a
        .cholesky()
        .map(|ch| ch.solve(&(-b)))
        .ok_or_else(|| Error::Degenerate("point-to-plane system is singular".into()))?;
    Ok(RigidTransform::from_rotation_vector(
        Vector3::new(delta[0], delta[1], delta[2]),
        Vector3::new(delta[3], delta[4], delta[5]),
    ))
}
