use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};

use crate::alignment::{weighted_procrustes, FitResult};
use crate::autodiff::{Tape, Var};
use crate::correspondence::{CorrespondenceSet, Side};
use crate::error::{Error, Result};
use crate::features::{forward_on_tape, TapeParams};
use crate::geometry::PointCloud;

/// Registration loss of one correspondence set with its gradient in the
/// correspondence weights.
#[derive(Debug, Clone)]
pub struct RegistrationLoss {
    pub value: f64,
    pub fit: FitResult,
    /// `dL/dw_i` in set order, including the change of the fitted transform.
    pub weight_gradient: Vec<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Evaluates the weighted mean residual at the weighted least-squares fit.
///
/// The fit depends on the weights, so the gradient adds the implicit term
/// `∂E/∂ξ · dξ/dw`, where `ξ` perturbs the fit on the left and `dξ/dw`
/// follows from the stationarity of the squared objective.
pub fn registration_loss_value(
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    use_weights: bool,
) -> Result<RegistrationLoss> {
    let fit = weighted_procrustes(c, p0, p1, use_weights)?;
    let t = fit.transform;
    let n = c.len();
    let w: Vec<f64> = if use_weights { c.weights() } else { vec![1.0; n] };
    let total: f64 = w.iter().sum();
    let z: Vec<Vector3<f64>> = c.iter().map(|k| t.apply_point(&p0.positions[k.p])).collect();
    let r: Vec<Vector3<f64>> = c.iter().zip(&z).map(|(k, z)| p1.positions[k.q] - z).collect();
    let a: Vec<f64> = r.iter().map(|r| r.norm()).collect();
    let value = w.iter().zip(&a).map(|(w, a)| w * a).sum::<f64>() / (total * n as f64);

    let mut weight_gradient = vec![0.0; n];
    if use_weights {
        // ∂r/∂ξ = [ [z]×  −I ]
        let jac = |z: &Vector3<f64>| {
            let mut j = nalgebra::Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(z));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&-Matrix3::identity());
            j
        };
        let mut hess = Matrix6::zeros();
        let mut de_dxi = Vector6::zeros();
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let j = jac(&z[i]);
            let mut h = 2.0 * j.transpose() * j;
            let sym = 0.5 * (r[i] * z[i].transpose() + z[i] * r[i].transpose());
            let curv = 2.0 * (Matrix3::identity() * r[i].dot(&z[i]) - sym);
            let mut rot = h.fixed_view_mut::<3, 3>(0, 0);
            rot += curv;
            hess += w[i] * h;
            g.push(2.0 * j.transpose() * r[i]);
            if a[i] > 0.0 {
                de_dxi += w[i] * j.transpose() * r[i] / a[i];
            }
        }
        de_dxi /= total * n as f64;
        let chol = hess
            .cholesky()
            .ok_or_else(|| Error::Degenerate("registration loss curvature is not positive definite".into()))?;
        // dL/dw_i = ∂E/∂w_i − ∂E/∂ξ · H⁻¹ g_i
        let u = chol.solve(&de_dxi);
        for i in 0..n {
            let direct = (a[i] - n as f64 * value) / (total * n as f64);
            weight_gradient[i] = direct - u.dot(&g[i]);
        }
    }
    Ok(RegistrationLoss {
        value,
        fit,
        weight_gradient,
    })
}

/// Ratio-test weights of `c` recomputed on the tape from the feature rows
/// they were matched with. Returns one `n×1` node per query side, holding
/// the weights of the source-side and target-side correspondences in set
/// order, plus their positions in the set.
pub fn weights_on_tape(
    tape: &mut Tape,
    c: &CorrespondenceSet,
    f0: Var,
    f1: Var,
) -> Vec<(Var, Vec<usize>)> {
    let mut out = Vec::new();
    for side in [Side::Source, Side::Target] {
        let members: Vec<usize> = (0..c.len()).filter(|&i| c.items[i].query == side).collect();
        if members.is_empty() {
            continue;
        }
        let (qf, of) = match side {
            Side::Source => (f0, f1),
            Side::Target => (f1, f0),
        };
        let pick = |i: &usize| {
            let k = &c.items[*i];
            match side {
                Side::Source => (k.p, k.q, k.second),
                Side::Target => (k.q, k.p, k.second),
            }
        };
        let idx: Vec<(usize, usize, usize)> = members.iter().map(pick).collect();
        let q = tape.gather_rows(qf, &idx.iter().map(|t| t.0).collect::<Vec<_>>());
        let first = tape.gather_rows(of, &idx.iter().map(|t| t.1).collect::<Vec<_>>());
        let second = tape.gather_rows(of, &idx.iter().map(|t| t.2).collect::<Vec<_>>());
        let half_sq = |tape: &mut Tape, a: Var, b: Var| {
            let d = tape.sub(a, b);
            let dd = tape.row_dot(d, d);
            tape.affine(dd, 0.5, 0.0)
        };
        let d1 = half_sq(tape, q, first);
        let d2 = half_sq(tape, q, second);
        out.push((tape.lowe_weight(d1, d2), members));
    }
    out
}

/// Registration loss recorded on the tape. With weights, the gradient flows
/// into `f0` and `f1` through the ratio-test weights; without, the loss is a
/// constant.
pub fn registration_loss(
    tape: &mut Tape,
    c: &CorrespondenceSet,
    p0: &PointCloud,
    p1: &PointCloud,
    features: Option<(Var, Var)>,
) -> Result<(Var, RegistrationLoss)> {
    let loss = registration_loss_value(c, p0, p1, features.is_some())?;
    let Some((f0, f1)) = features else {
        let v = tape.constant(DMatrix::from_element(1, 1, loss.value));
        return Ok((v, loss));
    };
    let mut total: Option<Var> = None;
    let mut value = loss.value;
    for (w, members) in weights_on_tape(tape, c, f0, f1) {
        let jac = DMatrix::from_iterator(members.len(), 1, members.iter().map(|&i| loss.weight_gradient[i]));
        let part = tape.scalar_fn(w, value, jac);
        value = 0.0;
        total = Some(match total {
            Some(t) => tape.add(t, part),
            None => part,
        });
    }
    let var = total.unwrap_or_else(|| tape.constant(DMatrix::from_element(1, 1, loss.value)));
    Ok((var, loss))
}

/// Cosine-distance similarity between geometric features at corresponding
/// points and the projections of their partners:
/// `(1/|C|) Σ [D(g_p, z_q) + D(g_q, z_p)]` with `z = project(stopgradient(g))`.
///
/// `gp` and `gq` hold unit-norm rows, one per pair.
pub fn simsiam_loss(tape: &mut Tape, gp: Var, gq: Var, head: &TapeParams) -> Result<Var> {
    let n = tape.value(gp).nrows();
    if n == 0 || tape.value(gq).nrows() != n {
        return Err(Error::param("similarity loss needs a non-empty set of feature pairs"));
    }
    let sp = tape.stop_gradient(gp);
    let sq = tape.stop_gradient(gq);
    let zp = forward_on_tape(tape, head, sp);
    let zq = forward_on_tape(tape, head, sq);
    let a = tape.row_dot(gp, zq);
    let b = tape.row_dot(gq, zp);
    let ab = tape.add(a, b);
    let s = tape.sum(ab);
    Ok(tape.affine(s, -1.0 / n as f64, 2.0))
}
