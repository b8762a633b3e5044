use super::{KdTree, PointCloud};
use crate::error::Result;

/// Symmetric chamfer distance in meters: the average of the two directed
/// mean nearest-neighbor distances.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    a.require_non_empty("chamfer_distance")?;
    b.require_non_empty("chamfer_distance")?;
    Ok(0.5 * (directed(a, b)? + directed(b, a)?))
}

fn directed(from: &PointCloud, to: &PointCloud) -> Result<f64> {
    let tree = KdTree::new(&to.positions)?;
    let sum: f64 = from
        .positions
        .iter()
        .map(|p| tree.nearest(p.as_slice()).map_or(0.0, |n| n.distance))
        .sum();
    Ok(sum / from.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, RigidTransform};
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
    }

    fn oracle(a: &PointCloud, b: &PointCloud) -> f64 {
        let dir = |x: &PointCloud, y: &PointCloud| {
            x.positions
                .iter()
                .map(|p| {
                    y.positions
                        .iter()
                        .map(|q| {
                            let d = p - q;
                            (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / x.len() as f64
        };
        0.5 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn self_distance_zero_and_unit_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 50);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let p = PointCloud::new(vec![Vector3::zeros()]);
        let q = PointCloud::new(vec![Vector3::new(1.0, 0.0, 0.0)]);
        assert_eq!(chamfer_distance(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_cloud(&mut rng, 100);
            let b = random_cloud(&mut rng, 100);
            assert!((chamfer_distance(&a, &b).unwrap() - oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_is_error() {
        let a = PointCloud::new(vec![Vector3::zeros()]);
        assert!(chamfer_distance(&a, &PointCloud::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_rigid_invariant(seed in any::<u64>(), n in 1usize..120, m in 1usize..120, angle in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, m);
            let ab = chamfer_distance(&a, &b).unwrap();
            prop_assert!((ab - chamfer_distance(&b, &a).unwrap()).abs() < 1e-12);
            let t = RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.5), angle, Vector3::new(1.0, 2.0, -0.5));
            let moved = chamfer_distance(&apply_transform(&t, &a), &apply_transform(&t, &b)).unwrap();
            prop_assert!((ab - moved).abs() < 1e-9);
        }
    }
}
