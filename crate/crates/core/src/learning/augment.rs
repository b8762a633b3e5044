use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{apply_transform, PointCloud, RigidTransform};

/// A rotation drawn uniformly from SO(3), as a normalized 4-D Gaussian.
pub fn random_rotation(rng: &mut impl rand::Rng) -> UnitQuaternion<f64> {
    loop {
        let mut c = || -> f64 { StandardNormal.sample(rng) };
        let q = Quaternion::new(c(), c(), c(), c());
        if q.norm() > 1e-12 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Rotates positions and normals about the origin by a seeded uniform random
/// rotation; returns the rotated cloud and the rotation as a transform.
pub fn rotation_augment(cloud: &PointCloud, seed: u64) -> (PointCloud, RigidTransform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = RigidTransform::from_quaternion(&random_rotation(&mut rng), Vector3::zeros());
    (apply_transform(&t, cloud), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn seeded_and_valid() {
        let cloud = PointCloud::new(vec![Vector3::new(1.0, 2.0, 3.0)]).with_normals(vec![Vector3::z()]);
        let (a, ta) = rotation_augment(&cloud, 4);
        let (b, tb) = rotation_augment(&cloud, 4);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.validate().is_ok());
        assert!((ta.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((a.positions[0].norm() - cloud.positions[0].norm()).abs() < 1e-12);
        assert!((a.normals.unwrap()[0].norm() - 1.0).abs() < 1e-12);
        assert_ne!(ta, rotation_augment(&cloud, 5).1);
    }

    #[test]
    fn mean_rotation_is_zero() {
        // each entry of a uniform rotation has mean 0 and variance 1/3
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sum = Matrix3::zeros();
        for _ in 0..n {
            sum += random_rotation(&mut rng).to_rotation_matrix().matrix();
        }
        let mean = sum / n as f64;
        let sigma = (1.0 / 3.0 / n as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() < 3.0 * sigma), "{mean}");
    }
}
