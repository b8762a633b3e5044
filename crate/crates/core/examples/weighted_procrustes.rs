//! Closed-form weighted fit, and the randomized subset fit under outliers.

use byoc::alignment::{randomized_fit, weighted_procrustes, RandomizedConfig};
use byoc::correspondence::{Correspondence, CorrespondenceSet};
use byoc::evaluation::rotation_error;
use byoc::features::Modality;
use byoc::geometry::{apply_transform, PointCloud, RigidTransform};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> byoc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = RigidTransform::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 0.4, Vector3::new(0.2, -0.1, 0.3));
    let p0 = PointCloud::new(
        (0..400)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    );
    let p1 = apply_transform(&truth, &p0);

    // 30% of the matches point at random targets
    let items: Vec<Correspondence> = (0..400)
        .map(|i| {
            let q = if i % 10 < 3 { rng.random_range(0..400) } else { i };
            Correspondence::new(i, q, 1.0)
        })
        .collect();
    let c = CorrespondenceSet::new(items, Modality::Geometric);

    let single = weighted_procrustes(&c, &p0, &p1, true)?;
    let robust = randomized_fit(&c, &p0, &p1, &RandomizedConfig::default())?;
    for (name, fit) in [("single fit", &single), ("randomized", &robust)] {
        println!(
            "{name:>11}: rotation error {:.4}°, energy {:.4} m",
            rotation_error(&fit.transform.rotation, &truth.rotation)?,
            fit.residual_energy
        );
    }
    Ok(())
}
