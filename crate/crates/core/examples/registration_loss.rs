//! The differentiable registration loss: value, weight gradient, and a
//! gradient step on the weights that lowers it.

use byoc::correspondence::{Correspondence, CorrespondenceSet};
use byoc::features::Modality;
use byoc::geometry::{apply_transform, PointCloud, RigidTransform};
use byoc::learning::registration_loss_value;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> byoc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = RigidTransform::from_axis_angle(Vector3::z(), 0.2, Vector3::new(0.1, 0.0, 0.0));
    let p0 = PointCloud::new(
        (0..30)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    );
    let mut p1 = apply_transform(&truth, &p0);
    // the last ten matches are corrupted
    for p in &mut p1.positions[20..] {
        *p += Vector3::new(0.5, -0.4, 0.3);
    }
    let mut c = CorrespondenceSet::new((0..30).map(|i| Correspondence::new(i, i, 0.5)).collect(), Modality::Visual);

    for step in 0..5 {
        let l = registration_loss_value(&c, &p0, &p1, true)?;
        let (good, bad): (Vec<_>, Vec<_>) = c.iter().partition(|k| k.p < 20);
        let mean = |v: &[&Correspondence]| v.iter().map(|k| k.weight).sum::<f64>() / v.len() as f64;
        println!(
            "step {step}: loss {:.5}, mean weight clean {:.3} corrupted {:.3}",
            l.value,
            mean(&good),
            mean(&bad)
        );
        for (k, g) in c.items.iter_mut().zip(&l.weight_gradient) {
            k.weight = (k.weight - 20.0 * g).clamp(0.01, 1.0);
        }
    }
    Ok(())
}
