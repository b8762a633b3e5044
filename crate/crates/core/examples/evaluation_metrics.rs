//! Per-pair errors, the summary table, and feature-match recall.

use byoc::correspondence::{Correspondence, CorrespondenceSet};
use byoc::evaluation::{feature_match_recall, summarize, FmrConfig, FmrPair, PairMetrics, Thresholds};
use byoc::features::Modality;
use byoc::geometry::{PointCloud, RigidTransform};
use nalgebra::Vector3;

fn main() -> byoc::Result<()> {
    let truth = RigidTransform::from_axis_angle(Vector3::z(), 0.2, Vector3::new(0.1, 0.0, 0.0));
    let cloud = PointCloud::new((0..50).map(|i| Vector3::new(i as f64 * 0.02, (i % 7) as f64 * 0.05, 1.0)).collect());
    let metrics: Vec<PairMetrics> = [0.0, 0.03, 0.1, 0.5]
        .iter()
        .map(|&e| {
            let predicted = RigidTransform::from_axis_angle(Vector3::z(), 0.2 + e, Vector3::new(0.1 + e / 4.0, 0.0, 0.0));
            PairMetrics::compute(&predicted, &truth, Some(&cloud))
        })
        .collect::<byoc::Result<_>>()?;
    print!("{}", summarize(&metrics, &Thresholds::default())?.to_text());

    // one pair with 3 correct matches out of 20, one with a single match
    let identity = RigidTransform::identity();
    let set = |correct: usize| {
        CorrespondenceSet::new(
            (0..20).map(|i| Correspondence::new(i, if i < correct { i } else { (i + 9) % 50 }, 1.0)).collect(),
            Modality::Geometric,
        )
    };
    let (three, one) = (set(3), set(1));
    let pairs = [
        FmrPair { correspondences: &three, cloud0: &cloud, cloud1: &cloud, transform: &identity, group: 0 },
        FmrPair { correspondences: &one, cloud0: &cloud, cloud1: &cloud, transform: &identity, group: 1 },
    ];
    let fmr = feature_match_recall(&pairs, &FmrConfig::default())?;
    println!("feature-match recall {:.2} (per-pair {:?}, group std {:.2})", fmr.recall, fmr.matched, fmr.group_std);
    Ok(())
}
