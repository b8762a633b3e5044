//! ICP from identity and FPFH matches with RANSAC on a synthetic pair.

use byoc::alignment::{icp, ransac_fit, IcpVariant, RansacConfig};
use byoc::correspondence::{match_ratio_test, top_k_filter};
use byoc::data::{generate_scene_pair, GeneratorParams, PairSeed};
use byoc::evaluation::rotation_error;
use byoc::features::{fpfh_descriptor, FeatureCloud, Modality};
use byoc::geometry::{estimate_normals, voxel_downsample, RigidTransform};
use nalgebra::Vector3;

fn main() -> byoc::Result<()> {
    let pair = generate_scene_pair(PairSeed { scene: 3, view: 0 }, &GeneratorParams::default())?;
    let a = voxel_downsample(&pair.cloud0, 0.025)?.cloud;
    let b = voxel_downsample(&pair.cloud1, 0.025)?.cloud;
    let (a, _) = estimate_normals(&a, 16, Vector3::zeros())?;
    let (b, _) = estimate_normals(&b, 16, Vector3::zeros())?;
    let err = |t: &RigidTransform| rotation_error(&t.rotation, &pair.transform.rotation);

    println!("true motion: {:.2}°", pair.transform.rotation_angle().to_degrees());
    for variant in [IcpVariant::PointToPoint, IcpVariant::PointToPlane] {
        let fit = icp(&a, &b, variant, &RigidTransform::identity(), 50, 1e-6)?;
        println!("ICP {variant:?}: {:.2}° after {:?} iterations", err(&fit.transform)?, fit.iterations);
    }

    let fa = FeatureCloud::new(a.clone(), fpfh_descriptor(&a, 16)?.descriptors, Modality::Geometric)?;
    let fb = FeatureCloud::new(b.clone(), fpfh_descriptor(&b, 16)?.descriptors, Modality::Geometric)?;
    let c = top_k_filter(&match_ratio_test(&fa, &fb)?, 400)?;
    let fit = ransac_fit(&c, &a, &b, &RansacConfig::default())?;
    println!("FPFH + RANSAC: {:.2}° with {:?} inliers", err(&fit.transform)?, fit.inlier_count);
    Ok(())
}
