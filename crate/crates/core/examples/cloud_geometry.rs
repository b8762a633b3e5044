//! Voxel downsampling, normals, nearest neighbors and chamfer distance.

use byoc::data::{generate_scene_pair, GeneratorParams, PairSeed};
use byoc::geometry::{apply_transform, chamfer_distance, estimate_normals, knn_search, voxel_downsample};
use nalgebra::Vector3;

fn main() -> byoc::Result<()> {
    let pair = generate_scene_pair(PairSeed { scene: 3, view: 0 }, &GeneratorParams::default())?;
    let down = voxel_downsample(&pair.cloud0, 0.05)?;
    println!("{} points -> {} voxels of 5 cm", pair.cloud0.len(), down.cloud.len());

    let (with_normals, diag) = estimate_normals(&down.cloud, 16, Vector3::zeros())?;
    let normals = with_normals.normals.as_ref().expect("normals were estimated");
    println!("normal of point 0: {:.3?} ({} degenerate)", normals[0].as_slice(), diag.degenerate.len());

    let nn = knn_search(&down.cloud.positions[..3], &down.cloud.positions, 4)?;
    for (i, n) in nn.iter().enumerate() {
        let d: Vec<String> = n.iter().map(|x| format!("{}@{:.3}", x.index, x.distance)).collect();
        println!("neighbors of {i}: {}", d.join(" "));
    }

    let moved = apply_transform(&pair.transform, &pair.cloud0);
    println!(
        "chamfer to second view: {:.2} cm before alignment, {:.2} cm after",
        chamfer_distance(&pair.cloud0, &pair.cloud1)? * 100.0,
        chamfer_distance(&moved, &pair.cloud1)? * 100.0
    );
    Ok(())
}
