//! Render a few synthetic view pairs, write them as PLY and read one back.

use byoc::data::{generate_scene_pair, ply_read, ply_write, GeneratorParams, PairSeed};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = GeneratorParams::default();
    let dir = std::env::temp_dir().join("byoc-generate-pairs");
    std::fs::create_dir_all(&dir)?;

    for scene in 0..5 {
        let pair = match generate_scene_pair(PairSeed { scene, view: 0 }, &params) {
            Ok(p) => p,
            Err(e) => {
                println!("scene {scene}: {e}");
                continue;
            }
        };
        println!(
            "scene {scene}: {} / {} points, overlap {:.2}, motion {:.1}° {:.1} cm",
            pair.cloud0.len(),
            pair.cloud1.len(),
            pair.overlap,
            pair.transform.rotation_angle().to_degrees(),
            pair.transform.translation.norm() * 100.0
        );
        let path = dir.join(format!("scene{scene}_0.ply"));
        ply_write(&path, &pair.cloud0)?;
        let back = ply_read(&path)?;
        assert_eq!(back.positions, pair.cloud0.positions);
    }
    println!("wrote PLY files to {}", dir.display());
    Ok(())
}
