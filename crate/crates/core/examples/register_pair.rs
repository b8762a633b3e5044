//! Register two PLY files with a saved encoder, under each fit mode.

use byoc::data::{generate_scene_pair, ply_read, ply_write, GeneratorParams, PairSeed};
use byoc::evaluation::{rotation_error, translation_error};
use byoc::features::{context_dim, encoder_shapes, EncoderParams, Modality};
use byoc::learning::{register, FitMode, RegisterConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("byoc-register-pair");
    std::fs::create_dir_all(&dir)?;
    let pair = generate_scene_pair(PairSeed { scene: 11, view: 0 }, &GeneratorParams::default())?;
    ply_write(&dir.join("a.ply"), &pair.cloud0)?;
    ply_write(&dir.join("b.ply"), &pair.cloud1)?;

    // an untrained visual encoder is already a usable matcher
    let modality = Modality::Visual;
    EncoderParams::random_init(0, &encoder_shapes(context_dim(modality))).save(&dir.join("visual.bin"))?;
    let encoder = EncoderParams::load(&dir.join("visual.bin"))?;

    let a = ply_read(&dir.join("a.ply"))?;
    let b = ply_read(&dir.join("b.ply"))?;
    println!("{} and {} points, true motion {:.2}°", a.len(), b.len(), pair.transform.rotation_angle().to_degrees());
    for mode in [FitMode::Procrustes, FitMode::Randomized, FitMode::Ransac] {
        let cfg = RegisterConfig { mode, modality, ..Default::default() };
        let fit = register(&a, &b, &encoder, &cfg)?;
        println!(
            "{mode:>10}: rotation error {:6.2}°, translation error {:6.2} cm, residual energy {:.4} m",
            rotation_error(&fit.transform.rotation, &pair.transform.rotation)?,
            translation_error(&fit.transform.translation, &pair.transform.translation),
            fit.residual_energy,
        );
    }
    Ok(())
}
