//! Registration with untrained encoders: random visual features already
//! give good matches, random geometric ones do not.

use byoc::data::{generate_scene_pair, GeneratorParams, PairSeed};
use byoc::evaluation::{median, rotation_error};
use byoc::features::{context_dim, encoder_shapes, EncoderParams, Modality};
use byoc::learning::{prepare, register_prepared, RegisterConfig};

fn main() -> byoc::Result<()> {
    let params = GeneratorParams::default();
    let pairs: Vec<_> = (100..)
        .filter_map(|scene| generate_scene_pair(PairSeed { scene, view: 0 }, &params).ok())
        .take(20)
        .collect();
    for modality in [Modality::Visual, Modality::Geometric] {
        let encoder = EncoderParams::random_init(0, &encoder_shapes(context_dim(modality)));
        let cfg = RegisterConfig { modality, ..Default::default() };
        let mut errors = Vec::new();
        for pair in &pairs {
            let a = prepare(&pair.cloud0, modality, cfg.voxel_size)?;
            let b = prepare(&pair.cloud1, modality, cfg.voxel_size)?;
            let e = match register_prepared(&a, &b, &encoder, &cfg) {
                Ok(fit) => rotation_error(&fit.transform.rotation, &pair.transform.rotation)?,
                Err(_) => 180.0,
            };
            errors.push(e);
        }
        println!("random {modality} encoder: median rotation error {:.2}° over {} pairs", median(&errors), pairs.len());
    }
    Ok(())
}
