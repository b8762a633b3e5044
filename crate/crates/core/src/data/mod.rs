//! Synthetic view pairs, point cloud files and dataset manifests.

mod generator;
mod manifest;
mod ply;

pub use generator::{
    generate_pair_in, generate_scene_pair, sample_motion, GeneratorParams, PairSeed, Scene, ScenePair,
    GENERATOR_VERSION,
};
pub use manifest::{load_manifest, parse_manifest, ManifestEntry, PairManifest, PairPaths, Split};
pub use ply::{color_to_byte, parse_ply, ply_read, ply_to_string, ply_write};
