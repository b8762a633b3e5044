//! A short BYOC training run on generated pairs, logging JSON lines to
//! stdout and reporting held-out geometric registration before and after.
//!
//! Usage: `cargo run --release --example train_byoc [iterations]`

use byoc::data::{generate_scene_pair, GeneratorParams, PairSeed};
use byoc::learning::{train_pairs, validate, JsonLines, Model, TrainConfig, TrainPair, TrainState, Variant};

fn pairs(first: u64, n: usize, with_visual: bool) -> byoc::Result<Vec<TrainPair>> {
    let params = GeneratorParams::default();
    (first..)
        .filter_map(|scene| generate_scene_pair(PairSeed { scene, view: 0 }, &params).ok())
        .take(n)
        .map(|p| TrainPair::new(&p, 0.025, with_visual))
        .collect()
}

fn main() -> byoc::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = TrainConfig { variant: Variant::Byoc, iterations, batch_size: 4, ..Default::default() };
    let train = pairs(0, 16, true)?;
    let held_out = pairs(5000, 8, false)?;

    let state = TrainState::new(Model::random_init(cfg.seed), cfg.adam());
    let before = validate(&state.model, &cfg, &held_out, 0);
    let state = train_pairs(state, &cfg, &train, &[], &mut JsonLines(std::io::stdout()))?;
    let after = validate(&state.model, &cfg, &held_out, state.iteration);
    eprintln!(
        "held-out median rotation error: {:.2}° before, {:.2}° after {} iterations",
        before.median_rotation_deg, after.median_rotation_deg, state.iteration
    );
    Ok(())
}
