//! Drive the command-line interface in-process: generate a small dataset,
//! train briefly, then evaluate the checkpoint.

use byoc::cli::{run, Cli};
use clap::Parser;

fn main() {
    let dir = std::env::temp_dir().join("byoc-command-line");
    let d = dir.display();
    let steps = [
        format!("byoc gen-data --out {d}/data --pairs 12 --seed 1"),
        format!("byoc train --manifest {d}/data/manifest.jsonl --out {d}/run --iters 5 --batch-size 2"),
        format!("byoc evaluate --manifest {d}/data/manifest.jsonl --checkpoint {d}/run/geometric.bin --split train --out {d}/eval.jsonl"),
        format!("byoc report {d}/eval.jsonl --text"),
    ];
    for step in &steps {
        eprintln!("$ {step}");
        let code = run(Cli::parse_from(step.split_whitespace()));
        if code != 0 {
            std::process::exit(code);
        }
    }
}
