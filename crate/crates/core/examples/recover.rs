//! Generates a synthetic corpus, segments it and prints accuracy per iteration.
//!
//! Usage: `cargo run --release --example recover -- [background-probability] [seed] [iterations] [sweeps]`

use std::time::Instant;

use mallowseg::evalmetrics::evaluate_corpus;
use mallowseg::inference::{run_inference_with, RunConfig};
use mallowseg::synth::{generate_synthetic, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mallowseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map_or(0.0, |s| s.parse().expect("lambda"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let iterations: usize = args.next().map_or(5, |s| s.parse().expect("iterations"));
    let sweeps: usize = args.next().map_or(1, |s| s.parse().expect("sweeps"));
    let gen = GeneratorConfig {
        k: 5,
        q: 3,
        videos: 30,
        frames: 200,
        dim: 8,
        rho: vec![1.0; 4],
        lambda,
        separation: 4.0,
        theta0: 10.0,
        seed,
    };
    let data = generate_synthetic(&gen, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let config = RunConfig {
        background: lambda > 0.0,
        seed,
        outer_iterations: iterations,
        sweeps_per_iteration: sweeps,
        ..RunConfig::new(5)
    };
    let start = Instant::now();
    let result = run_inference_with(&data.corpus, &config, |it, states| {
        let pred: Vec<Vec<usize>> = states.iter().map(|s| s.z.clone()).collect();
        let s = evaluate_corpus(&data.labels, &pred).expect("scores");
        println!(
            "iteration {it}: mof={:.4} jaccard={:.4} f1={:.4} bg_recall={:?} t={:.1}s",
            s.mof,
            s.jaccard,
            s.f1,
            s.background_recall,
            start.elapsed().as_secs_f64()
        );
    })?;
    for d in &result.diagnostics {
        println!(
            "log_joint[{}] = {:.2} rho = {:?}",
            d.iteration, d.log_joint, d.rho
        );
    }
    Ok(())
}
