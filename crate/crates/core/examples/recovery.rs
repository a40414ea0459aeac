//! Simulate the two-state recovery scenario and search for its support.
//!
//! `cargo run --release --example recovery -- <seeds> <threads>`

use std::time::Instant;

use nhhmm::asa::{run_parallel, HyperRanges, ParallelSettings};
use nhhmm::emissions::Family;
use nhhmm::hmm::Criterion;
use nhhmm::par::Execution;
use nhhmm::simulate::{recovery_model, simulate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let threads: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let truth = recovery_model(8).unwrap();
    let mut hits = 0;
    for seed in 0..seeds {
        let sim = simulate(&truth, 1000, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let settings = ParallelSettings {
            family: Family::Gaussian,
            state_choices: vec![2],
            n_threads: threads,
            ranges: HyperRanges::default(),
            criterion: Criterion::Bic,
            master_seed: seed,
            execution: Execution::Parallel,
        };
        let start = Instant::now();
        let res = run_parallel(&sim.data, &settings).unwrap();
        let best = res.best().unwrap();
        let ok = best.best.config == truth.config;
        hits += usize::from(ok);
        let per_thread: Vec<String> = res
            .threads
            .iter()
            .map(|t| match &t.result {
                Ok(r) => format!("{}:{:.1}", r.best.config, r.best.criterion),
                Err(e) => e.clone(),
            })
            .collect();
        println!(
            "seed {seed}: {} best {} ({:.2}) in {:.1}s evals {}",
            if ok { "recovered" } else { "missed" },
            best.best.config,
            best.best.criterion,
            start.elapsed().as_secs_f64(),
            best.diagnostics.evaluations,
        );
        for t in per_thread {
            println!("    {t}");
        }
    }
    println!("{hits}/{seeds} recovered (truth {})", truth.config);
}
