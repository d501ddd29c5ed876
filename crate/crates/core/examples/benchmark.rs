//! Reproduces the synthetic prediction-error table: m=100 workers,
//! n=1000 items, k=2, worker diagonals uniform on [0.3, 0.9], 10 EM
//! rounds, errors averaged over seeds.
//!
//! Usage: benchmark [num_seeds] [first_seed]

use labelfuse::run::{run, Method, RunConfig, Truth};
use labelfuse::synth::SynthConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let num_seeds: u64 = args.next().map_or(10, |s| s.parse().expect("num_seeds"));
    let first_seed: u64 = args.next().map_or(0, |s| s.parse().expect("first_seed"));

    let sparsities = [0.2, 0.5, 1.0];
    let methods = [Method::OptDs, Method::MvDs, Method::Mv];

    println!("# mean prediction error (%), seeds {first_seed}..{}", first_seed + num_seeds);
    print!("{:>10}", "method");
    for pi in sparsities {
        print!("  pi={pi:<6}");
    }
    println!();

    let mut means = vec![vec![0.0f64; sparsities.len()]; methods.len()];
    for (pi_idx, &pi) in sparsities.iter().enumerate() {
        for seed in first_seed..first_seed + num_seeds {
            let config = SynthConfig::paper_binary(100, 1000, pi, seed);
            let (labels, model) = labelfuse::synth::generate(&config).expect("generate");
            let truth = Truth::from_model(&model);
            for (m_idx, &method) in methods.iter().enumerate() {
                let mut rc = RunConfig::new(method, 2);
                rc.seed = seed;
                let outcome = run(&rc, &labels, Some(&truth)).expect("run");
                means[m_idx][pi_idx] +=
                    outcome.report.prediction_error_percent.expect("full truth")
                        / num_seeds as f64;
            }
        }
    }

    for (m_idx, &method) in methods.iter().enumerate() {
        print!("{:>10}", method.to_string());
        for v in &means[m_idx] {
            print!("  {v:<9.3}");
        }
        println!();
    }
}
