//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N: PASS`/`criterion N: FAIL` line before asserting.
//!
//! Criteria 1, 2, 6, 7b, and 8 compare against reference error levels for
//! the standard synthetic regime (binary classes, worker diagonals
//! uniform on [0.3, 0.9]); the seed windows below are fixed, so every
//! check is deterministic.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use labelfuse::em::{e_step, em_loop, log_marginal_likelihood, m_step, EmRounds};
use labelfuse::model::{ConfusionMatrix, ObservedLabels, Posterior};
use labelfuse::onecoin::{init_accuracies, pairwise_stats, OneCoinOptions};
use labelfuse::run::{run, Method, RunConfig, Truth};
use labelfuse::spectral::{partition_workers, recover_group_estimate, SpectralConfig};
use labelfuse::synth::{generate, ConfusionRegime, SynthConfig};
use labelfuse::tensor::Tensor3;

fn verdict(criterion: usize, pass: bool, detail: &str) {
    println!("criterion {criterion}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion}: {detail}");
}

/// Mean prediction error (%) over seeds for one method at one sparsity in
/// the m=100, n=1000, k=2 regime, 10 EM rounds.
fn table_mean_error(method: Method, pi: f64, seeds: std::ops::Range<u64>) -> f64 {
    let count = seeds.clone().count() as f64;
    let mut mean = 0.0;
    for seed in seeds {
        let (labels, model) =
            generate(&SynthConfig::paper_binary(100, 1000, pi, seed)).unwrap();
        let truth = Truth::from_model(&model);
        let mut config = RunConfig::new(method, 2);
        config.seed = seed;
        let outcome = run(&config, &labels, Some(&truth)).unwrap();
        mean += outcome.report.prediction_error_percent.unwrap() / count;
    }
    mean
}

#[test]
fn criterion_1_synthetic_error_table() {
    let start = Instant::now();
    // (method, per-sparsity expected error, per-sparsity tolerance); the
    // third column for the D&S methods is an absolute ceiling rather than
    // a band around the tiny reference value.
    let pis = [0.2, 0.5, 1.0];
    let rows: [(Method, [f64; 3], [f64; 3]); 3] = [
        (Method::OptDs, [7.64, 0.84, f64::NAN], [1.5, 1.0, 0.5]),
        (Method::MvDs, [7.65, 0.84, f64::NAN], [1.5, 1.0, 0.5]),
        (Method::Mv, [18.85, 7.97, 1.57], [2.0, 1.5, 1.0]),
    ];
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for (method, targets, tolerances) in rows {
        for (idx, &pi) in pis.iter().enumerate() {
            let mean = table_mean_error(method, pi, 0..10);
            cells.push(format!("{method} pi={pi}: {mean:.3}"));
            let ok = if targets[idx].is_nan() {
                mean <= tolerances[idx]
            } else {
                (mean - targets[idx]).abs() <= tolerances[idx]
            };
            if !ok {
                failures.push(format!(
                    "{method} at pi={pi}: mean {mean:.3} vs target {} +- {}",
                    targets[idx], tolerances[idx]
                ));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        failures.push(format!("runtime {elapsed:.1}s exceeds 60s"));
    }
    verdict(
        1,
        failures.is_empty(),
        &format!("cells [{}]; failures [{}]", cells.join(", "), failures.join("; ")),
    );
}

#[test]
fn criterion_2_early_round_advantage() {
    // At pi=0.2 the spectral initialization must beat the majority-vote
    // initialization on both metrics before any EM round has run: traces
    // index the initial state at round 0.
    let seeds = 0..10u64;
    let count = seeds.clone().count() as f64;
    let (mut opt_err, mut mv_err, mut opt_conf, mut mv_conf) = (0.0, 0.0, 0.0, 0.0);
    for seed in seeds {
        let (labels, model) =
            generate(&SynthConfig::paper_binary(100, 1000, 0.2, seed)).unwrap();
        let truth = Truth::from_model(&model);
        for method in [Method::OptDs, Method::MvDs] {
            let mut config = RunConfig::new(method, 2);
            config.seed = seed;
            let outcome = run(&config, &labels, Some(&truth)).unwrap();
            let report = &outcome.report;
            assert!(!report.fallback, "spectral stage fell back on seed {seed}");
            let err0 = report.error_trace.as_ref().unwrap()[0];
            let conf0 = report.confusion_error_trace.as_ref().unwrap()[0];
            match method {
                Method::OptDs => {
                    opt_err += err0 / count;
                    opt_conf += conf0 / count;
                }
                _ => {
                    mv_err += err0 / count;
                    mv_conf += conf0 / count;
                }
            }
        }
    }
    verdict(
        2,
        opt_err < mv_err && opt_conf < mv_conf,
        &format!(
            "prediction error {opt_err:.3} vs {mv_err:.3}; confusion error {opt_conf:.3} vs {mv_conf:.3}"
        ),
    );
}

/// Draws a column-stochastic k x k aggregated confusion matrix with
/// dominant diagonal plus a prior, rejecting candidates whose smallest
/// column gap is below 0.1 or whose k-th singular value of
/// `C diag(sqrt(w))` is below 0.05.
fn random_population(k: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
    loop {
        let mut c = DMatrix::zeros(k, k);
        for l in 0..k {
            let diag = rng.gen_range(0.55..0.85);
            let mut off: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.02..1.0)).collect();
            let total: f64 = off.iter().sum();
            for v in &mut off {
                *v *= (1.0 - diag) / total;
            }
            let mut next = off.into_iter();
            for r in 0..k {
                c[(r, l)] = if r == l { diag } else { next.next().unwrap() };
            }
        }
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.into_iter().map(|v| v / total).collect();

        let gap = (0..k)
            .map(|l| {
                let col = c.column(l);
                let top = col[l];
                let second = (0..k).filter(|&r| r != l).map(|r| col[r]).fold(0.0, f64::max);
                top - second
            })
            .fold(f64::INFINITY, f64::min);
        let mut scaled = c.clone();
        for (l, mut column) in scaled.column_iter_mut().enumerate() {
            column *= w[l].sqrt();
        }
        let sigma_k = scaled.svd(false, false).singular_values[k - 1];
        if gap >= 0.1 && sigma_k >= 0.05 {
            return (c, w);
        }
    }
}

#[test]
fn criterion_3_population_moment_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let config = SpectralConfig::default();
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let k = [2, 3, 5][instance % 3];
        let (c, w) = random_population(k, &mut rng);
        let mut m2 = DMatrix::zeros(k, k);
        let mut m3 = Tensor3::zeros(k);
        for l in 0..k {
            let col = c.column(l).clone_owned();
            m2 += w[l] * &col * col.transpose();
            m3.add_outer3(w[l], col.as_slice(), col.as_slice(), col.as_slice());
        }
        let (estimate, _) = recover_group_estimate(&m2, &m3, &config, &mut rng).unwrap();
        for l in 0..k {
            worst = worst.max((estimate.w[l] - w[l]).abs());
            for r in 0..k {
                worst = worst.max((estimate.c_diamond[(r, l)] - c[(r, l)]).abs());
            }
        }
    }
    verdict(3, worst <= 1e-6, &format!("worst recovery deviation {worst:.3e}"));
}

fn random_confusion(k: usize, rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let mut mat = DMatrix::zeros(k, k);
    for l in 0..k {
        let col: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = col.iter().sum();
        for r in 0..k {
            mat[(r, l)] = col[r] / total;
        }
    }
    ConfusionMatrix::new(mat).unwrap()
}

#[test]
fn criterion_4_estep_mstep_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 500 {
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=5);
        let k = rng.gen_range(2..=3);
        let confusions: Vec<ConfusionMatrix> =
            (0..m).map(|_| random_confusion(k, &mut rng)).collect();
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.gen::<f64>() < 0.7 {
                    entries.push((i, j, rng.gen_range(0..k)));
                }
            }
        }
        if entries.is_empty() {
            continue;
        }
        let labels = ObservedLabels::new(m, n, k, entries.iter().copied()).unwrap();
        let posterior = e_step(&labels, &confusions).unwrap();
        for j in 0..n {
            let mut numerator = vec![1.0f64; k];
            for &(i, jj, c) in &entries {
                if jj == j {
                    for (l, v) in numerator.iter_mut().enumerate() {
                        *v *= confusions[i].get(c, l);
                    }
                }
            }
            let total: f64 = numerator.iter().sum();
            for l in 0..k {
                worst = worst.max((posterior.beliefs()[(j, l)] - numerator[l] / total).abs());
            }
        }
        instances += 1;
    }
    let e_ok = worst <= 1e-12;

    // M-step against direct counting on one-hot posteriors: exact.
    let mut m_exact = true;
    for _ in 0..200 {
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=5);
        let k = rng.gen_range(2..=3);
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.gen::<f64>() < 0.7 {
                    entries.push((i, j, rng.gen_range(0..k)));
                }
            }
        }
        if entries.is_empty() {
            continue;
        }
        let labels = ObservedLabels::new(m, n, k, entries.iter().copied()).unwrap();
        let assignment: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let mut beliefs = DMatrix::zeros(n, k);
        for (j, &y) in assignment.iter().enumerate() {
            beliefs[(j, y)] = 1.0;
        }
        let estimated = m_step(&labels, &Posterior::from_beliefs(beliefs).unwrap());
        for i in 0..m {
            for l in 0..k {
                let denom = entries
                    .iter()
                    .filter(|&&(ii, j, _)| ii == i && assignment[j] == l)
                    .count();
                for c in 0..k {
                    let count = entries
                        .iter()
                        .filter(|&&(ii, j, cc)| ii == i && cc == c && assignment[j] == l)
                        .count();
                    let expected = if denom == 0 {
                        1.0 / k as f64
                    } else {
                        count as f64 / denom as f64
                    };
                    if estimated[i].get(c, l) != expected {
                        m_exact = false;
                    }
                }
            }
        }
    }
    verdict(
        4,
        e_ok && m_exact,
        &format!("worst posterior deviation {worst:.3e}; counting oracle exact: {m_exact}"),
    );
}

#[test]
fn criterion_5_em_monotonic_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut checked = 0;
    let mut worst_drop: f64 = 0.0;
    for dataset_idx in 0..20u64 {
        let k = if dataset_idx % 2 == 0 { 2 } else { 3 };
        // Half structured crowds, half uniform noise; monotonicity must
        // hold on both.
        let labels = if dataset_idx < 10 && k == 2 {
            generate(&SynthConfig::paper_binary(8, 40, 0.8, dataset_idx)).unwrap().0
        } else {
            let mut entries = Vec::new();
            for i in 0..8usize {
                for j in 0..40usize {
                    if rng.gen::<f64>() < 0.8 {
                        entries.push((i, j, rng.gen_range(0..k)));
                    }
                }
            }
            ObservedLabels::new(8, 40, k, entries).unwrap()
        };
        for _ in 0..5 {
            let init: Vec<ConfusionMatrix> =
                (0..8).map(|_| random_confusion(k, &mut rng)).collect();
            let mut previous = log_marginal_likelihood(&labels, &init).unwrap();
            em_loop(&labels, &init, EmRounds::Fixed(6), |state| {
                worst_drop = worst_drop.max(previous - state.log_marginal);
                previous = state.log_marginal;
            })
            .unwrap();
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
    verdict(5, worst_drop <= 1e-8, &format!("worst per-round drop {worst_drop:.3e}"));
}

#[test]
fn criterion_6_confusion_error_rate() {
    // Mean total squared confusion error after spectral init + 10 rounds
    // should scale roughly as 1/n. The rate bound assumes identifiable
    // group aggregates, so seeds are screened on ground truth alone: with
    // 30 workers split by the run's own partition, every group's average
    // confusion matrix must keep a diagonal-dominance gap of at least 0.1
    // (the identifiability floor also used in criterion 3). Draws below
    // the floor have a near-singular group view and sit outside the
    // regime the rate describes.
    let min_group_gap = |seed: u64| -> f64 {
        let (_, model) = generate(&SynthConfig::paper_binary(30, 1, 1.0, seed)).unwrap();
        let partition = partition_workers(30, seed).unwrap();
        partition
            .groups()
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|&i| {
                        model.confusions()[i].get(0, 0) + model.confusions()[i].get(1, 1)
                    })
                    .sum::<f64>()
                    / members.len() as f64
                    - 1.0
            })
            .fold(f64::INFINITY, f64::min)
    };
    let seeds: Vec<u64> = (0..).filter(|&s| min_group_gap(s) >= 0.1).take(10).collect();
    let ns = [250usize, 500, 1000, 2000, 4000];
    let mut points = Vec::new();
    for &n in &ns {
        let mut mean = 0.0;
        for &seed in &seeds {
            let (labels, model) =
                generate(&SynthConfig::paper_binary(30, n, 1.0, seed)).unwrap();
            let truth = Truth::from_model(&model);
            let mut config = RunConfig::new(Method::OptDs, 2);
            config.seed = seed;
            let outcome = run(&config, &labels, Some(&truth)).unwrap();
            assert!(!outcome.report.fallback);
            mean += outcome.report.confusion_error.unwrap() / seeds.len() as f64;
        }
        points.push(((n as f64).ln(), mean.ln()));
    }
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let slope = points.iter().map(|p| (p.0 - x_mean) * (p.1 - y_mean)).sum::<f64>()
        / points.iter().map(|p| (p.0 - x_mean).powi(2)).sum::<f64>();
    verdict(
        6,
        (-1.4..=-0.6).contains(&slope),
        &format!("log-log slope {slope:.3} outside [-1.4, -0.6]"),
    );
}

#[test]
fn criterion_7_one_coin_recovery() {
    // (a) Population pairwise statistics for p = (0.9, 0.8, 0.7) at k=2:
    // N_ab = (p_a - 1/2)(p_b - 1/2).
    let stats = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, 0.12, 0.08, 0.12, 0.0, 0.06, 0.08, 0.06, 0.0],
    );
    let params = init_accuracies(&stats, 2, &OneCoinOptions::default()).unwrap();
    let analytic_dev = params
        .accuracies
        .iter()
        .zip([0.9, 0.8, 0.7])
        .map(|(est, p)| (est - p).abs())
        .fold(0.0, f64::max);

    // The same arithmetic reached through a real dataset: 100 items with
    // agreement counts 74, 66, 62 for pairs (0,1), (0,2), (1,2), realized
    // as 51 unanimous items, 23 where only (0,1) agree, 15 where only
    // (0,2) agree, and 11 where only (1,2) agree.
    let mut entries = Vec::new();
    let pattern_counts = [(51, [0, 0, 0]), (23, [0, 0, 1]), (15, [0, 1, 0]), (11, [0, 1, 1])];
    let mut item = 0usize;
    for (count, pattern) in pattern_counts {
        for _ in 0..count {
            let base = item % 2;
            for (worker, &offset) in pattern.iter().enumerate() {
                entries.push((worker, item, (base + offset) % 2));
            }
            item += 1;
        }
    }
    let labels = ObservedLabels::new(3, 100, 2, entries).unwrap();
    let empirical = pairwise_stats(&labels).unwrap();
    let params =
        init_accuracies(&empirical, 2, &OneCoinOptions::default()).unwrap();
    let dataset_dev = params
        .accuracies
        .iter()
        .zip([0.9, 0.8, 0.7])
        .map(|(est, p)| (est - p).abs())
        .fold(0.0, f64::max);
    let exact_ok = analytic_dev <= 1e-12 && dataset_dev <= 1e-12;

    // (b) Concentration of the moment initializer at m=30, n=2000, k=2,
    // true accuracies uniform on [0.6, 0.9]: the per-worker deviation
    // bound 2*sqrt(3*ln(6m/0.1)/n) must hold for every worker in at
    // least 18 of 20 seeds.
    let m = 30usize;
    let n = 2000usize;
    let bound = 2.0 * (3.0 * (6.0 * m as f64 / 0.1).ln() / n as f64).sqrt();
    let mut good_seeds = 0;
    let mut worst_dev: f64 = 0.0;
    for seed in 0..20u64 {
        let config = SynthConfig {
            m,
            n,
            k: 2,
            sparsity: 1.0,
            prior: labelfuse::model::ClassPrior::uniform(2),
            regime: ConfusionRegime::OneCoin { lo: 0.6, hi: 0.9 },
            seed: 700 + seed,
        };
        let (labels, model) = generate(&config).unwrap();
        let stats = pairwise_stats(&labels).unwrap();
        let params = init_accuracies(&stats, 2, &OneCoinOptions::default()).unwrap();
        let seed_worst = (0..m)
            .map(|i| (params.accuracies[i] - model.confusions()[i].get(0, 0)).abs())
            .fold(0.0, f64::max);
        worst_dev = worst_dev.max(seed_worst);
        if seed_worst <= bound {
            good_seeds += 1;
        }
    }
    verdict(
        7,
        exact_ok && good_seeds >= 18,
        &format!(
            "exact deviations {analytic_dev:.3e}/{dataset_dev:.3e}; bound {bound:.4} held in {good_seeds}/20 seeds (worst {worst_dev:.4})"
        ),
    );
}

#[test]
fn criterion_8_threshold_stability() {
    // Converged error at pi=0.5 must not care about the clamp threshold.
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let seeds = 0..5u64;
    let count = seeds.clone().count() as f64;
    let mut means = Vec::new();
    for &delta in &deltas {
        let mut mean = 0.0;
        for seed in seeds.clone() {
            let (labels, model) =
                generate(&SynthConfig::paper_binary(100, 1000, 0.5, seed)).unwrap();
            let truth = Truth::from_model(&model);
            let mut config = RunConfig::new(Method::OptDs, 2);
            config.seed = seed;
            config.delta = delta;
            config.em_rounds = EmRounds::Converge;
            let outcome = run(&config, &labels, Some(&truth)).unwrap();
            mean += outcome.report.prediction_error_percent.unwrap() / count;
        }
        means.push(mean);
    }
    let spread = means.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - means.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    verdict(
        8,
        spread < 1.0,
        &format!("error spread {spread:.3} across thresholds (means {means:?})"),
    );
}
