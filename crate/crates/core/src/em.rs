//! Stage 2: EM refinement of worker confusion matrices.
//!
//! Alternates the posterior update (E-step) and the confusion re-estimate
//! (M-step) of the Dawid-Skene likelihood from any initialization, either
//! the spectral stage or majority voting. All products over workers are
//! computed as log-sums with max-subtraction; raw products underflow long
//! before realistic crowd sizes.

use nalgebra::DMatrix;

use crate::baselines::majority_vote;
use crate::error::{Error, Result};
use crate::model::{ConfusionMatrix, ObservedLabels, Posterior};

/// Round budget for [`run_em`]: a fixed number of full (E, M) rounds, or
/// iterate until the log-marginal change drops below 1e-10 (capped at 500
/// rounds). Parses from a count or the string `converge`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmRounds {
    Fixed(usize),
    Converge,
}

impl std::fmt::Display for EmRounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmRounds::Fixed(r) => write!(f, "{r}"),
            EmRounds::Converge => f.write_str("converge"),
        }
    }
}

impl std::str::FromStr for EmRounds {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "converge" {
            return Ok(EmRounds::Converge);
        }
        match s.parse::<usize>() {
            Ok(r) if r >= 1 => Ok(EmRounds::Fixed(r)),
            _ => Err(format!("expected a round count >= 1 or 'converge', got '{s}'")),
        }
    }
}

/// Maximum rounds under [`EmRounds::Converge`].
pub const MAX_CONVERGE_ROUNDS: usize = 500;
/// Absolute log-marginal change below which [`EmRounds::Converge`] stops.
pub const CONVERGE_TOL: f64 = 1e-10;

/// EM state after `iteration` full (E, M) rounds: `posterior` is the last
/// E-step output (computed from the previous round's confusions),
/// `confusions` the last M-step output, and `log_marginal` the likelihood
/// of `confusions` with the uniform-prior constant dropped and unlabeled
/// items skipped.
#[derive(Clone, Debug)]
pub struct EmState {
    pub confusions: Vec<ConfusionMatrix>,
    pub posterior: Posterior,
    pub log_marginal: f64,
    pub iteration: usize,
}

/// Human-readable statement of the likelihood convention, for report
/// metadata.
pub const LOG_MARGINAL_CONVENTION: &str =
    "uniform prior constant dropped; items with no labels skipped";

fn check_worker_count(labels: &ObservedLabels, confusions: &[ConfusionMatrix]) -> Result<()> {
    if confusions.len() != labels.num_workers() {
        return Err(Error::InvalidConfig(format!(
            "{} confusion matrices for {} workers",
            confusions.len(),
            labels.num_workers()
        )));
    }
    for (i, conf) in confusions.iter().enumerate() {
        if conf.k() != labels.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "confusion matrix {i} has {} classes, dataset has {}",
                conf.k(),
                labels.num_classes()
            )));
        }
    }
    Ok(())
}

/// Accumulates the n x k matrix of per-item, per-class log scores
/// `sum_i sum_c 1(z_ij = e_c) log mu_ilc`. Zero confusion entries
/// contribute -inf, which merely zeroes the corresponding candidate after
/// exponentiation; an item whose candidates are all -inf has no defined
/// posterior and is reported through [`zero_attribution`].
fn log_scores(labels: &ObservedLabels, confusions: &[ConfusionMatrix]) -> DMatrix<f64> {
    let n = labels.num_items();
    let k = labels.num_classes();
    let logmu: Vec<DMatrix<f64>> = confusions
        .iter()
        .map(|conf| conf.matrix().map(f64::ln))
        .collect();
    let mut scores = DMatrix::zeros(n, k);
    for (i, j, c) in labels.iter() {
        for l in 0..k {
            scores[(j, l)] += logmu[i][(c, l)];
        }
    }
    scores
}

/// Picks the error to report when item `j`'s posterior is undefined
/// (every candidate class has probability zero): the first of the item's
/// labels whose confusion row contains a zero entry.
fn zero_attribution(labels: &ObservedLabels, confusions: &[ConfusionMatrix], j: usize) -> Error {
    let k = labels.num_classes();
    for &(i, c) in labels.item_labels(j) {
        if (0..k).any(|l| confusions[i].get(c, l) == 0.0) {
            return Error::ZeroProbability { worker: i, label: c };
        }
    }
    let &(i, c) = labels.item_labels(j).first().expect("undefined posterior needs labels");
    Error::ZeroProbability { worker: i, label: c }
}

/// E-step: the posterior over true classes per item, proportional to the
/// exponentiated log scores (max-subtracted), with unlabeled items
/// receiving the uniform row. Zero confusion entries zero out candidate
/// classes; an item left with no possible class at all is a
/// [`Error::ZeroProbability`].
pub fn e_step(labels: &ObservedLabels, confusions: &[ConfusionMatrix]) -> Result<Posterior> {
    check_worker_count(labels, confusions)?;
    let n = labels.num_items();
    let k = labels.num_classes();
    let scores = log_scores(labels, confusions);
    let uniform = 1.0 / k as f64;
    let mut beliefs = DMatrix::zeros(n, k);
    for j in 0..n {
        if labels.item_labels(j).is_empty() {
            for l in 0..k {
                beliefs[(j, l)] = uniform;
            }
            continue;
        }
        let max = (0..k).map(|l| scores[(j, l)]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(zero_attribution(labels, confusions, j));
        }
        let mut sum = 0.0;
        for l in 0..k {
            let e = (scores[(j, l)] - max).exp();
            beliefs[(j, l)] = e;
            sum += e;
        }
        for l in 0..k {
            beliefs[(j, l)] /= sum;
        }
    }
    Posterior::from_beliefs(beliefs)
}

/// M-step: per worker and class, the posterior-weighted frequency of each
/// assigned label. A class column with zero accumulated mass (the worker
/// labeled nothing relevant) becomes the uniform column.
pub fn m_step(labels: &ObservedLabels, posterior: &Posterior) -> Vec<ConfusionMatrix> {
    let m = labels.num_workers();
    let k = labels.num_classes();
    let uniform = 1.0 / k as f64;
    let beliefs = posterior.beliefs();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut counts = DMatrix::zeros(k, k);
        for &(j, c) in labels.worker_labels(i) {
            for l in 0..k {
                counts[(c, l)] += beliefs[(j, l)];
            }
        }
        for l in 0..k {
            let denom: f64 = (0..k).map(|c| counts[(c, l)]).sum();
            if denom <= 0.0 {
                for c in 0..k {
                    counts[(c, l)] = uniform;
                }
            } else {
                for c in 0..k {
                    counts[(c, l)] /= denom;
                }
            }
        }
        out.push(ConfusionMatrix::new(counts).expect("normalized count ratios"));
    }
    out
}

/// Marginal log-likelihood of the confusions given the observed labels,
/// with the uniform-prior constant dropped and unlabeled items skipped
/// (see [`LOG_MARGINAL_CONVENTION`]).
pub fn log_marginal_likelihood(
    labels: &ObservedLabels,
    confusions: &[ConfusionMatrix],
) -> Result<f64> {
    check_worker_count(labels, confusions)?;
    let k = labels.num_classes();
    let scores = log_scores(labels, confusions);
    let mut total = 0.0;
    for j in 0..labels.num_items() {
        if labels.item_labels(j).is_empty() {
            continue;
        }
        let max = (0..k).map(|l| scores[(j, l)]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(zero_attribution(labels, confusions, j));
        }
        let sum: f64 = (0..k).map(|l| (scores[(j, l)] - max).exp()).sum();
        total += max + sum.ln();
    }
    Ok(total)
}

/// Runs full (E, M) rounds from the given initialization, invoking
/// `on_round` with the state after each round; [`run_em`] is the
/// callback-free convenience wrapper.
pub fn em_loop(
    labels: &ObservedLabels,
    init_confusions: &[ConfusionMatrix],
    rounds: EmRounds,
    mut on_round: impl FnMut(&EmState),
) -> Result<EmState> {
    check_worker_count(labels, init_confusions)?;
    let budget = match rounds {
        EmRounds::Fixed(0) => {
            return Err(Error::InvalidConfig("EM requires at least one round".into()))
        }
        EmRounds::Fixed(r) => r,
        EmRounds::Converge => MAX_CONVERGE_ROUNDS,
    };
    let mut confusions = init_confusions.to_vec();
    let mut previous_ll: Option<f64> = None;
    let mut state = None;
    for round in 1..=budget {
        let posterior = e_step(labels, &confusions)?;
        confusions = m_step(labels, &posterior);
        let log_marginal = log_marginal_likelihood(labels, &confusions)?;
        let current = EmState {
            confusions: confusions.clone(),
            posterior,
            log_marginal,
            iteration: round,
        };
        on_round(&current);
        state = Some(current);
        if rounds == EmRounds::Converge {
            if let Some(prev) = previous_ll {
                if (log_marginal - prev).abs() < CONVERGE_TOL {
                    break;
                }
            }
            previous_ll = Some(log_marginal);
        }
    }
    Ok(state.expect("at least one round"))
}

/// Alternates E- and M-steps from `init_confusions` for the given round
/// budget and returns the final state; predictions are the argmax of the
/// final posterior (lowest index wins ties).
pub fn run_em(
    labels: &ObservedLabels,
    init_confusions: &[ConfusionMatrix],
    rounds: EmRounds,
) -> Result<EmState> {
    em_loop(labels, init_confusions, rounds, |_| {})
}

/// The MV-D&S initializer: one M-step on the majority-vote posterior,
/// with every matrix clamped to `delta` and column-renormalized so the
/// subsequent E-step sees strictly positive entries.
pub fn majority_vote_init(labels: &ObservedLabels, delta: f64) -> Vec<ConfusionMatrix> {
    let posterior = majority_vote(labels);
    m_step(labels, &posterior)
        .into_iter()
        .map(|conf| ConfusionMatrix::from_raw_thresholded(conf.matrix().clone(), delta))
        .collect()
}
