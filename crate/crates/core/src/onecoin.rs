//! The one-coin specialization: each worker is a single accuracy
//! parameter `p_i` (correct with probability `p_i`, any specific wrong
//! label with probability `(1 - p_i)/(k - 1)`).
//!
//! Initialization is method-of-moments on pairwise agreement statistics;
//! refinement is the same EM alternation as the general model, collapsed
//! to scalars. Designed for dense labels but generalized to sparse data by
//! computing agreement over co-labeled items and normalizing the update
//! by each worker's label count.

use nalgebra::DMatrix;

use crate::em::{EmRounds, CONVERGE_TOL, MAX_CONVERGE_ROUNDS};
use crate::error::{Error, Result};
use crate::model::{ObservedLabels, Posterior};

/// Default clamp keeping accuracies away from {0, 1} so the EM logs stay
/// finite.
pub const RHO_FLOOR: f64 = 1e-6;

/// Which worker anchors the sign in the initialization formula. The
/// pairwise statistics only identify `|p_i - 1/k|` up to a global
/// mirroring, so every worker's sign must be taken relative to one shared
/// reference; the fixed reading uses the first worker's chosen partner.
/// The per-worker reading (each `i` signed against its own partner) is
/// exposed for comparison but breaks the global orientation logic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignReference {
    #[default]
    FixedWorkerOne,
    PerWorker,
}

/// Options for [`init_accuracies`].
#[derive(Clone, Debug)]
pub struct OneCoinOptions {
    pub sign_reference: SignReference,
    pub rho_floor: f64,
}

impl Default for OneCoinOptions {
    fn default() -> Self {
        Self { sign_reference: SignReference::FixedWorkerOne, rho_floor: RHO_FLOOR }
    }
}

/// Moment-initialized one-coin parameters: the accuracy estimates, the
/// partner pair chosen for each worker, and the pairwise agreement
/// statistics they came from.
#[derive(Clone, Debug)]
pub struct OneCoinParams {
    pub accuracies: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub stats: DMatrix<f64>,
}

/// Rescaled pairwise agreement: `N_ab = ((k-1)/k) (agreement fraction
/// between a and b over co-labeled items - 1/k)`, symmetric with an unused
/// zero diagonal. In expectation `N_ab = (p_a - 1/k)(p_b - 1/k)`.
pub fn pairwise_stats(labels: &ObservedLabels) -> Result<DMatrix<f64>> {
    let m = labels.num_workers();
    let k = labels.num_classes() as f64;
    let mut stats = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a + 1..m {
            // Both label lists are item-sorted; intersect by merge.
            let (mut ia, mut ib) = (0, 0);
            let (la, lb) = (labels.worker_labels(a), labels.worker_labels(b));
            let mut shared = 0u64;
            let mut agreed = 0u64;
            while ia < la.len() && ib < lb.len() {
                match la[ia].0.cmp(&lb[ib].0) {
                    std::cmp::Ordering::Less => ia += 1,
                    std::cmp::Ordering::Greater => ib += 1,
                    std::cmp::Ordering::Equal => {
                        shared += 1;
                        agreed += u64::from(la[ia].1 == lb[ib].1);
                        ia += 1;
                        ib += 1;
                    }
                }
            }
            if shared == 0 {
                return Err(Error::NoOverlap { a, b });
            }
            let n_ab = (k - 1.0) / k * (agreed as f64 / shared as f64 - 1.0 / k);
            stats[(a, b)] = n_ab;
            stats[(b, a)] = n_ab;
        }
    }
    Ok(stats)
}

/// For each worker, the pair of other workers with the largest `|N_ab|`
/// (first maximum in lexicographic order on ties).
fn best_pairs(stats: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let m = stats.nrows();
    (0..m)
        .map(|i| {
            let mut best = (0, 0);
            let mut best_abs = f64::NEG_INFINITY;
            for a in 0..m {
                if a == i {
                    continue;
                }
                for b in a + 1..m {
                    if b == i {
                        continue;
                    }
                    let v = stats[(a, b)].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = (a, b);
                    }
                }
            }
            best
        })
        .collect()
}

/// Moment initialization of the accuracies: for each worker `i` with
/// partner pair `(a_i, b_i)`,
/// `p_i = 1/k + sign * sqrt(N_{i,a_i} N_{i,b_i} / N_{a_i,b_i})`,
/// where the sign is that of `N` between `i` and the shared reference
/// partner (+1 for the reference itself) and a negative square-root
/// argument clamps to zero. If the mean estimate falls below `1/k` the
/// whole vector is mirrored (`p <- 2/k - p`), and every entry is finally
/// clamped into `[rho_floor, 1 - rho_floor]`.
pub fn init_accuracies(
    stats: &DMatrix<f64>,
    k: usize,
    options: &OneCoinOptions,
) -> Result<OneCoinParams> {
    let m = stats.nrows();
    if m < 3 {
        return Err(Error::TooFewWorkers { m });
    }
    let pairs = best_pairs(stats);
    let reference = pairs[0].0;
    let inv_k = 1.0 / k as f64;
    let mut accuracies = Vec::with_capacity(m);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let denom = stats[(a, b)];
        if denom == 0.0 {
            return Err(Error::DegeneratePair { worker: i });
        }
        let arg = stats[(i, a)] * stats[(i, b)] / denom;
        let magnitude = arg.max(0.0).sqrt();
        let anchor = match options.sign_reference {
            SignReference::FixedWorkerOne => reference,
            SignReference::PerWorker => a,
        };
        let sign = if i == anchor {
            1.0
        } else if stats[(i, anchor)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        accuracies.push(inv_k + sign * magnitude);
    }
    let mean = accuracies.iter().sum::<f64>() / m as f64;
    if mean < inv_k {
        for p in &mut accuracies {
            *p = 2.0 * inv_k - *p;
        }
    }
    for p in &mut accuracies {
        *p = p.clamp(options.rho_floor, 1.0 - options.rho_floor);
    }
    Ok(OneCoinParams { accuracies, pairs, stats: stats.clone() })
}

/// One-coin EM state after `iteration` rounds; mirrors the general model's
/// state shape.
#[derive(Clone, Debug)]
pub struct OneCoinState {
    pub accuracies: Vec<f64>,
    pub posterior: Posterior,
    pub log_marginal: f64,
    pub iteration: usize,
}

fn check_accuracies(labels: &ObservedLabels, accuracies: &[f64]) -> Result<()> {
    if accuracies.len() != labels.num_workers() {
        return Err(Error::InvalidConfig(format!(
            "{} accuracies for {} workers",
            accuracies.len(),
            labels.num_workers()
        )));
    }
    for (i, &p) in accuracies.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ZeroProbability { worker: i, label: 0 });
        }
    }
    Ok(())
}

/// Per-item, per-class log scores under the one-coin likelihood: a match
/// contributes `log p_i`, a mismatch `log((1 - p_i)/(k - 1))`, absent
/// labels nothing.
fn onecoin_log_scores(labels: &ObservedLabels, accuracies: &[f64]) -> DMatrix<f64> {
    let n = labels.num_items();
    let k = labels.num_classes();
    let mut scores = DMatrix::zeros(n, k);
    for (i, j, c) in labels.iter() {
        let p = accuracies[i];
        let log_match = p.ln();
        let log_miss = ((1.0 - p) / (k as f64 - 1.0)).ln();
        for l in 0..k {
            scores[(j, l)] += if l == c { log_match } else { log_miss };
        }
    }
    scores
}

fn posterior_from_scores(labels: &ObservedLabels, scores: &DMatrix<f64>) -> Posterior {
    let n = labels.num_items();
    let k = labels.num_classes();
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
    Posterior::from_beliefs(beliefs).expect("normalized rows")
}

/// One-coin posterior update (the model's E-step).
pub fn onecoin_e_step(labels: &ObservedLabels, accuracies: &[f64]) -> Result<Posterior> {
    check_accuracies(labels, accuracies)?;
    Ok(posterior_from_scores(labels, &onecoin_log_scores(labels, accuracies)))
}

/// Marginal log-likelihood of the accuracies, same conventions as the
/// general model (uniform prior constant dropped, unlabeled items
/// skipped).
pub fn onecoin_log_marginal(labels: &ObservedLabels, accuracies: &[f64]) -> Result<f64> {
    check_accuracies(labels, accuracies)?;
    let scores = onecoin_log_scores(labels, accuracies);
    let k = labels.num_classes();
    let mut total = 0.0;
    for j in 0..labels.num_items() {
        if labels.item_labels(j).is_empty() {
            continue;
        }
        let max = (0..k).map(|l| scores[(j, l)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).map(|l| (scores[(j, l)] - max).exp()).sum();
        total += max + sum.ln();
    }
    Ok(total)
}

/// One-coin EM rounds from the given accuracies, invoking `on_round`
/// after each; [`run_onecoin_em`] is the callback-free wrapper.
pub fn onecoin_em_loop(
    labels: &ObservedLabels,
    init: &[f64],
    rounds: EmRounds,
    rho_floor: f64,
    mut on_round: impl FnMut(&OneCoinState),
) -> Result<OneCoinState> {
    check_accuracies(labels, init)?;
    let budget = match rounds {
        EmRounds::Fixed(0) => {
            return Err(Error::InvalidConfig("EM requires at least one round".into()))
        }
        EmRounds::Fixed(r) => r,
        EmRounds::Converge => MAX_CONVERGE_ROUNDS,
    };
    let mut accuracies = init.to_vec();
    let mut previous_ll: Option<f64> = None;
    let mut state = None;
    for round in 1..=budget {
        let posterior = onecoin_e_step(labels, &accuracies)?;
        // Accuracy update: mean posterior mass on each worker's own labels,
        // clamped into the open interval (the box-constrained maximizer).
        let beliefs = posterior.beliefs();
        for i in 0..labels.num_workers() {
            let assigned = labels.worker_labels(i);
            if assigned.is_empty() {
                continue;
            }
            let mass: f64 = assigned.iter().map(|&(j, c)| beliefs[(j, c)]).sum();
            accuracies[i] =
                (mass / assigned.len() as f64).clamp(rho_floor, 1.0 - rho_floor);
        }
        let log_marginal = onecoin_log_marginal(labels, &accuracies)?;
        let current = OneCoinState {
            accuracies: accuracies.clone(),
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

/// Alternates the one-coin posterior and accuracy updates from `init` for
/// the given budget; predictions are the final posterior's argmax.
pub fn run_onecoin_em(
    labels: &ObservedLabels,
    init: &[f64],
    rounds: EmRounds,
    rho_floor: f64,
) -> Result<OneCoinState> {
    onecoin_em_loop(labels, init, rounds, rho_floor, |_| {})
}
