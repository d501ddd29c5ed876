//! Method drivers: configure a pipeline, execute it on a dataset, and
//! collect metrics.
//!
//! Every run produces a [`MetricsReport`] whose per-round traces include
//! the initialization as round 0: for Opt-D&S the spectral confusions and
//! the posterior they imply, for MV-D&S the vote posterior and the
//! clamped M-step it seeds, for the one-coin model the moment estimates.
//! Rounds 1..=R are the states after each full EM round. Prediction and
//! confusion errors are filled in when ground truth is supplied.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{majority_vote, majority_vote_hard};
use crate::em::{
    e_step, em_loop, log_marginal_likelihood, m_step, EmRounds, LOG_MARGINAL_CONVENTION,
};
use crate::error::{Error, Result};
use crate::model::{ConfusionMatrix, GroundTruthModel, ObservedLabels, Posterior};
use crate::onecoin::{
    init_accuracies, onecoin_e_step, onecoin_em_loop, onecoin_log_marginal, pairwise_stats,
    OneCoinOptions, SignReference,
};
use crate::spectral::{spectral_init, SpectralConfig};

/// The aggregation method to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Spectral initialization followed by EM.
    OptDs,
    /// Majority-vote initialization followed by EM.
    MvDs,
    /// Plain majority voting.
    Mv,
    /// One-coin moment initialization followed by one-coin EM.
    OneCoin,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::OptDs => "opt-ds",
            Method::MvDs => "mv-ds",
            Method::Mv => "mv",
            Method::OneCoin => "onecoin",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "opt-ds" => Ok(Method::OptDs),
            "mv-ds" => Ok(Method::MvDs),
            "mv" => Ok(Method::Mv),
            "onecoin" => Ok(Method::OneCoin),
            other => Err(format!(
                "unknown method '{other}' (expected opt-ds, mv-ds, mv, or onecoin)"
            )),
        }
    }
}

/// Everything a single run needs besides the data. `seed` drives the
/// worker partition directly and the tensor restarts through `seed + 1`.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: Method,
    pub k: usize,
    pub em_rounds: EmRounds,
    pub delta: f64,
    pub seed: u64,
    /// Use the one-hot majority-vote posterior instead of vote shares.
    pub mv_hard: bool,
    pub sign_reference: SignReference,
}

impl RunConfig {
    pub fn new(method: Method, k: usize) -> Self {
        Self {
            method,
            k,
            em_rounds: EmRounds::Fixed(10),
            delta: 1e-6,
            seed: 0,
            mv_hard: false,
            sign_reference: SignReference::default(),
        }
    }

    fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            partition_seed: self.seed,
            tensor_seed: self.seed.wrapping_add(1),
            delta: self.delta,
            ..SpectralConfig::default()
        }
    }

    fn validate(&self, labels: &ObservedLabels) -> Result<()> {
        if labels.num_classes() != self.k {
            return Err(Error::InvalidConfig(format!(
                "config says k={}, dataset has k={}",
                self.k,
                labels.num_classes()
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "threshold delta must lie in (0, 0.5), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Ground truth available to a run: per-item true classes (None where
/// unknown) and, for synthetic data, the true confusion matrices.
#[derive(Clone, Debug)]
pub struct Truth {
    pub labels: Vec<Option<usize>>,
    pub confusions: Option<Vec<ConfusionMatrix>>,
}

impl Truth {
    pub fn from_model(model: &GroundTruthModel) -> Self {
        Self {
            labels: model.truth().iter().map(|&y| Some(y)).collect(),
            confusions: Some(model.confusions().to_vec()),
        }
    }

    pub fn from_labels(labels: Vec<Option<usize>>) -> Self {
        Self { labels, confusions: None }
    }
}

/// Metrics of one run. Traces have `rounds_run + 1` entries (round 0 is
/// the initialization); the plain majority-vote method has zero rounds,
/// so its traces have a single entry.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub method: Method,
    pub prediction_error_percent: Option<f64>,
    pub confusion_error: Option<f64>,
    pub log_likelihood_trace: Option<Vec<f64>>,
    pub error_trace: Option<Vec<f64>>,
    pub confusion_error_trace: Option<Vec<f64>>,
    pub rounds_run: usize,
    pub evaluated_items: usize,
    pub fallback: bool,
    pub wall_seconds: f64,
    pub seed: u64,
    pub delta: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.12}"))
}

fn fmt_trace(t: &Option<Vec<f64>>) -> String {
    t.as_ref().map_or_else(
        || "NA".into(),
        |v| v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(","),
    )
}

impl MetricsReport {
    /// Key-value text rendering, one `key = value` per line, stable key
    /// order, `NA` for absent metrics.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("method", self.method.to_string());
        push("seed", self.seed.to_string());
        push("delta", format!("{:e}", self.delta));
        push("rounds_run", self.rounds_run.to_string());
        push("fallback", self.fallback.to_string());
        push("evaluated_items", self.evaluated_items.to_string());
        push("prediction_error_percent", fmt_opt(self.prediction_error_percent));
        push("confusion_error", fmt_opt(self.confusion_error));
        push("log_likelihood_trace", fmt_trace(&self.log_likelihood_trace));
        push("error_trace", fmt_trace(&self.error_trace));
        push("confusion_error_trace", fmt_trace(&self.confusion_error_trace));
        push("ll_convention", LOG_MARGINAL_CONVENTION.into());
        push("wall_seconds", format!("{:.6}", self.wall_seconds));
        out
    }
}

/// Everything a run produces: the posterior, hard predictions, final
/// parameter estimates where the method has them, and the metrics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub posterior: Posterior,
    pub predictions: Vec<usize>,
    pub confusions: Option<Vec<ConfusionMatrix>>,
    pub accuracies: Option<Vec<f64>>,
    pub report: MetricsReport,
}

fn prediction_error(predictions: &[usize], truth: &[Option<usize>]) -> (Option<f64>, usize) {
    let mut evaluated = 0usize;
    let mut wrong = 0usize;
    for (pred, t) in predictions.iter().zip(truth) {
        if let Some(y) = t {
            evaluated += 1;
            wrong += usize::from(pred != y);
        }
    }
    if evaluated == 0 {
        (None, 0)
    } else {
        (Some(100.0 * wrong as f64 / evaluated as f64), evaluated)
    }
}

fn confusion_error(estimates: &[ConfusionMatrix], truth: &[ConfusionMatrix]) -> f64 {
    estimates.iter().zip(truth).map(|(e, t)| e.frobenius_sq_diff(t)).sum()
}

fn check_truth(labels: &ObservedLabels, truth: &Truth) -> Result<()> {
    if truth.labels.len() != labels.num_items() {
        return Err(Error::InvalidConfig(format!(
            "truth covers {} items, dataset has {}",
            truth.labels.len(),
            labels.num_items()
        )));
    }
    if let Some(confusions) = &truth.confusions {
        if confusions.len() != labels.num_workers() {
            return Err(Error::InvalidConfig(format!(
                "truth has {} confusion matrices, dataset has {} workers",
                confusions.len(),
                labels.num_workers()
            )));
        }
    }
    Ok(())
}

/// Collects the per-round trace vectors for one run.
struct TraceCollector<'a> {
    truth: Option<&'a Truth>,
    ll: Vec<f64>,
    error: Vec<f64>,
    confusion: Vec<f64>,
}

impl<'a> TraceCollector<'a> {
    fn new(truth: Option<&'a Truth>) -> Self {
        Self { truth, ll: Vec::new(), error: Vec::new(), confusion: Vec::new() }
    }

    fn record(&mut self, ll: f64, predictions: &[usize], confusions: &[ConfusionMatrix]) {
        self.ll.push(ll);
        if let Some(truth) = self.truth {
            if let (Some(err), _) = prediction_error(predictions, &truth.labels) {
                self.error.push(err);
            }
            if let Some(true_confusions) = &truth.confusions {
                self.confusion.push(confusion_error(confusions, true_confusions));
            }
        }
    }

    fn into_traces(self) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let some = |v: Vec<f64>| if v.is_empty() { None } else { Some(v) };
        (some(self.ll), some(self.error), some(self.confusion))
    }
}

fn mv_initializer(
    labels: &ObservedLabels,
    delta: f64,
    hard: bool,
) -> (Vec<ConfusionMatrix>, Posterior) {
    let posterior = if hard { majority_vote_hard(labels) } else { majority_vote(labels) };
    let confusions = m_step(labels, &posterior)
        .into_iter()
        .map(|c| ConfusionMatrix::from_raw_thresholded(c.matrix().clone(), delta))
        .collect();
    (confusions, posterior)
}

/// Executes the configured method on a dataset. Opt-D&S falls back to the
/// majority-vote initialization when the moment stage is ill-conditioned,
/// recording the fallback in the report; all other errors propagate.
pub fn run(
    config: &RunConfig,
    labels: &ObservedLabels,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    config.validate(labels)?;
    if let Some(truth) = truth {
        check_truth(labels, truth)?;
    }
    let start = Instant::now();
    let outcome = match config.method {
        Method::Mv => run_mv(config, labels, truth),
        Method::OptDs | Method::MvDs => run_ds(config, labels, truth)?,
        Method::OneCoin => run_onecoin(config, labels, truth)?,
    };
    let mut outcome = outcome;
    outcome.report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(outcome)
}

fn base_report(config: &RunConfig) -> MetricsReport {
    MetricsReport {
        method: config.method,
        prediction_error_percent: None,
        confusion_error: None,
        log_likelihood_trace: None,
        error_trace: None,
        confusion_error_trace: None,
        rounds_run: 0,
        evaluated_items: 0,
        fallback: false,
        wall_seconds: 0.0,
        seed: config.seed,
        delta: config.delta,
    }
}

fn run_mv(config: &RunConfig, labels: &ObservedLabels, truth: Option<&Truth>) -> RunOutcome {
    let posterior =
        if config.mv_hard { majority_vote_hard(labels) } else { majority_vote(labels) };
    let predictions = posterior.predictions().to_vec();
    let mut report = base_report(config);
    if let Some(truth) = truth {
        let (err, evaluated) = prediction_error(&predictions, &truth.labels);
        report.prediction_error_percent = err;
        report.evaluated_items = evaluated;
        report.error_trace = err.map(|e| vec![e]);
    }
    RunOutcome { posterior, predictions, confusions: None, accuracies: None, report }
}

fn run_ds(
    config: &RunConfig,
    labels: &ObservedLabels,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    let mut fallback = false;
    let (init_confusions, init_posterior) = match config.method {
        Method::MvDs => mv_initializer(labels, config.delta, config.mv_hard),
        _ => match spectral_init(labels, &config.spectral()) {
            Ok(init) => {
                let posterior = e_step(labels, &init.confusions)?;
                (init.confusions, posterior)
            }
            Err(Error::IllConditionedMoments { .. }) | Err(Error::NotPositiveDefinite { .. }) => {
                fallback = true;
                mv_initializer(labels, config.delta, config.mv_hard)
            }
            Err(e) => return Err(e),
        },
    };

    let mut traces = TraceCollector::new(truth);
    traces.record(
        log_marginal_likelihood(labels, &init_confusions)?,
        init_posterior.predictions(),
        &init_confusions,
    );
    let state = em_loop(labels, &init_confusions, config.em_rounds, |round| {
        traces.record(round.log_marginal, round.posterior.predictions(), &round.confusions);
    })?;

    let predictions = state.posterior.predictions().to_vec();
    let mut report = base_report(config);
    report.fallback = fallback;
    report.rounds_run = state.iteration;
    if let Some(truth) = truth {
        let (err, evaluated) = prediction_error(&predictions, &truth.labels);
        report.prediction_error_percent = err;
        report.evaluated_items = evaluated;
        if let Some(true_confusions) = &truth.confusions {
            report.confusion_error = Some(confusion_error(&state.confusions, true_confusions));
        }
    }
    let (ll, err, conf) = traces.into_traces();
    report.log_likelihood_trace = ll;
    report.error_trace = err;
    report.confusion_error_trace = conf;
    Ok(RunOutcome {
        posterior: state.posterior,
        predictions,
        confusions: Some(state.confusions),
        accuracies: None,
        report,
    })
}

fn one_coin_matrices(accuracies: &[f64], k: usize) -> Vec<ConfusionMatrix> {
    accuracies
        .iter()
        .map(|&p| ConfusionMatrix::one_coin(k, p).expect("accuracy within [0, 1]"))
        .collect()
}

fn run_onecoin(
    config: &RunConfig,
    labels: &ObservedLabels,
    truth: Option<&Truth>,
) -> Result<RunOutcome> {
    let options =
        OneCoinOptions { sign_reference: config.sign_reference, ..OneCoinOptions::default() };
    let stats = pairwise_stats(labels)?;
    let params = init_accuracies(&stats, config.k, &options)?;
    let init_posterior = onecoin_e_step(labels, &params.accuracies)?;

    let mut traces = TraceCollector::new(truth);
    traces.record(
        onecoin_log_marginal(labels, &params.accuracies)?,
        init_posterior.predictions(),
        &one_coin_matrices(&params.accuracies, config.k),
    );
    let state = onecoin_em_loop(
        labels,
        &params.accuracies,
        config.em_rounds,
        options.rho_floor,
        |round| {
            traces.record(
                round.log_marginal,
                round.posterior.predictions(),
                &one_coin_matrices(&round.accuracies, config.k),
            );
        },
    )?;

    let predictions = state.posterior.predictions().to_vec();
    let confusions = one_coin_matrices(&state.accuracies, config.k);
    let mut report = base_report(config);
    report.rounds_run = state.iteration;
    if let Some(truth) = truth {
        let (err, evaluated) = prediction_error(&predictions, &truth.labels);
        report.prediction_error_percent = err;
        report.evaluated_items = evaluated;
        if let Some(true_confusions) = &truth.confusions {
            report.confusion_error = Some(confusion_error(&confusions, true_confusions));
        }
    }
    let (ll, err, conf) = traces.into_traces();
    report.log_likelihood_trace = ll;
    report.error_trace = err;
    report.confusion_error_trace = conf;
    Ok(RunOutcome {
        posterior: state.posterior,
        predictions,
        confusions: Some(confusions),
        accuracies: Some(state.accuracies),
        report,
    })
}

/// Which synthetic parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVariable {
    N,
    Pi,
    Delta,
    EmRounds,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::N => "n",
            SweepVariable::Pi => "pi",
            SweepVariable::Delta => "delta",
            SweepVariable::EmRounds => "em-rounds",
        })
    }
}

impl FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "n" => Ok(SweepVariable::N),
            "pi" => Ok(SweepVariable::Pi),
            "delta" => Ok(SweepVariable::Delta),
            "em-rounds" => Ok(SweepVariable::EmRounds),
            other => Err(format!(
                "unknown sweep variable '{other}' (expected n, pi, delta, or em-rounds)"
            )),
        }
    }
}

/// A sweep: synthetic datasets from `synth` (re-seeded per trial), run
/// under `run` with `variable` set to each value in turn.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub run: RunConfig,
    pub synth: crate::synth::SynthConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials: usize,
}

/// One sweep result row; `trial` is None for the per-value mean rows.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub trial: Option<usize>,
    pub prediction_error_percent: Option<f64>,
    pub confusion_error: Option<f64>,
    pub log_marginal: Option<f64>,
    pub wall_seconds: f64,
}

fn apply_variable(
    variable: SweepVariable,
    value: f64,
    run: &mut RunConfig,
    synth: &mut crate::synth::SynthConfig,
) -> Result<()> {
    match variable {
        SweepVariable::N => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "n sweep values must be positive integers, got {value}"
                )));
            }
            synth.n = value as usize;
        }
        SweepVariable::Pi => synth.sparsity = value,
        SweepVariable::Delta => run.delta = value,
        SweepVariable::EmRounds => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "em-rounds sweep values must be positive integers, got {value}"
                )));
            }
            run.em_rounds = EmRounds::Fixed(value as usize);
        }
    }
    Ok(())
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v?;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Runs the sweep: one row per (value, trial) in order, followed by one
/// mean row per value. Trials reuse the same seeds across values, so
/// value-to-value comparisons are paired.
pub fn sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    if config.trials == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one trial".into()));
    }
    let mut rows = Vec::new();
    for &value in &config.values {
        let mut trial_rows = Vec::with_capacity(config.trials);
        for trial in 0..config.trials {
            let mut run_config = config.run.clone();
            let mut synth_config = config.synth.clone();
            apply_variable(config.variable, value, &mut run_config, &mut synth_config)?;
            synth_config.seed = config.synth.seed.wrapping_add(trial as u64);
            run_config.seed = config.run.seed.wrapping_add(trial as u64);
            let (labels, model) = crate::synth::generate(&synth_config)?;
            let truth = Truth::from_model(&model);
            let outcome = run(&run_config, &labels, Some(&truth))?;
            trial_rows.push(SweepRow {
                value,
                trial: Some(trial),
                prediction_error_percent: outcome.report.prediction_error_percent,
                confusion_error: outcome.report.confusion_error,
                log_marginal: outcome
                    .report
                    .log_likelihood_trace
                    .as_ref()
                    .and_then(|t| t.last().copied()),
                wall_seconds: outcome.report.wall_seconds,
            });
        }
        let mean = SweepRow {
            value,
            trial: None,
            prediction_error_percent: mean_of(
                trial_rows.iter().map(|r| r.prediction_error_percent),
            ),
            confusion_error: mean_of(trial_rows.iter().map(|r| r.confusion_error)),
            log_marginal: mean_of(trial_rows.iter().map(|r| r.log_marginal)),
            wall_seconds: trial_rows.iter().map(|r| r.wall_seconds).sum::<f64>()
                / trial_rows.len() as f64,
        };
        rows.extend(trial_rows);
        rows.push(mean);
    }
    Ok(rows)
}

/// Plot-ready columnar rendering of sweep rows: commented header, then
/// space-separated `value trial error confusion_error log_marginal wall`
/// lines with `mean` in the trial column for aggregate rows.
pub fn render_sweep_table(config: &SweepConfig, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# sweep variable={} method={} trials={}\n",
        config.variable, config.run.method, config.trials
    ));
    out.push_str(
        "# columns: value trial prediction_error_percent confusion_error log_marginal wall_seconds\n",
    );
    for row in rows {
        let trial = row.trial.map_or_else(|| "mean".into(), |t| t.to_string());
        out.push_str(&format!(
            "{} {} {} {} {} {:.6}\n",
            row.value,
            trial,
            fmt_opt(row.prediction_error_percent),
            fmt_opt(row.confusion_error),
            fmt_opt(row.log_marginal),
            row.wall_seconds
        ));
    }
    out
}
