//! Domain types shared by every aggregation algorithm: the sparse label
//! matrix, per-worker confusion matrices, class priors, posteriors, and the
//! ground-truth model used by the synthetic harness.
//!
//! Conventions: workers, items, and class labels are 0-based throughout the
//! library; the file formats in [`crate::dataio`] translate to and from the
//! 1-based ids used externally. A confusion matrix is column-stochastic with
//! entry `(c, l)` holding the probability that the worker assigns label `c`
//! to an item whose true class is `l`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sparse assignment of categorical labels by `m` workers to `n` items.
///
/// Absent (worker, item) pairs mean "worker did not label this item" and
/// correspond to the zero vector in the one-hot view used by the moment
/// computations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservedLabels {
    m: usize,
    n: usize,
    k: usize,
    by_worker: Vec<Vec<(usize, usize)>>,
    by_item: Vec<Vec<(usize, usize)>>,
    total: usize,
}

impl ObservedLabels {
    /// Builds a label matrix from `(worker, item, label)` triples and
    /// validates every invariant: indices in range, labels in `0..k`, at
    /// most one label per pair, and at least one label overall.
    pub fn new(
        m: usize,
        n: usize,
        k: usize,
        entries: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidConfig(format!(
                "need positive worker and item counts, got m={m}, n={n}"
            )));
        }
        let mut by_worker: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
        let mut total = 0usize;
        for (i, j, c) in entries {
            if i >= m {
                return Err(Error::IndexOutOfRange { what: "worker", index: i, bound: m });
            }
            if j >= n {
                return Err(Error::IndexOutOfRange { what: "item", index: j, bound: n });
            }
            if c >= k {
                return Err(Error::LabelOutOfRange { worker: Some(i), item: j, label: c, k });
            }
            by_worker[i].push((j, c));
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut by_item: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (i, row) in by_worker.iter_mut().enumerate() {
            row.sort_unstable();
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::DuplicateLabel { worker: i, item: w[0].0 });
                }
            }
            for &(j, c) in row.iter() {
                by_item[j].push((i, c));
            }
        }
        Ok(Self { m, n, k, by_worker, by_item, total })
    }

    pub fn num_workers(&self) -> usize {
        self.m
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// Total number of stored labels.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Labels given by worker `i`, as `(item, label)` pairs sorted by item.
    pub fn worker_labels(&self, i: usize) -> &[(usize, usize)] {
        &self.by_worker[i]
    }

    /// Labels received by item `j`, as `(worker, label)` pairs.
    pub fn item_labels(&self, j: usize) -> &[(usize, usize)] {
        &self.by_item[j]
    }

    /// All labels in worker-major, item-ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.by_worker
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, c)| (i, j, c)))
    }

    /// Fraction of items labeled by worker `i`; the empirical sparsity
    /// estimate used for reporting only (inference never needs it).
    pub fn coverage(&self, i: usize) -> f64 {
        self.by_worker[i].len() as f64 / self.n as f64
    }

    /// Re-checks every construction invariant; always passes for values
    /// built through [`ObservedLabels::new`].
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::EmptyDataset);
        }
        for (i, row) in self.by_worker.iter().enumerate() {
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::DuplicateLabel { worker: i, item: w[0].0 });
                }
            }
            for &(j, c) in row {
                if j >= self.n {
                    return Err(Error::IndexOutOfRange { what: "item", index: j, bound: self.n });
                }
                if c >= self.k {
                    return Err(Error::LabelOutOfRange {
                        worker: Some(i),
                        item: j,
                        label: c,
                        k: self.k,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Replaces each existing label independently, with probability `k*rho`, by
/// a uniform draw from the `k` classes (which may equal the original label).
/// Absent entries stay absent. Deterministic given `seed`: labels are
/// visited in worker-major, item-ascending order, consuming one uniform
/// variate for the replacement decision and, only on replacement, one
/// integer draw.
pub fn inject_label_noise(labels: &ObservedLabels, rho: f64, seed: u64) -> Result<ObservedLabels> {
    let k = labels.num_classes();
    let replace_prob = k as f64 * rho;
    if !(0.0..=1.0).contains(&replace_prob) || rho < 0.0 {
        return Err(Error::InvalidRho { rho, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(usize, usize, usize)> = labels
        .iter()
        .map(|(i, j, c)| {
            if rng.gen::<f64>() < replace_prob {
                (i, j, rng.gen_range(0..k))
            } else {
                (i, j, c)
            }
        })
        .collect();
    ObservedLabels::new(labels.num_workers(), labels.num_items(), k, entries)
}

/// A k-by-k column-stochastic matrix; column `l` is the label distribution a
/// worker produces on items of true class `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    mat: DMatrix<f64>,
}

/// Tolerance for stochasticity checks (column and row sums).
pub const STOCHASTIC_TOL: f64 = 1e-9;

impl ConfusionMatrix {
    /// Validates that `mat` is square with side at least 2, entries in
    /// `[0, 1]`, and columns summing to 1 within `1e-9`.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let k = mat.nrows();
        if k < 2 || mat.ncols() != k {
            return Err(Error::InvalidMatrix(format!(
                "confusion matrix must be square with k >= 2, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        for l in 0..k {
            let mut sum = 0.0;
            for c in 0..k {
                let v = mat[(c, l)];
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({c},{l}) = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMatrix(format!("column {l} sums to {sum}")));
            }
        }
        Ok(Self { mat })
    }

    /// The identity confusion matrix of a perfectly accurate worker.
    pub fn identity(k: usize) -> Self {
        Self { mat: DMatrix::identity(k, k) }
    }

    /// The uninformative matrix with every entry `1/k`.
    pub fn uniform(k: usize) -> Self {
        Self { mat: DMatrix::from_element(k, k, 1.0 / k as f64) }
    }

    /// The one-coin matrix: `p` on the diagonal, `(1-p)/(k-1)` elsewhere.
    pub fn one_coin(k: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidMatrix(format!("accuracy {p} outside [0,1]")));
        }
        let off = (1.0 - p) / (k as f64 - 1.0);
        let mat = DMatrix::from_fn(k, k, |c, l| if c == l { p } else { off });
        Ok(Self { mat })
    }

    /// Clamps every entry of an arbitrary real matrix up to at least `delta`
    /// and normalizes each column to sum 1, repeating once if normalization
    /// pushed an entry back under the floor. Two passes always suffice: after
    /// one normalization a column sums to 1, so the next clamp inflates its
    /// sum to at most `1 + k*delta`, and dividing by that keeps every entry
    /// at or above `delta / (1 + k*delta)`.
    pub fn from_raw_thresholded(mut mat: DMatrix<f64>, delta: f64) -> Self {
        debug_assert!(delta > 0.0);
        let k = mat.nrows();
        let floor = delta / (1.0 + k as f64 * delta);
        for _ in 0..2 {
            mat.iter_mut().for_each(|v| {
                if !v.is_finite() || *v < delta {
                    *v = delta;
                }
            });
            for mut col in mat.column_iter_mut() {
                let sum: f64 = col.iter().sum();
                col /= sum;
            }
            if mat.iter().all(|&v| v >= floor) {
                break;
            }
        }
        Self { mat }
    }

    /// Applies the clamp-then-normalize post-processing to this matrix.
    pub fn threshold_normalize(&self, delta: f64) -> Self {
        Self::from_raw_thresholded(self.mat.clone(), delta)
    }

    pub fn k(&self) -> usize {
        self.mat.nrows()
    }

    /// Probability of assigning label `c` to an item of true class `l`.
    #[inline]
    pub fn get(&self, c: usize, l: usize) -> f64 {
        self.mat[(c, l)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Squared Frobenius distance to another confusion matrix.
    pub fn frobenius_sq_diff(&self, other: &ConfusionMatrix) -> f64 {
        (&self.mat - &other.mat).norm_squared()
    }
}

/// A strictly positive probability vector over the `k` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior {
    w: Vec<f64>,
}

impl ClassPrior {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::InvalidMatrix(format!(
                "prior needs at least 2 classes, got {}",
                w.len()
            )));
        }
        if w.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidMatrix("prior entries must be positive".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMatrix(format!("prior sums to {sum}")));
        }
        Ok(Self { w })
    }

    pub fn uniform(k: usize) -> Self {
        Self { w: vec![1.0 / k as f64; k] }
    }

    pub fn k(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn get(&self, l: usize) -> f64 {
        self.w[l]
    }

    pub fn min_weight(&self) -> f64 {
        self.w.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Row-stochastic label beliefs per item plus the hard predictions derived
/// from them (argmax, lowest class index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    beliefs: DMatrix<f64>,
    predictions: Vec<usize>,
}

impl Posterior {
    /// Validates row-stochasticity and derives predictions.
    pub fn from_beliefs(beliefs: DMatrix<f64>) -> Result<Self> {
        let k = beliefs.ncols();
        if k < 2 {
            return Err(Error::InvalidMatrix(format!("posterior needs k >= 2, got {k}")));
        }
        for j in 0..beliefs.nrows() {
            let mut sum = 0.0;
            for l in 0..k {
                let v = beliefs[(j, l)];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::InvalidMatrix(format!(
                        "belief ({j},{l}) = {v} is negative or non-finite"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMatrix(format!("belief row {j} sums to {sum}")));
            }
        }
        let predictions = (0..beliefs.nrows()).map(|j| row_argmax(&beliefs, j)).collect();
        Ok(Self { beliefs, predictions })
    }

    pub fn num_items(&self) -> usize {
        self.beliefs.nrows()
    }

    pub fn k(&self) -> usize {
        self.beliefs.ncols()
    }

    pub fn beliefs(&self) -> &DMatrix<f64> {
        &self.beliefs
    }

    #[inline]
    pub fn belief(&self, j: usize, l: usize) -> f64 {
        self.beliefs[(j, l)]
    }

    /// Hard label for each item: the lowest class index attaining the row
    /// maximum of the beliefs.
    pub fn predictions(&self) -> &[usize] {
        &self.predictions
    }
}

fn row_argmax(beliefs: &DMatrix<f64>, j: usize) -> usize {
    let mut best = 0;
    for l in 1..beliefs.ncols() {
        if beliefs[(j, l)] > beliefs[(j, best)] {
            best = l;
        }
    }
    best
}

/// Everything the synthetic generator knows: the prior, every worker's true
/// confusion matrix and sparsity, and the true item labels. Used by the
/// harness and diagnostics only; inference never sees it.
#[derive(Clone, Debug)]
pub struct GroundTruthModel {
    prior: ClassPrior,
    confusions: Vec<ConfusionMatrix>,
    sparsity: Vec<f64>,
    truth: Vec<usize>,
}

impl GroundTruthModel {
    pub fn new(
        prior: ClassPrior,
        confusions: Vec<ConfusionMatrix>,
        sparsity: Vec<f64>,
        truth: Vec<usize>,
    ) -> Result<Self> {
        let k = prior.k();
        if confusions.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one worker".into()));
        }
        if confusions.iter().any(|c| c.k() != k) {
            return Err(Error::InvalidConfig("confusion matrix size disagrees with prior".into()));
        }
        if sparsity.len() != confusions.len() {
            return Err(Error::InvalidConfig("one sparsity value per worker required".into()));
        }
        if sparsity.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidConfig("sparsity values must lie in (0,1]".into()));
        }
        if truth.is_empty() || truth.iter().any(|&y| y >= k) {
            return Err(Error::InvalidConfig("true labels must be nonempty and within 0..k".into()));
        }
        Ok(Self { prior, confusions, sparsity, truth })
    }

    pub fn num_workers(&self) -> usize {
        self.confusions.len()
    }

    pub fn num_items(&self) -> usize {
        self.truth.len()
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }

    pub fn confusions(&self) -> &[ConfusionMatrix] {
        &self.confusions
    }

    pub fn sparsity(&self) -> &[f64] {
        &self.sparsity
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn pi_min(&self) -> f64 {
        self.sparsity.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// The collective discriminability of the worker pool: the minimum over
/// ordered class pairs `l != l'` of the sparsity-weighted, worker-averaged
/// KL divergence between confusion columns `l` and `l'` (natural log).
pub fn mean_kl_separation(model: &GroundTruthModel) -> Result<f64> {
    let k = model.k();
    let m = model.num_workers();
    for (i, conf) in model.confusions().iter().enumerate() {
        for l in 0..k {
            for c in 0..k {
                if conf.get(c, l) == 0.0 {
                    return Err(Error::ZeroEntry { worker: i, row: c, col: l });
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for l in 0..k {
        for lp in 0..k {
            if l == lp {
                continue;
            }
            let mut acc = 0.0;
            for (i, conf) in model.confusions().iter().enumerate() {
                let mut kl = 0.0;
                for c in 0..k {
                    let p = conf.get(c, l);
                    kl += p * (p / conf.get(c, lp)).ln();
                }
                acc += model.sparsity()[i] * kl;
            }
            best = best.min(acc / m as f64);
        }
    }
    Ok(best)
}
