//! Stage 1: estimate every worker's confusion matrix and the class prior
//! from second- and third-order label moments.
//!
//! Workers are partitioned into three groups whose per-item average label
//! vectors provide three conditionally independent views of each item's
//! true class. For each cyclic role assignment `(a, b, c)` of the groups,
//! two views are linearly corrected against the third, the corrected
//! second moment is whitened, and the whitened third moment is decomposed
//! by the robust tensor power method. The recovered factors are the
//! group-aggregated confusion columns and the class prior; a final plug-in
//! step transfers them to individual workers.
//!
//! All randomness (partitioning, power-method restarts, matching
//! tie-breaks) is driven by seeded generators, so the whole stage is
//! reproducible bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ClassPrior, ConfusionMatrix, ObservedLabels};
use crate::tensor::Tensor3;

/// Knobs for the spectral stage. Defaults follow the reference experimental
/// setup: 30 restarts and 100 iterations for the tensor power method,
/// threshold 1e-6, and a 1e-8 floor on singular values before any inverse.
#[derive(Clone, Debug)]
pub struct SpectralConfig {
    pub partition_seed: u64,
    pub tensor_seed: u64,
    pub restarts: usize,
    pub iterations: usize,
    pub delta: f64,
    pub sigma_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            partition_seed: 0,
            tensor_seed: 1,
            restarts: 30,
            iterations: 100,
            delta: 1e-6,
            sigma_tol: 1e-8,
        }
    }
}

/// Three disjoint, non-empty worker groups covering all workers.
#[derive(Clone, Debug)]
pub struct GroupPartition {
    groups: [Vec<usize>; 3],
    group_of: Vec<usize>,
}

impl GroupPartition {
    pub fn new(groups: [Vec<usize>; 3], m: usize) -> Result<Self> {
        let mut group_of = vec![usize::MAX; m];
        let mut seen = 0usize;
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidConfig(format!("group {g} is empty")));
            }
            for &i in members {
                if i >= m {
                    return Err(Error::IndexOutOfRange { what: "worker", index: i, bound: m });
                }
                if group_of[i] != usize::MAX {
                    return Err(Error::InvalidConfig(format!("worker {i} in two groups")));
                }
                group_of[i] = g;
                seen += 1;
            }
        }
        if seen != m {
            return Err(Error::InvalidConfig("groups do not cover all workers".into()));
        }
        Ok(Self { groups, group_of })
    }

    pub fn groups(&self) -> &[Vec<usize>; 3] {
        &self.groups
    }

    pub fn group_of(&self, worker: usize) -> usize {
        self.group_of[worker]
    }
}

/// Randomly and evenly splits workers `0..m` into three groups whose sizes
/// differ by at most one. Deterministic given `seed`.
pub fn partition_workers(m: usize, seed: u64) -> Result<GroupPartition> {
    if m < 3 {
        return Err(Error::TooFewWorkers { m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = m / 3;
    let rem = m % 3;
    let mut groups: [Vec<usize>; 3] = Default::default();
    let mut cursor = 0;
    for (g, group) in groups.iter_mut().enumerate() {
        let size = base + usize::from(g < rem);
        group.extend_from_slice(&order[cursor..cursor + size]);
        cursor += size;
    }
    GroupPartition::new(groups, m)
}

/// Per-item average label vectors of each group: row `j` of the `g`-th
/// matrix is the mean of the one-hot label vectors group `g` assigned to
/// item `j`, with absent labels contributing the zero vector.
pub fn group_aggregate(labels: &ObservedLabels, partition: &GroupPartition) -> [DMatrix<f64>; 3] {
    let n = labels.num_items();
    let k = labels.num_classes();
    let mut z: [DMatrix<f64>; 3] =
        [DMatrix::zeros(n, k), DMatrix::zeros(n, k), DMatrix::zeros(n, k)];
    for (g, members) in partition.groups().iter().enumerate() {
        let scale = 1.0 / members.len() as f64;
        for &i in members {
            for &(j, c) in labels.worker_labels(i) {
                z[g][(j, c)] += scale;
            }
        }
    }
    z
}

/// The moment statistics of one role assignment `(a, b, c)`: the linearly
/// corrected views of groups `a` and `b`, the symmetrized second moment,
/// and the third-moment tensor, all targeting group `c`'s aggregated
/// confusion matrix.
#[derive(Clone, Debug)]
pub struct GroupMoments {
    pub perm: (usize, usize, usize),
    pub zprime_a: DMatrix<f64>,
    pub zprime_b: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: Tensor3,
}

fn cross_moment(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    (x.transpose() * y) / x.nrows() as f64
}

fn smallest_singular_value(mat: &DMatrix<f64>) -> f64 {
    mat.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn guarded_inverse(mat: &DMatrix<f64>, sigma_tol: f64) -> Result<DMatrix<f64>> {
    let sigma = smallest_singular_value(mat);
    if !(sigma > sigma_tol) {
        return Err(Error::IllConditionedMoments { sigma });
    }
    mat.clone()
        .try_inverse()
        .ok_or(Error::IllConditionedMoments { sigma })
}

/// Computes the corrected views and the second/third moments for one role
/// assignment. Fails with [`Error::IllConditionedMoments`] when a
/// cross-moment matrix to be inverted has smallest singular value at or
/// below `sigma_tol`; callers fall back to majority-vote initialization.
pub fn empirical_moments(
    z: &[DMatrix<f64>; 3],
    perm: (usize, usize, usize),
    sigma_tol: f64,
) -> Result<GroupMoments> {
    let (a, b, c) = perm;
    let n = z[a].nrows();
    let k = z[a].ncols();
    let s_cb = cross_moment(&z[c], &z[b]);
    let s_ab = cross_moment(&z[a], &z[b]);
    let s_ca = cross_moment(&z[c], &z[a]);
    let s_ba = cross_moment(&z[b], &z[a]);
    let correct_a = s_cb * guarded_inverse(&s_ab, sigma_tol)?;
    let correct_b = s_ca * guarded_inverse(&s_ba, sigma_tol)?;
    let zprime_a = &z[a] * correct_a.transpose();
    let zprime_b = &z[b] * correct_b.transpose();

    let m2_raw = cross_moment(&zprime_a, &zprime_b);
    let m2 = (&m2_raw + m2_raw.transpose()) / 2.0;

    let mut m3 = Tensor3::zeros(k);
    let weight = 1.0 / n as f64;
    let mut xa = vec![0.0; k];
    let mut xb = vec![0.0; k];
    let mut xc = vec![0.0; k];
    for j in 0..n {
        for l in 0..k {
            xa[l] = zprime_a[(j, l)];
            xb[l] = zprime_b[(j, l)];
            xc[l] = z[c][(j, l)];
        }
        m3.add_outer3(weight, &xa, &xb, &xc);
    }
    Ok(GroupMoments { perm, zprime_a, zprime_b, m2, m3 })
}

/// A whitening transform for a symmetric positive definite second moment:
/// `q` satisfies `q^T M2 q = I`, and `back = (q^T)^{-1}` maps whitened
/// factors back to the original coordinates.
#[derive(Clone, Debug)]
pub struct Whitener {
    pub q: DMatrix<f64>,
    pub back: DMatrix<f64>,
}

/// Eigendecomposes the (symmetrized) second moment and forms
/// `q = U diag(eigenvalues)^{-1/2}`. Every eigenvalue must exceed
/// `sigma_tol`, otherwise [`Error::NotPositiveDefinite`] is returned.
pub fn whiten(m2: &DMatrix<f64>, sigma_tol: f64) -> Result<Whitener> {
    let k = m2.nrows();
    let sym = (m2 + m2.transpose()) / 2.0;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let smallest = eig.eigenvalues[*order.last().unwrap()];
    if !(smallest > sigma_tol) {
        return Err(Error::NotPositiveDefinite { eigenvalue: smallest });
    }
    let mut q = DMatrix::zeros(k, k);
    let mut back = DMatrix::zeros(k, k);
    for (col, &idx) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[idx];
        let u = eig.eigenvectors.column(idx);
        let scale = lambda.sqrt();
        for row in 0..k {
            q[(row, col)] = u[row] / scale;
            back[(row, col)] = u[row] * scale;
        }
    }
    Ok(Whitener { q, back })
}

/// Eigenpairs of a whitened third-moment tensor, plus whether every polish
/// phase reached the fixed-point tolerance (non-convergence is reported,
/// not fatal: the best iterate is still returned).
#[derive(Clone, Debug)]
pub struct TensorEigens {
    pub pairs: Vec<(f64, DVector<f64>)>,
    pub converged: bool,
}

fn random_unit_vector(k: usize, rng: &mut impl Rng) -> DVector<f64> {
    // Box-Muller pairs give isotropic Gaussian directions.
    let mut v = DVector::zeros(k);
    let mut i = 0;
    while i < k {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        v[i] = r * c;
        i += 1;
        if i < k {
            v[i] = r * s;
            i += 1;
        }
    }
    let norm = v.norm();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    v / norm
}

/// Runs power iterations from `theta`, returning the final iterate and
/// whether successive iterates reached dot product `1 - 1e-10`.
fn power_iterate(
    t: &Tensor3,
    mut theta: DVector<f64>,
    iterations: usize,
) -> (DVector<f64>, bool) {
    for _ in 0..iterations {
        let next = t.contract_vv(&theta);
        let norm = next.norm();
        if norm < 1e-15 {
            return (theta, false);
        }
        let next = next / norm;
        let settled = next.dot(&theta) > 1.0 - 1e-10;
        theta = next;
        if settled {
            return (theta, true);
        }
    }
    (theta, false)
}

/// Extracts `k` eigenpairs of a (nearly) orthogonally decomposable
/// symmetric tensor by the robust tensor power method: for each deflation
/// round, the best of `restarts` random starts (largest cubic form after
/// `iterations` power iterations) is polished with `iterations` further
/// iterations, recorded as `(alpha, v)`, and deflated from the tensor.
pub fn robust_tensor_power(
    t: &Tensor3,
    restarts: usize,
    iterations: usize,
    rng: &mut impl Rng,
) -> TensorEigens {
    let k = t.k();
    let mut working = t.clone();
    let mut pairs = Vec::with_capacity(k);
    let mut converged = true;
    for _ in 0..k {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for _ in 0..restarts {
            let start = random_unit_vector(k, rng);
            let (theta, _) = power_iterate(&working, start, iterations);
            let value = working.contract_vvv(&theta);
            if best.as_ref().map_or(true, |(v, _)| value > *v) {
                best = Some((value, theta));
            }
        }
        let (_, candidate) = best.expect("at least one restart");
        let (theta, settled) = power_iterate(&working, candidate, iterations);
        converged &= settled;
        let alpha = working.contract_vvv(&theta);
        working.deflate(alpha, &theta);
        pairs.push((alpha, theta));
    }
    TensorEigens { pairs, converged }
}

/// One group's recovered aggregated confusion matrix and prior estimate,
/// together with the raw tensor eigenpairs it came from.
#[derive(Clone, Debug)]
pub struct GroupEstimate {
    pub c_diamond: DMatrix<f64>,
    pub w: DVector<f64>,
    pub eigenpairs: Vec<(f64, DVector<f64>)>,
}

/// Assigns each recovered column to the class slot holding its largest
/// coordinate. First pass: for each slot `l` in order, the unassigned
/// candidates whose own maximum sits at coordinate `l` are collected and
/// one is chosen (seeded-random on ties). Second pass: leftover columns are
/// distributed randomly over the empty slots, so the result is always a
/// bijection.
pub fn match_columns(
    recovered: &[(f64, DVector<f64>)],
    eigenpairs: Vec<(f64, DVector<f64>)>,
    rng: &mut impl Rng,
) -> GroupEstimate {
    let k = recovered.len();
    let mut slot_of: Vec<Option<usize>> = vec![None; k];
    let mut used = vec![false; k];
    for l in 0..k {
        let candidates: Vec<usize> = (0..k)
            .filter(|&h| {
                if used[h] {
                    return false;
                }
                let mu = &recovered[h].1;
                let max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                mu[l] == max
            })
            .collect();
        let pick = match candidates.len() {
            0 => continue,
            1 => candidates[0],
            len => candidates[rng.gen_range(0..len)],
        };
        slot_of[l] = Some(pick);
        used[pick] = true;
    }
    let mut leftovers: Vec<usize> = (0..k).filter(|&h| !used[h]).collect();
    for slot in slot_of.iter_mut().filter(|s| s.is_none()) {
        let pick = leftovers.remove(rng.gen_range(0..leftovers.len()));
        *slot = Some(pick);
    }

    let mut c_diamond = DMatrix::zeros(k, k);
    let mut w = DVector::zeros(k);
    for (l, slot) in slot_of.into_iter().enumerate() {
        let h = slot.expect("bijection");
        c_diamond.set_column(l, &recovered[h].1);
        w[l] = recovered[h].0;
    }
    GroupEstimate { c_diamond, w, eigenpairs }
}

/// Entrywise mean of the three matched prior estimates, clamped to at
/// least `delta` and renormalized to the simplex.
pub fn average_prior(estimates: &[GroupEstimate; 3], delta: f64) -> ClassPrior {
    let k = estimates[0].w.len();
    let mut w = vec![0.0; k];
    for est in estimates {
        for l in 0..k {
            w[l] += est.w[l] / 3.0;
        }
    }
    for v in &mut w {
        if !v.is_finite() || *v < delta {
            *v = delta;
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    ClassPrior::new(w).expect("clamped positive weights normalized to 1")
}

/// Recovers each individual worker's confusion matrix from the group
/// estimates: worker `i` in group `g` is paired with auxiliary group
/// `a = (g+1) mod 3`, its empirical cross matrix against `a`'s aggregated
/// view is unmixed by `(W (C_diamond_a)^T)^{-1}`, and the result is
/// clamped to `delta` and column-normalized.
pub fn recover_worker_confusions(
    labels: &ObservedLabels,
    partition: &GroupPartition,
    estimates: &[GroupEstimate; 3],
    w_avg: &ClassPrior,
    delta: f64,
    sigma_tol: f64,
) -> Result<Vec<ConfusionMatrix>> {
    let n = labels.num_items();
    let k = labels.num_classes();
    let z = group_aggregate(labels, partition);
    let mut unmix = Vec::with_capacity(3);
    for est in estimates.iter() {
        let mut scaled = est.c_diamond.transpose();
        for (l, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w_avg.get(l);
        }
        unmix.push(guarded_inverse(&scaled, sigma_tol)?);
    }
    let mut out = Vec::with_capacity(labels.num_workers());
    for i in 0..labels.num_workers() {
        let g = partition.group_of(i);
        let aux = (g + 1) % 3;
        let mut cross = DMatrix::zeros(k, k);
        for &(j, c) in labels.worker_labels(i) {
            for l in 0..k {
                cross[(c, l)] += z[aux][(j, l)];
            }
        }
        cross /= n as f64;
        let raw = cross * &unmix[aux];
        out.push(ConfusionMatrix::from_raw_thresholded(raw, delta));
    }
    Ok(out)
}

/// The complete Stage-1 output.
#[derive(Clone, Debug)]
pub struct SpectralInit {
    pub confusions: Vec<ConfusionMatrix>,
    pub prior: ClassPrior,
    pub partition: GroupPartition,
    pub estimates: [GroupEstimate; 3],
    /// Whether every tensor power polish reached its fixed-point tolerance.
    pub tensor_converged: bool,
}

/// Recovers a group estimate from a second and third moment pair: whiten,
/// decompose, map eigenpairs back (`w_h = alpha_h^{-2}`,
/// `mu_h = (q^T)^{-1} (alpha_h v_h)`), and match columns to class slots.
pub fn recover_group_estimate(
    m2: &DMatrix<f64>,
    m3: &Tensor3,
    config: &SpectralConfig,
    rng: &mut impl Rng,
) -> Result<(GroupEstimate, bool)> {
    let whitener = whiten(m2, config.sigma_tol)?;
    let t = m3.apply_matrix(&whitener.q);
    let eig = robust_tensor_power(&t, config.restarts, config.iterations, rng);
    let recovered: Vec<(f64, DVector<f64>)> = eig
        .pairs
        .iter()
        .map(|(alpha, v)| {
            let w = alpha.powi(-2);
            let mu = &whitener.back * (v * *alpha);
            (w, mu)
        })
        .collect();
    let converged = eig.converged;
    Ok((match_columns(&recovered, eig.pairs, rng), converged))
}

/// Runs the whole spectral stage on a dataset: partition, aggregate, and
/// for each cyclic role assignment recover the target group's aggregated
/// confusions and prior; then average the prior estimates and transfer to
/// individual workers.
pub fn spectral_init(labels: &ObservedLabels, config: &SpectralConfig) -> Result<SpectralInit> {
    let partition = partition_workers(labels.num_workers(), config.partition_seed)?;
    let z = group_aggregate(labels, &partition);
    let mut rng = ChaCha8Rng::seed_from_u64(config.tensor_seed);
    let mut estimates: Vec<GroupEstimate> = Vec::with_capacity(3);
    let mut tensor_converged = true;
    // Role assignments (a, b, c) targeting c = 0, 1, 2 in turn.
    for perm in [(1, 2, 0), (2, 0, 1), (0, 1, 2)] {
        let moments = empirical_moments(&z, perm, config.sigma_tol)?;
        let (estimate, converged) = recover_group_estimate(&moments.m2, &moments.m3, config, &mut rng)?;
        tensor_converged &= converged;
        estimates.push(estimate);
    }
    let estimates: [GroupEstimate; 3] = estimates.try_into().expect("three permutations");
    let prior = average_prior(&estimates, config.delta);
    let confusions = recover_worker_confusions(
        labels,
        &partition,
        &estimates,
        &prior,
        config.delta,
        config.sigma_tol,
    )?;
    Ok(SpectralInit { confusions, prior, partition, estimates, tensor_converged })
}
