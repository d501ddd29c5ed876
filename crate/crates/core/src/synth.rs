//! Synthetic dataset generation under the crowdsourcing generative model:
//! true classes drawn i.i.d. from the prior, each worker labeling each
//! item independently with probability `sparsity`, and assigned labels
//! drawn from the worker's confusion column for the item's true class.
//!
//! A single seeded generator drives all draws in a fixed, documented
//! order: first every worker's confusion parameters, then the true
//! classes, then presence and label draws with workers outer and items
//! inner. Same seed, same dataset, bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ClassPrior, ConfusionMatrix, GroundTruthModel, ObservedLabels};

/// How worker confusion matrices are drawn.
#[derive(Clone, Debug)]
pub enum ConfusionRegime {
    /// The binary benchmark regime: each worker's two diagonal entries are
    /// drawn independently and uniformly from [0.3, 0.9], off-diagonals
    /// fill the columns to sum 1. Requires k = 2.
    PaperBinary,
    /// Fixed, caller-supplied matrices (the only way to get k > 2
    /// structure).
    Explicit(Vec<ConfusionMatrix>),
    /// One-coin workers with accuracies uniform on [lo, hi].
    OneCoin { lo: f64, hi: f64 },
}

/// Full description of a synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub sparsity: f64,
    pub prior: ClassPrior,
    pub regime: ConfusionRegime,
    pub seed: u64,
}

impl SynthConfig {
    /// The benchmark protocol: binary classes, uniform prior, diagonal
    /// entries uniform on [0.3, 0.9].
    pub fn paper_binary(m: usize, n: usize, sparsity: f64, seed: u64) -> Self {
        Self {
            m,
            n,
            k: 2,
            sparsity,
            prior: ClassPrior::uniform(2),
            regime: ConfusionRegime::PaperBinary,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k < 2 {
            return Err(Error::InvalidConfig(format!(
                "need m >= 1, n >= 1, k >= 2; got m={}, n={}, k={}",
                self.m, self.n, self.k
            )));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sparsity must lie in (0, 1], got {}",
                self.sparsity
            )));
        }
        if self.prior.k() != self.k {
            return Err(Error::InvalidConfig(format!(
                "prior has {} classes, config says {}",
                self.prior.k(),
                self.k
            )));
        }
        match &self.regime {
            ConfusionRegime::PaperBinary => {
                if self.k != 2 {
                    return Err(Error::InvalidConfig(
                        "the binary regime requires k = 2".into(),
                    ));
                }
            }
            ConfusionRegime::Explicit(mats) => {
                if mats.len() != self.m {
                    return Err(Error::InvalidConfig(format!(
                        "{} explicit matrices for {} workers",
                        mats.len(),
                        self.m
                    )));
                }
                if let Some(bad) = mats.iter().find(|c| c.k() != self.k) {
                    return Err(Error::InvalidConfig(format!(
                        "explicit matrix has {} classes, config says {}",
                        bad.k(),
                        self.k
                    )));
                }
            }
            ConfusionRegime::OneCoin { lo, hi } => {
                if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi {
                    return Err(Error::InvalidConfig(format!(
                        "one-coin accuracy range [{lo}, {hi}] invalid"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn draw_confusions(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<ConfusionMatrix> {
    match &config.regime {
        ConfusionRegime::PaperBinary => (0..config.m)
            .map(|_| {
                let d1 = rng.gen_range(0.3..0.9);
                let d2 = rng.gen_range(0.3..0.9);
                ConfusionMatrix::new(nalgebra::DMatrix::from_row_slice(
                    2,
                    2,
                    &[d1, 1.0 - d2, 1.0 - d1, d2],
                ))
                .expect("columns sum to 1 by construction")
            })
            .collect(),
        ConfusionRegime::Explicit(mats) => mats.clone(),
        ConfusionRegime::OneCoin { lo, hi } => (0..config.m)
            .map(|_| {
                let p = if lo == hi { *lo } else { rng.gen_range(*lo..*hi) };
                ConfusionMatrix::one_coin(config.k, p).expect("p within [0, 1]")
            })
            .collect(),
    }
}

fn draw_class(cdf_weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last = 0;
    for (c, w) in cdf_weights.enumerate() {
        cumulative += w;
        last = c;
        if u < cumulative {
            return c;
        }
    }
    // Floating-point residue: the draw fell past the accumulated sum.
    last
}

/// Generates a dataset and the ground truth behind it. Deterministic given
/// the seed.
pub fn generate(config: &SynthConfig) -> Result<(ObservedLabels, GroundTruthModel)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let confusions = draw_confusions(config, &mut rng);
    let truth: Vec<usize> = (0..config.n)
        .map(|_| {
            let u = rng.gen::<f64>();
            draw_class((0..config.k).map(|c| config.prior.get(c)), u)
        })
        .collect();
    let mut entries = Vec::new();
    for (i, confusion) in confusions.iter().enumerate() {
        for (j, &y) in truth.iter().enumerate() {
            if rng.gen::<f64>() < config.sparsity {
                let u = rng.gen::<f64>();
                let c = draw_class((0..config.k).map(|row| confusion.get(row, y)), u);
                entries.push((i, j, c));
            }
        }
    }
    let labels = ObservedLabels::new(config.m, config.n, config.k, entries)?;
    let model = GroundTruthModel::new(
        config.prior.clone(),
        confusions,
        vec![config.sparsity; config.m],
        truth,
    )?;
    Ok((labels, model))
}
