//! Aggregation of redundant crowd labels under the Dawid-Skene model.
//!
//! The crate infers true item labels and per-worker confusion matrices from
//! noisy categorical labels. It provides:
//!
//! - a spectral method-of-moments initializer that estimates every worker's
//!   confusion matrix from second- and third-order label moments via
//!   whitened tensor decomposition ([`spectral`]),
//! - EM refinement of the full Dawid-Skene likelihood from any
//!   initialization ([`em`]),
//! - the one-coin specialization where each worker is a single accuracy
//!   parameter ([`onecoin`]),
//! - majority-voting baselines ([`baselines`]),
//! - a synthetic-data generator with retained ground truth ([`synth`]),
//! - file formats, method drivers, metric reports, and parameter sweeps
//!   ([`dataio`], [`run`]).
//!
//! The two headline pipelines are `opt-ds` (spectral initialization followed
//! by EM) and `mv-ds` (majority-vote initialization followed by EM); see
//! [`run::run`].

pub mod baselines;
pub mod dataio;
pub mod em;
pub mod error;
pub mod model;
pub mod onecoin;
pub mod run;
pub mod spectral;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{
    inject_label_noise, mean_kl_separation, ClassPrior, ConfusionMatrix, GroundTruthModel,
    ObservedLabels, Posterior,
};
