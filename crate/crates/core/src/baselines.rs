//! Majority voting: the standalone baseline predictor and the posterior
//! that seeds MV-D&S.

use nalgebra::DMatrix;

use crate::model::{ObservedLabels, Posterior};

/// Soft majority vote: row `j` of the beliefs holds each class's share of
/// the votes on item `j`; items nobody voted on get the uniform row.
/// Predictions take the argmax, lowest class index on ties.
pub fn majority_vote(labels: &ObservedLabels) -> Posterior {
    let n = labels.num_items();
    let k = labels.num_classes();
    let uniform = 1.0 / k as f64;
    let mut beliefs = DMatrix::zeros(n, k);
    for (_, j, c) in labels.iter() {
        beliefs[(j, c)] += 1.0;
    }
    for j in 0..n {
        let total: f64 = (0..k).map(|c| beliefs[(j, c)]).sum();
        if total == 0.0 {
            for c in 0..k {
                beliefs[(j, c)] = uniform;
            }
        } else {
            for c in 0..k {
                beliefs[(j, c)] /= total;
            }
        }
    }
    Posterior::from_beliefs(beliefs).expect("vote shares are row-stochastic")
}

/// One-hot variant: all belief mass on the winning class (lowest index on
/// ties); unvoted items keep the uniform row.
pub fn majority_vote_hard(labels: &ObservedLabels) -> Posterior {
    let soft = majority_vote(labels);
    let n = labels.num_items();
    let k = labels.num_classes();
    let uniform = 1.0 / k as f64;
    let mut beliefs = DMatrix::zeros(n, k);
    for (j, &winner) in soft.predictions().iter().enumerate() {
        if labels.item_labels(j).is_empty() {
            for c in 0..k {
                beliefs[(j, c)] = uniform;
            }
        } else {
            beliefs[(j, winner)] = 1.0;
        }
    }
    Posterior::from_beliefs(beliefs).expect("one-hot rows are row-stochastic")
}
