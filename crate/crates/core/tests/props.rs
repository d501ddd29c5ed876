//! Property-based invariants: serialization round trips, stochasticity of
//! every produced distribution, and algebraic identities of the spectral
//! stage, over randomized inputs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use labelfuse::baselines::majority_vote;
use labelfuse::dataio::{parse_labels, render_labels};
use labelfuse::em::{e_step, m_step};
use labelfuse::model::{
    inject_label_noise, mean_kl_separation, ClassPrior, ConfusionMatrix, GroundTruthModel,
    ObservedLabels,
};
use labelfuse::onecoin::onecoin_e_step;
use labelfuse::spectral::{match_columns, robust_tensor_power, whiten};
use labelfuse::tensor::Tensor3;

/// A random non-empty dataset: each (worker, item) cell is labeled or not,
/// labels uniform over classes.
fn dataset(max_m: usize, max_n: usize) -> impl Strategy<Value = ObservedLabels> {
    (1..=max_m, 1..=max_n, 2usize..=4)
        .prop_flat_map(|(m, n, k)| {
            let cells = prop::collection::vec(prop::option::of(0..k), m * n);
            (Just(m), Just(n), Just(k), cells)
        })
        .prop_filter_map("dataset must keep at least one label", |(m, n, k, cells)| {
            let entries: Vec<(usize, usize, usize)> = cells
                .iter()
                .enumerate()
                .filter_map(|(idx, c)| c.map(|c| (idx / n, idx % n, c)))
                .collect();
            ObservedLabels::new(m, n, k, entries).ok()
        })
}

/// Strictly positive random confusion matrices for every worker.
fn confusions(m: usize, k: usize) -> impl Strategy<Value = Vec<ConfusionMatrix>> {
    prop::collection::vec(
        prop::collection::vec(0.01..1.0f64, k * k)
            .prop_map(move |raw| {
                ConfusionMatrix::from_raw_thresholded(DMatrix::from_vec(k, k, raw), 1e-4)
            }),
        m,
    )
}

fn external_triples(text: &str) -> Vec<(u64, u64, u64)> {
    let mut out: Vec<(u64, u64, u64)> = text
        .lines()
        .map(|line| {
            let mut fields = line.split(',').map(|f| f.parse::<u64>().unwrap());
            (
                fields.next().unwrap(),
                fields.next().unwrap(),
                fields.next().unwrap(),
            )
        })
        .collect();
    out.sort_unstable();
    out
}

proptest! {
    #[test]
    fn label_text_survives_parse_render_cycle(labels in dataset(5, 7)) {
        let text = render_labels(&labels, None);
        let (parsed, maps) = parse_labels(&text, labels.num_classes()).unwrap();
        let again = render_labels(&parsed, Some(&maps));
        prop_assert_eq!(external_triples(&text), external_triples(&again));
        prop_assert_eq!(parsed.len(), labels.len());
    }

    #[test]
    fn zero_noise_is_identity(labels in dataset(4, 6), seed in any::<u64>()) {
        let noised = inject_label_noise(&labels, 0.0, seed).unwrap();
        prop_assert_eq!(noised, labels);
    }

    #[test]
    fn noise_preserves_support(labels in dataset(4, 6), u in 0.0..1.0f64, seed in any::<u64>()) {
        // rho is valid up to 1/k, where every label gets redrawn.
        let rho = u / labels.num_classes() as f64;
        let noised = inject_label_noise(&labels, rho, seed).unwrap();
        let support: Vec<(usize, usize)> = labels.iter().map(|(i, j, _)| (i, j)).collect();
        let noised_support: Vec<(usize, usize)> = noised.iter().map(|(i, j, _)| (i, j)).collect();
        prop_assert_eq!(support, noised_support);
        prop_assert!(noised.iter().all(|(_, _, c)| c < labels.num_classes()));
    }

    #[test]
    fn kl_separation_is_class_permutation_invariant(
        (k, raws, swap) in (2usize..=4).prop_flat_map(|k| {
            (
                Just(k),
                prop::collection::vec(prop::collection::vec(0.05..1.0f64, k * k), 1..5),
                0..2usize,
            )
        }),
    ) {
        let confs: Vec<ConfusionMatrix> = raws
            .iter()
            .map(|raw| {
                ConfusionMatrix::from_raw_thresholded(DMatrix::from_vec(k, k, raw.clone()), 1e-3)
            })
            .collect();
        let m = confs.len();
        let model = GroundTruthModel::new(
            ClassPrior::uniform(k),
            confs.clone(),
            vec![0.7; m],
            vec![0],
        )
        .unwrap();
        // Swap the first two classes (rows and columns together), or apply
        // the identity; the worst-pair KL separation cannot change.
        let perm: Vec<usize> = (0..k).map(|l| match (swap, l) {
            (1, 0) => 1,
            (1, 1) => 0,
            (_, l) => l,
        }).collect();
        let permuted: Vec<ConfusionMatrix> = confs
            .iter()
            .map(|conf| {
                let mat = DMatrix::from_fn(k, k, |c, l| conf.get(perm[c], perm[l]));
                ConfusionMatrix::new(mat).unwrap()
            })
            .collect();
        let permuted_model = GroundTruthModel::new(
            ClassPrior::uniform(k),
            permuted,
            vec![0.7; m],
            vec![0],
        )
        .unwrap();
        let a = mean_kl_separation(&model).unwrap();
        let b = mean_kl_separation(&permuted_model).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn whitener_inverts_its_second_moment(
        (k, raw) in (2usize..=5).prop_flat_map(|k| {
            (Just(k), prop::collection::vec(-1.0..1.0f64, k * k))
        }),
    ) {
        let b = DMatrix::from_vec(k, k, raw);
        let m2 = &b * b.transpose() + DMatrix::<f64>::identity(k, k) * 0.1;
        let w = whiten(&m2, 1e-10).unwrap();
        let id = w.q.transpose() * &m2 * &w.q;
        let back_check = w.q.transpose() * &w.back;
        for i in 0..k {
            for j in 0..k {
                let target = f64::from(u8::from(i == j));
                prop_assert!((id[(i, j)] - target).abs() <= 1e-8);
                prop_assert!((back_check[(i, j)] - target).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn power_method_deflates_decomposable_tensors(
        (k, raw, jitters, seed) in (2usize..=4).prop_flat_map(|k| {
            (
                Just(k),
                prop::collection::vec(-1.0..1.0f64, k * k),
                prop::collection::vec(0.9..1.1f64, k),
                any::<u64>(),
            )
        }),
    ) {
        // Orthonormal directions from a QR factorization, eigenvalues
        // geometrically separated so ordering is unambiguous.
        let basis = (DMatrix::from_vec(k, k, raw) + DMatrix::<f64>::identity(k, k) * 2.0).qr().q();
        let mut t = Tensor3::zeros(k);
        let mut alphas = Vec::with_capacity(k);
        for (h, jitter) in jitters.iter().enumerate() {
            let alpha = jitter * 2.0 * 0.55f64.powi(h as i32);
            let col: Vec<f64> = basis.column(h).iter().cloned().collect();
            t.add_outer3(alpha, &col, &col, &col);
            alphas.push(alpha);
        }
        let norm = t.frobenius_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eig = robust_tensor_power(&t, 30, 100, &mut rng);
        let mut residual = t;
        for (alpha, v) in &eig.pairs {
            residual.deflate(*alpha, v);
        }
        prop_assert!(residual.frobenius_norm() <= 1e-6 * norm);
        let mut found: Vec<f64> = eig.pairs.iter().map(|(a, _)| *a).collect();
        found.sort_by(|a, b| b.partial_cmp(a).unwrap());
        alphas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (f, a) in found.iter().zip(&alphas) {
            prop_assert!((f - a).abs() <= 1e-6, "eigenvalue {f} vs weight {a}");
        }
    }

    #[test]
    fn posterior_rows_are_distributions(
        (labels, confs, _k) in dataset(4, 6).prop_flat_map(|labels| {
            let (m, k) = (labels.num_workers(), labels.num_classes());
            (Just(labels), confusions(m, k), Just(k))
        }),
    ) {
        let posterior = e_step(&labels, &confs).unwrap();
        for j in 0..posterior.num_items() {
            let row_sum: f64 = (0..posterior.k()).map(|l| posterior.belief(j, l)).sum();
            prop_assert!((row_sum - 1.0).abs() <= 1e-9);
            let mut best = 0;
            for l in 1..posterior.k() {
                if posterior.belief(j, l) > posterior.belief(j, best) {
                    best = l;
                }
            }
            prop_assert_eq!(posterior.predictions()[j], best);
        }
    }

    #[test]
    fn reestimated_confusions_are_column_stochastic(
        (labels, confs) in dataset(4, 6).prop_flat_map(|labels| {
            let (m, k) = (labels.num_workers(), labels.num_classes());
            (Just(labels), confusions(m, k))
        }),
    ) {
        let posterior = e_step(&labels, &confs).unwrap();
        for conf in m_step(&labels, &posterior) {
            for l in 0..conf.k() {
                let col_sum: f64 = (0..conf.k()).map(|c| conf.get(c, l)).sum();
                prop_assert!((col_sum - 1.0).abs() <= 1e-9);
                prop_assert!((0..conf.k()).all(|c| conf.get(c, l) >= 0.0));
            }
        }
    }

    #[test]
    fn majority_vote_counts_votes(labels in dataset(4, 6)) {
        let k = labels.num_classes();
        let posterior = majority_vote(&labels);
        for j in 0..labels.num_items() {
            let votes = labels.item_labels(j);
            let row_sum: f64 = (0..k).map(|l| posterior.belief(j, l)).sum();
            prop_assert!((row_sum - 1.0).abs() <= 1e-9);
            if votes.is_empty() {
                for l in 0..k {
                    prop_assert!((posterior.belief(j, l) - 1.0 / k as f64).abs() <= 1e-12);
                }
            } else if votes.iter().all(|&(_, c)| c == votes[0].1) {
                prop_assert!((posterior.belief(j, votes[0].1) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn column_matching_is_a_bijection(
        (k, flat, alphas, seed) in (2usize..=5).prop_flat_map(|k| {
            (
                Just(k),
                prop::collection::vec(0.0..1.0f64, k * k),
                prop::collection::vec(0.5..2.0f64, k),
                any::<u64>(),
            )
        }),
    ) {
        let recovered: Vec<(f64, DVector<f64>)> = (0..k)
            .map(|h| (alphas[h], DVector::from_vec(flat[h * k..(h + 1) * k].to_vec())))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = match_columns(&recovered, vec![], &mut rng);
        let mut input: Vec<Vec<u64>> = recovered
            .iter()
            .map(|(_, v)| v.iter().map(|x| x.to_bits()).collect())
            .collect();
        let mut output: Vec<Vec<u64>> = (0..k)
            .map(|l| est.c_diamond.column(l).iter().map(|x| x.to_bits()).collect())
            .collect();
        input.sort();
        output.sort();
        prop_assert_eq!(input, output);
    }

    #[test]
    fn thresholding_floors_and_normalizes(
        (k, raw, delta) in (2usize..=5).prop_flat_map(|k| {
            (Just(k), prop::collection::vec(-2.0..2.0f64, k * k), 1e-6..0.1f64)
        }),
    ) {
        let conf = ConfusionMatrix::from_raw_thresholded(DMatrix::from_vec(k, k, raw), delta);
        let floor = delta / (1.0 + k as f64 * delta);
        for l in 0..k {
            let col_sum: f64 = (0..k).map(|c| conf.get(c, l)).sum();
            prop_assert!((col_sum - 1.0).abs() <= 1e-12);
            for c in 0..k {
                prop_assert!(conf.get(c, l) >= floor - 1e-15);
            }
        }
    }

    #[test]
    fn one_coin_e_step_matches_full_e_step(
        (labels, accuracies) in dataset(4, 6).prop_flat_map(|labels| {
            let m = labels.num_workers();
            (Just(labels), prop::collection::vec(0.05..0.95f64, m))
        }),
    ) {
        let k = labels.num_classes();
        let expanded: Vec<ConfusionMatrix> = accuracies
            .iter()
            .map(|&p| ConfusionMatrix::one_coin(k, p).unwrap())
            .collect();
        let coin = onecoin_e_step(&labels, &accuracies).unwrap();
        let full = e_step(&labels, &expanded).unwrap();
        for j in 0..labels.num_items() {
            for l in 0..k {
                prop_assert!((coin.belief(j, l) - full.belief(j, l)).abs() <= 1e-12);
            }
        }
    }
}
