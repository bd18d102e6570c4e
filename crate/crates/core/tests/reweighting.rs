use amis_core::problems::one_step_gaussian;
use amis_core::reweight::{
    balance_weights, candidate_discard_times, choose_fixed_discard, choose_optimized_discard,
    discard_weights, ess_estimate, ess_from_log, flat_weights, nonmixing_weights,
    optimized_discard_search, BalanceCache, CandidateSet, Normalization, ReweightScheme,
    Reweighter,
};
use amis_core::rng::StreamKey;
use amis_core::sde::{cross_log_ratio, girsanov_log_weight, simulate_keyed, FeedbackControl};
use amis_core::store::{SampleStore, WeightedSample};
use amis_core::AmisError;
use proptest::prelude::*;
use std::sync::Arc;

/// Store whose samples carry the given `log(h dQ/dP)` terms, one batch per
/// inner vector, with no paths.
fn store_from_terms(batches: &[Vec<f64>]) -> SampleStore {
    let mut store = SampleStore::new();
    for (b, terms) in batches.iter().enumerate() {
        let samples = terms
            .iter()
            .enumerate()
            .map(|(n, &t)| WeightedSample::new(b + 1, n, t, 0.0, Some(-t), None))
            .collect();
        store
            .push_batch(FeedbackControl::constant(&[0.0], 1), samples)
            .unwrap();
    }
    store
}

/// One-step Gaussian problem with one batch per control value.
fn one_step_store(controls: &[f64], batch: usize, seed: u64) -> SampleStore {
    let problem = one_step_gaussian().unwrap();
    let mut store = SampleStore::new();
    for (k, &u) in controls.iter().enumerate() {
        let control = FeedbackControl::constant(&[u], 1);
        let samples = (0..batch)
            .map(|n| {
                let path = simulate_keyed(&problem, &control, StreamKey::new(seed, k + 1, n)).unwrap();
                let log_h = problem.log_h(&path).unwrap();
                let log_dqdp = girsanov_log_weight(&path, &control).unwrap();
                WeightedSample::new(k + 1, n, log_h, log_dqdp, None, Some(Arc::new(path)))
            })
            .collect();
        store.push_batch(control, samples).unwrap();
    }
    store
}

fn normal_pdf(x: f64, mean: f64) -> f64 {
    (-(x - mean) * (x - mean) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn ess_examples() {
    assert!((ess_estimate(&[3.0; 7]).unwrap() - 7.0).abs() < 1e-12);
    assert!((ess_estimate(&[0.0, 0.0, 5.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((ess_estimate(&[1.0, 1.0, 2.0]).unwrap() - 16.0 / 6.0).abs() < 1e-12);
    assert!(matches!(ess_estimate(&[0.0, 0.0]), Err(AmisError::UndefinedEss)));
    assert!(ess_estimate(&[1.0, -1.0]).is_err());
}

proptest! {
    #[test]
    fn ess_lies_between_one_and_n(y in prop::collection::vec(0.0f64..1e6, 1..60)) {
        prop_assume!(y.iter().any(|v| *v > 0.0));
        let ess = ess_estimate(&y).unwrap();
        prop_assert!(ess >= 1.0 - 1e-12);
        prop_assert!(ess <= y.len() as f64 + 1e-9);
    }

    #[test]
    fn ess_is_scale_invariant(
        log_y in prop::collection::vec(-50.0f64..50.0, 1..60),
        log_c in -300.0f64..300.0,
    ) {
        let base = ess_from_log(log_y.iter().copied()).unwrap();
        let scaled = ess_from_log(log_y.iter().map(|v| v + log_c)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base);
    }

    #[test]
    fn discard_weights_normalize_under_equal_batches(k in 1usize..30, m in 1usize..5, t_frac in 0.0f64..1.0) {
        let t = ((k as f64) * t_frac) as usize;
        let store = store_from_terms(&vec![vec![0.0; m]; k]);
        let w = discard_weights(&store, t).unwrap();
        let total: f64 = (1..=k).flat_map(|l| (0..m).map(move |n| (l, n))).map(|(l, n)| w.w(l, n)).sum();
        prop_assert!((total / (k * m) as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn search_matches_direct_formula(
        batches in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 1..4), 1..20),
    ) {
        let store = store_from_terms(&batches);
        let k = batches.len();
        let choice = optimized_discard_search(&store, CandidateSet::All, 1).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for t in 0..k {
            let ess = ess_from_log(batches[t..].iter().flatten().copied()).unwrap();
            if ess > best.1 * (1.0 + 1e-12) {
                best = (t, ess);
            }
        }
        prop_assert_eq!(choice.evaluations, k);
        prop_assert!((choice.report.ess_hat - best.1.clamp(1.0, f64::INFINITY)).abs() < 1e-9 * best.1);
    }
}

#[test]
fn flat_weights_are_one_and_give_plain_mean() {
    let store = store_from_terms(&[vec![0.0, 1.0_f64.ln()], vec![2.0_f64.ln()]]);
    let w = flat_weights(&store);
    assert_eq!(w.w(1, 0), 1.0);
    assert_eq!(w.w(2, 0), 1.0);
    assert!((w.estimate(&store).unwrap() - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
}

#[test]
fn flat_equals_balance_for_identical_proposals() {
    let mut store = one_step_store(&[0.7, 0.7], 3, 11);
    let flat = flat_weights(&store).estimate(&store).unwrap();
    let controls = store.controls();
    let balance = balance_weights(&store, &controls).unwrap();
    assert!((balance.estimate(&store).unwrap() - flat).abs() < 1e-12);
    for k in 1..=2 {
        for n in 0..3 {
            assert!(balance.log_w(k, n).abs() < 1e-12);
        }
    }
    store.release_paths(1);
    let controls = store.controls();
    assert!(matches!(
        balance_weights(&store, &controls),
        Err(AmisError::MissingIncrements)
    ));
}

#[test]
fn balance_normalization_identity() {
    let store = one_step_store(&[0.0, 1.0, 2.5, -1.0], 3, 5);
    let controls = store.controls();
    let w = balance_weights(&store, &controls).unwrap();
    let total = store.total() as f64;
    for (b, batch) in store.batches().iter().enumerate() {
        for (n, s) in batch.samples().iter().enumerate() {
            let path = s.path().unwrap();
            let mix: f64 = store
                .batches()
                .iter()
                .map(|other| {
                    let r = cross_log_ratio(path, batch.control(), other.control()).unwrap();
                    (other.len() as f64).ln() + r
                })
                .fold(f64::NEG_INFINITY, |a: f64, x| {
                    let m = a.max(x);
                    m + ((a - m).exp() + (x - m).exp()).ln()
                });
            let log_identity = w.log_w(b + 1, n) + mix - total.ln();
            assert!(log_identity.abs() < 1e-12, "identity off by {log_identity}");
        }
    }
}

#[test]
fn balance_matches_gaussian_mixture_oracle() {
    let store = one_step_store(&[0.0, 2.0], 1, 3);
    let controls = store.controls();
    let w = balance_weights(&store, &controls).unwrap();
    let means = [0.0, 2.0];
    for (b, batch) in store.batches().iter().enumerate() {
        let x = batch.samples()[0].path().unwrap().final_state()[0];
        let mixture = 0.5 * (normal_pdf(x, 0.0) + normal_pdf(x, 2.0));
        let expected = normal_pdf(x, means[b]) / mixture;
        assert!((w.w(b + 1, 0) - expected).abs() < 1e-10);
    }
}

#[test]
fn balance_cache_matches_from_scratch() {
    let full = one_step_store(&[0.0, 1.0, -0.5, 2.0, 0.3], 2, 17);
    let mut cache = BalanceCache::default();
    let mut partial = SampleStore::new();
    for batch in full.batches() {
        partial
            .push_batch(batch.control().clone(), batch.samples().to_vec())
            .unwrap();
        let cached = cache.update(&partial).unwrap();
        let controls = partial.controls();
        let scratch = balance_weights(&partial, &controls).unwrap();
        for k in 1..=partial.num_batches() {
            for n in 0..2 {
                assert!((cached.log_w(k, n) - scratch.log_w(k, n)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn discard_examples() {
    let store = store_from_terms(&vec![vec![0.0]; 10]);
    let w = discard_weights(&store, 5).unwrap();
    for l in 1..=5 {
        assert_eq!(w.w(l, 0), 0.0);
    }
    for l in 6..=10 {
        assert!((w.w(l, 0) - 2.0).abs() < 1e-12);
    }
    assert_eq!(w.retained_samples(&store), 5);
    assert_eq!(w.normalization, Normalization::RetainedSamples);

    let none = discard_weights(&store, 0).unwrap();
    assert!((1..=10).all(|l| (none.w(l, 0) - 1.0).abs() < 1e-15));

    assert!(matches!(
        discard_weights(&store, 10),
        Err(AmisError::InvalidDiscardTime { discard: 10, iteration: 10 })
    ));
}

#[test]
fn discard_estimate_uses_retained_samples() {
    let store = store_from_terms(&[vec![5.0_f64.ln(); 3], vec![1.0_f64.ln()], vec![3.0_f64.ln(); 2]]);
    let w = discard_weights(&store, 1).unwrap();
    assert!((w.estimate(&store).unwrap() - (1.0 + 3.0 + 3.0) / 3.0).abs() < 1e-12);
}

#[test]
fn fixed_discard_rule() {
    assert_eq!(choose_fixed_discard(1), 0);
    assert_eq!(choose_fixed_discard(2), 1);
    assert_eq!(choose_fixed_discard(10), 5);
    assert_eq!(choose_fixed_discard(11), 6);
}

#[test]
fn candidate_sets() {
    assert_eq!(candidate_discard_times(9, CandidateSet::PowersOfTwo), vec![0, 2, 4, 8]);
    assert_eq!(candidate_discard_times(8, CandidateSet::PowersOfTwo), vec![0, 2, 4]);
    assert_eq!(candidate_discard_times(1, CandidateSet::PowersOfTwo), vec![0]);
    assert_eq!(candidate_discard_times(4, CandidateSet::All), vec![0, 1, 2, 3]);
}

#[test]
fn equal_terms_retain_everything() {
    let store = store_from_terms(&vec![vec![0.25, 0.25]; 6]);
    let (t, report) = choose_optimized_discard(&store, &ReweightScheme::discard_optimized()).unwrap();
    assert_eq!(t, 0);
    assert!((report.ess_hat - 12.0).abs() < 1e-9);
    assert_eq!(report.retained_samples, 12);
}

#[test]
fn dominant_first_iteration_is_discarded() {
    let later = vec![0.0; 9];
    let mut batches = vec![vec![(100.0f64 * 9.0).ln()]];
    batches.extend(later.iter().map(|&t| vec![t]));
    let store = store_from_terms(&batches);
    let ess0 = ess_estimate(&[900.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let ess1 = ess_estimate(&[1.0; 9]).unwrap();
    assert!(ess1 > ess0);
    let (t, report) = choose_optimized_discard(&store, &ReweightScheme::discard_optimized()).unwrap();
    assert_eq!(t, 1);
    assert!((report.ess_hat - ess1).abs() < 1e-9);
}

#[test]
fn optimized_search_counts_one_evaluation_per_candidate() {
    for k in 1..12 {
        let store = store_from_terms(&vec![vec![0.1, -0.3]; k]);
        let c = optimized_discard_search(&store, CandidateSet::All, 2).unwrap();
        assert_eq!(c.evaluations, k);
    }
    let store = store_from_terms(&vec![vec![0.0]; 5]);
    let c = optimized_discard_search(&store, CandidateSet::All, 2).unwrap();
    assert_eq!(c.evaluations, 4);
}

#[test]
fn search_survives_terms_far_below_the_maximum() {
    let store = store_from_terms(&[vec![0.0], vec![-900.0], vec![-900.5], vec![-901.0]]);
    let c = optimized_discard_search(&store, CandidateSet::All, 2).unwrap();
    let direct = ess_from_log([-900.0, -900.5, -901.0]).unwrap();
    assert_eq!(c.discard_time, 1);
    assert!((c.report.ess_hat - direct).abs() < 1e-9);
    let w = discard_weights(&store, 1).unwrap();
    let psi = w.log_estimate(&store).unwrap();
    let expected = -900.0 + (1.0 + (-0.5f64).exp() + (-1.0f64).exp()).ln() - 3f64.ln();
    assert!((psi - expected).abs() < 1e-12);
    assert!((w.ess(&store).unwrap().ess_hat - direct).abs() < 1e-9);
}

#[test]
fn search_rejects_when_nothing_is_admissible() {
    let store = store_from_terms(&[vec![0.0]]);
    assert!(matches!(
        optimized_discard_search(&store, CandidateSet::All, 2),
        Err(AmisError::Configuration(_))
    ));
    let zero = store_from_terms(&[vec![f64::NEG_INFINITY; 2], vec![f64::NEG_INFINITY]]);
    assert!(matches!(
        optimized_discard_search(&zero, CandidateSet::All, 2),
        Err(AmisError::UndefinedEss)
    ));
}

#[test]
fn min_retained_below_two_is_rejected() {
    let scheme = ReweightScheme::DiscardOptimized {
        candidate_set: CandidateSet::All,
        min_retained: 1,
    };
    assert!(matches!(scheme.validate(), Err(AmisError::Configuration(_))));
    assert!(Reweighter::new(scheme).is_err());
}

#[test]
fn nonmixing_examples() {
    let single = store_from_terms(&[vec![0.0, 1.0]]);
    let w = nonmixing_weights(&single);
    assert!((w.w(1, 0) - 1.0).abs() < 1e-15 && (w.w(1, 1) - 1.0).abs() < 1e-15);

    let terms = [vec![3.0, 1.0, 0.5], vec![0.2, -0.4]];
    let store = store_from_terms(&terms);
    let w = nonmixing_weights(&store);
    assert!((0..3).all(|n| w.w(1, n) == 0.0));
    let plain = terms[1].iter().map(|t| t.exp()).sum::<f64>() / 2.0;
    assert!((w.estimate(&store).unwrap() - plain).abs() < 1e-12);
    let report = w.ess(&store).unwrap();
    assert!(report.ess_hat <= 2.0 + 1e-12);
}

#[test]
fn all_schemes_agree_on_one_proposal() {
    let store = one_step_store(&[0.4], 6, 23);
    let reference = flat_weights(&store).estimate(&store).unwrap();
    for scheme in [
        ReweightScheme::Flat,
        ReweightScheme::Balance,
        ReweightScheme::DiscardFixed,
        ReweightScheme::discard_optimized(),
        ReweightScheme::NonMixingLastBatch,
    ] {
        let w = Reweighter::new(scheme).unwrap().reweight(&store).unwrap();
        assert!(
            (w.estimate(&store).unwrap() - reference).abs() < 1e-12,
            "{} differs",
            scheme.name()
        );
    }
}

#[test]
fn weighted_mean_fast_path_matches_per_sample_sum() {
    let terms = vec![vec![1.5, -2.0], vec![0.3], vec![-0.7, 2.2, 0.1]];
    let store = store_from_terms(&terms);
    for w in [
        flat_weights(&store),
        discard_weights(&store, 1).unwrap(),
        nonmixing_weights(&store),
    ] {
        let fast = w.log_estimate(&store).unwrap();
        let slow = w.log_weighted_mean(&store, WeightedSample::log_term).unwrap();
        assert!((fast - slow).abs() < 1e-12);
        let fast_c = w.log_mean_exp_neg_cost(&store).unwrap();
        let slow_c = w
            .log_weighted_mean(&store, |s| -s.cost().unwrap())
            .unwrap();
        assert!((fast_c - slow_c).abs() < 1e-12);
    }
}
