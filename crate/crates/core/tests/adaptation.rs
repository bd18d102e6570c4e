use std::sync::Arc;

use amis_core::adaptation::{
    accumulate, path_integrals, AdaptMode, PathIntegralAdapter,
};
use amis_core::problems::gaussian_target;
use amis_core::reweight::{balance_weights, discard_weights, flat_weights};
use amis_core::rng::{ReplayNoise, StreamKey};
use amis_core::sde::{
    girsanov_log_weight, simulate_keyed, simulate_path, BasisFunction, DiffusionProblem,
    FeedbackControl, TargetFunctional,
};
use amis_core::store::{SampleStore, WeightedSample};
use amis_core::AmisError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn brownian_1d(steps: usize) -> DiffusionProblem {
    DiffusionProblem::new(1, 1, 1.0, steps, vec![0.0], TargetFunctional::terminal_cost(|_| 0.0))
        .unwrap()
}

/// Store on the 2-D Gaussian-target problem, one batch per affine control.
fn affine_store(params: &[[f64; 6]], batch: usize, seed: u64) -> SampleStore {
    let problem = gaussian_target(vec![1.0, -0.5], 8).unwrap();
    let mut store = SampleStore::new();
    for (k, p) in params.iter().enumerate() {
        let a = DMatrix::from_row_slice(2, 3, p);
        let control = FeedbackControl::new(BasisFunction::Affine, a, 2).unwrap();
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

const PARAMS: [[f64; 6]; 5] = [
    [0.0; 6],
    [0.4, 0.1, 0.0, -0.2, 0.0, 0.3],
    [0.5, -0.3, 0.2, -0.1, 0.1, 0.0],
    [0.3, 0.0, 0.0, -0.3, 0.0, 0.0],
    [0.6, 0.2, -0.1, 0.0, 0.3, 0.1],
];

fn adapt(store: &SampleStore, mode: AdaptMode) -> DMatrix<f64> {
    let mut adapter = PathIntegralAdapter::new(BasisFunction::Affine, 2, 2, mode);
    adapter.adapt(store).unwrap().params().clone()
}

#[test]
fn hand_built_two_step_paths() {
    let problem = brownian_1d(2);
    let dt = 0.5;
    let c = [0.3, -0.2];
    let noise = [[0.4, -0.1], [-0.7, 0.25]];
    let log_y = [0.0, 3.0f64.ln()];
    let mut f_total = DMatrix::zeros(1, 2);
    let mut g_total = DMatrix::zeros(2, 2);
    let mut f_hand = [0.0; 2];
    let mut g_hand = [[0.0; 2]; 2];
    for p in 0..2 {
        let control =
            FeedbackControl::new(BasisFunction::Affine, DMatrix::from_row_slice(1, 2, &[c[p], 0.0]), 1)
                .unwrap();
        let path = simulate_path(&problem, &control, &mut ReplayNoise::new(noise[p].to_vec()), 1, p)
            .unwrap();
        let increments = path.increments().unwrap().to_vec();
        let sample = WeightedSample::new(1, p, log_y[p], 0.0, None, Some(Arc::new(path)));
        let (f, g) = accumulate(&sample, &control, &BasisFunction::Affine).unwrap();
        f_total += f;
        g_total += g;

        let y = log_y[p].exp();
        let mut x = 0.0;
        for w in increments {
            let kick = c[p] * dt + w;
            let feat = [1.0, x];
            for a in 0..2 {
                f_hand[a] += y * kick * feat[a];
                for b in 0..2 {
                    g_hand[a][b] += y * feat[a] * feat[b] * dt;
                }
            }
            x += kick;
        }
    }
    for a in 0..2 {
        assert!((f_total[(0, a)] - f_hand[a]).abs() < 1e-12);
        for b in 0..2 {
            assert!((g_total[(a, b)] - g_hand[a][b]).abs() < 1e-12);
        }
    }
}

#[test]
fn empty_store_gives_zero_control() {
    let store = SampleStore::new();
    for mode in [AdaptMode::FullRecompute, AdaptMode::Incremental] {
        let a = adapt(&store, mode);
        assert_eq!(a.shape(), (2, 3));
        assert!(a.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn incremental_matches_full_recompute_with_flat_weights() {
    let mut store = affine_store(&PARAMS, 3, 9);
    let w = flat_weights(&store);
    store.set_log_weights(&w.log_weights).unwrap();
    let full = adapt(&store, AdaptMode::FullRecompute);
    let inc = adapt(&store, AdaptMode::Incremental);
    assert!((full - inc).abs().max() < 1e-12);
}

#[test]
fn incremental_matches_full_recompute_after_discard() {
    let mut store = affine_store(&PARAMS, 3, 10);
    let w = discard_weights(&store, 2).unwrap();
    store.set_log_weights(&w.log_weights).unwrap();
    let full = adapt(&store, AdaptMode::FullRecompute);
    let inc = adapt(&store, AdaptMode::Incremental);
    assert!((&full - &inc).abs().max() < 1e-12);

    let mut retained = SampleStore::new();
    for b in &store.batches()[2..] {
        let samples = b
            .samples()
            .iter()
            .map(|s| {
                WeightedSample::new(
                    s.iteration() - 2,
                    s.index(),
                    s.log_h(),
                    s.log_dqdp(),
                    None,
                    s.path().cloned(),
                )
            })
            .collect();
        retained.push_batch(b.control().clone(), samples).unwrap();
    }
    let direct = adapt(&retained, AdaptMode::FullRecompute);
    assert!((full - direct).abs().max() < 1e-12);
}

#[test]
fn incremental_tracks_changing_discard_times() {
    let full_store = affine_store(&PARAMS, 2, 12);
    let mut store = SampleStore::new();
    let mut inc = PathIntegralAdapter::new(BasisFunction::Affine, 2, 2, AdaptMode::Incremental);
    for (k, t) in [(1, 0), (2, 1), (3, 1), (4, 0), (5, 3)] {
        let b = full_store.batch(k);
        store.push_batch(b.control().clone(), b.samples().to_vec()).unwrap();
        let w = discard_weights(&store, t).unwrap();
        store.set_log_weights(&w.log_weights).unwrap();
        let a_inc = inc.adapt(&store).unwrap().params().clone();
        let a_full = adapt(&store, AdaptMode::FullRecompute);
        assert!((a_inc - a_full).abs().max() < 1e-12, "k={k} t={t}");
    }
}

#[test]
fn incremental_rejects_per_sample_weights() {
    let mut store = affine_store(&PARAMS[..3], 2, 4);
    let controls = store.controls();
    let w = balance_weights(&store, &controls).unwrap();
    store.set_log_weights(&w.log_weights).unwrap();
    let mut adapter = PathIntegralAdapter::new(BasisFunction::Affine, 2, 2, AdaptMode::Incremental);
    assert!(matches!(adapter.adapt(&store), Err(AmisError::Configuration(_))));
}

#[test]
fn weight_scale_leaves_parameters_unchanged() {
    let store = affine_store(&PARAMS, 3, 21);
    let base = adapt(&store, AdaptMode::FullRecompute);
    for log_c in [-400.0, -3.0, 2.5, 300.0] {
        let mut scaled = SampleStore::new();
        for b in store.batches() {
            let samples = b
                .samples()
                .iter()
                .map(|s| {
                    WeightedSample::new(
                        s.iteration(),
                        s.index(),
                        s.log_h() + log_c,
                        s.log_dqdp(),
                        None,
                        s.path().cloned(),
                    )
                })
                .collect();
            scaled.push_batch(b.control().clone(), samples).unwrap();
        }
        let a = adapt(&scaled, AdaptMode::FullRecompute);
        assert!((&a - &base).abs().max() < 1e-10, "scale {log_c}");
    }
}

#[test]
fn constant_basis_with_equal_weights_averages_increments() {
    let problem = brownian_1d(5);
    let mut store = SampleStore::new();
    let mut expected = 0.0;
    let mut count = 0.0;
    for (k, u) in [0.0, 0.8, -0.4].into_iter().enumerate() {
        let control = FeedbackControl::constant(&[u], 1);
        let samples = (0..4)
            .map(|n| {
                let path = simulate_keyed(&problem, &control, StreamKey::new(2, k + 1, n)).unwrap();
                let kicks: f64 = path.increments().unwrap().iter().map(|w| w + u * path.dt()).sum();
                expected += kicks / problem.horizon();
                count += 1.0;
                WeightedSample::new(k + 1, n, 0.0, 0.0, None, Some(Arc::new(path)))
            })
            .collect();
        store.push_batch(control, samples).unwrap();
    }
    let mut adapter =
        PathIntegralAdapter::new(BasisFunction::Constant, 1, 1, AdaptMode::FullRecompute);
    let a = adapter.adapt(&store).unwrap().params()[(0, 0)];
    assert!((a - expected / count).abs() < 1e-12);
}

#[test]
fn clamp_is_applied_to_adapted_control() {
    let store = affine_store(&PARAMS, 3, 8);
    let mut adapter = PathIntegralAdapter::new(BasisFunction::Affine, 2, 2, AdaptMode::FullRecompute)
        .with_clamp(Some(0.05));
    let control = adapter.adapt(&store).unwrap();
    for x in [[0.0, 0.0], [5.0, -7.0], [-30.0, 12.0]] {
        let u = control.eval(0.5, &x);
        assert!(u.iter().all(|v| v.abs() <= 0.05 + 1e-15));
    }
}

proptest! {
    #[test]
    fn g_is_symmetric_positive_semidefinite(
        noise in prop::collection::vec(-1.5f64..1.5, 12),
        a in prop::collection::vec(-2.0f64..2.0, 6),
        intervals in 1usize..4,
    ) {
        let problem = gaussian_target(vec![0.0, 0.0], 6).unwrap();
        let control = FeedbackControl::new(BasisFunction::Affine, DMatrix::from_row_slice(2, 3, &a), 2).unwrap();
        let path = simulate_path(&problem, &control, &mut ReplayNoise::new(noise), 1, 0).unwrap();
        for basis in [
            BasisFunction::Constant,
            BasisFunction::Affine,
            BasisFunction::piecewise(BasisFunction::Affine, intervals, 1.0).unwrap(),
        ] {
            let p = path_integrals(&path, &basis).unwrap();
            let asym = (&p.g - p.g.transpose()).abs().max();
            prop_assert!(asym <= 1e-12);
            let eig = p.g.clone().symmetric_eigenvalues();
            let scale = p.g.trace().max(1.0);
            prop_assert!(eig.iter().all(|v| *v >= -1e-10 * scale));
        }
    }
}
