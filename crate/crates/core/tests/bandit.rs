mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raylab_core::bandit::{
    component_gradient, coupling_profile, expected_reinforce_gradient, expected_update,
    interference, policy_probs, sample_update, sample_update_in_context, supervised_gradient,
};
use raylab_core::{BanditSpec, Params, ReducedParams, Representation, SampleMode};

use common::*;

const SIZES: [(usize, usize); 4] = [(2, 2), (4, 4), (8, 8), (2, 4)];
const REPRS: [Representation; 3] = [
    Representation::Shared,
    Representation::Tabular,
    Representation::Separate,
];

#[test]
fn gradients_match_central_differences_for_every_representation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for repr in REPRS {
        for (k, n) in SIZES {
            let spec = BanditSpec::new(k, n).unwrap();
            for _ in 0..100 {
                let p = random_params(spec, repr, 1.5, &mut rng);
                let x = to_vec(&p.flatten());
                let fd = central_diff(total_performance(spec, repr), &x, 1e-5);
                let err = rel_err(&to_vec(&expected_reinforce_gradient(&p)), &fd, 1e-8);
                assert!(err < 1e-5, "{repr:?} ({k},{n}) reinforce: {err:e}");
                let fd = central_diff(log_likelihood(spec, repr), &x, 1e-5);
                let err = rel_err(&to_vec(&supervised_gradient(&p).unwrap()), &fd, 1e-8);
                assert!(err < 1e-5, "{repr:?} ({k},{n}) supervised: {err:e}");
            }
        }
    }
}

#[test]
fn component_gradients_sum_to_the_expected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = BanditSpec::new(4, 6).unwrap();
    let p = random_params(spec, Representation::Shared, 1.0, &mut rng);
    let sum = (0..4).fold(nalgebra::DVector::zeros(p.dim()), |acc, k| {
        acc + component_gradient(&p, k).unwrap()
    });
    assert_relative_eq!(sum, expected_reinforce_gradient(&p), epsilon = 1e-14);
    assert!(component_gradient(&p, 4).is_err());
}

/// Mean and standard error per coordinate of `n` draws.
fn sample_stats(p: &Params, mode: SampleMode, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = p.dim();
    let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let g = sample_update(p, &mut rng, mode).unwrap().grad;
        for i in 0..d {
            s1[i] += g[i];
            s2[i] += g[i] * g[i];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / nf).collect();
    let se = s2
        .iter()
        .zip(&mean)
        .map(|(s, m)| ((s / nf - m * m).max(0.0) / nf).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn on_policy_samples_are_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = BanditSpec::new(2, 3).unwrap();
    let p = random_params(spec, Representation::Shared, 1.0, &mut rng);
    let (mean, se) = sample_stats(&p, SampleMode::OnPolicy, 1_000_000, 13);
    let expected = expected_reinforce_gradient(&p) / spec.contexts() as f64;
    for i in 0..p.dim() {
        assert!(
            (mean[i] - expected[i]).abs() <= 4.0 * se[i] + 1e-12,
            "coordinate {i}: {} vs {} (se {})",
            mean[i],
            expected[i],
            se[i]
        );
    }
}

#[test]
fn every_mode_samples_match_the_expected_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let spec = BanditSpec::new(2, 2).unwrap();
    let p = random_params(spec, Representation::Shared, 1.0, &mut rng);
    for mode in [SampleMode::EpsilonMix(0.3), SampleMode::Supervised] {
        let (mean, se) = sample_stats(&p, mode, 200_000, 15);
        let expected = expected_update(&p, mode).unwrap();
        for i in 0..p.dim() {
            assert!(
                (mean[i] - expected[i]).abs() <= 4.0 * se[i] + 1e-12,
                "{mode:?} {i}"
            );
        }
    }
}

#[test]
fn mixed_coupling_matches_monte_carlo() {
    // The own-logit coordinate of the expected update in context 0 is f(J₀).
    for arms in [2usize, 4] {
        let spec = BanditSpec::new(1, arms).unwrap();
        for (w, beta) in [(-2.0, 0.1), (0.0, 0.1), (1.5, 0.5)] {
            let mut p = Params::zeros(spec, Representation::Tabular);
            p.weights_mut()[(0, 0)] = w;
            let u = policy_probs(&p, 0).unwrap()[0];
            let mode = SampleMode::EpsilonMix(beta);
            let mut rng = ChaCha8Rng::seed_from_u64(16);
            let n = 400_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    sample_update_in_context(&p, 0, &mut rng, mode)
                        .unwrap()
                        .grad[0]
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            let f = coupling_profile(mode, arms, u);
            assert!(
                (mean - f).abs() <= 4.0 * se,
                "n={arms} β={beta}: {mean} vs {f}"
            );
        }
    }
}

#[test]
fn tabular_contexts_never_interfere() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for repr in [Representation::Tabular, Representation::Separate] {
        let spec = BanditSpec::new(3, 3).unwrap();
        for _ in 0..50 {
            let p = random_params(spec, repr, 2.0, &mut rng);
            let g0 = to_vec(&component_gradient(&p, 0).unwrap());
            let g2 = to_vec(&component_gradient(&p, 2).unwrap());
            assert_eq!(interference(&g0, &g2).unwrap(), 0.0);
        }
    }
}

#[test]
fn reduced_system_embeds_into_full_parameters() {
    let r = ReducedParams::new([0.4, -1.2, 0.7]).unwrap();
    let p = r.to_params();
    let (j1, j2) = r.perf();
    let perf = raylab_core::bandit::component_performance(&p);
    assert_relative_eq!(perf[0], j1, epsilon = 1e-14);
    assert_relative_eq!(perf[1], j2, epsilon = 1e-14);
}

proptest! {
    #[test]
    fn softmax_rows_are_normalized(
        flat in prop::collection::vec(-30.0f64..30.0, 12),
        ctx in 0usize..2,
    ) {
        let spec = BanditSpec::new(2, 4).unwrap();
        let p = Params::from_flat(spec, Representation::Shared, &flat).unwrap();
        let pi = policy_probs(&p, ctx).unwrap();
        prop_assert!((pi.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(pi.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn reduced_interference_is_minus_one_half(theta in prop::array::uniform3(-8.0f64..8.0)) {
        let (g1, g2) = ReducedParams::new(theta).unwrap().component_gradients();
        prop_assert!((interference(&g1, &g2).unwrap() + 0.5).abs() <= 1e-10);
    }

    #[test]
    fn interference_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        prop_assume!(a.iter().any(|&x| x != 0.0) && b.iter().any(|&x| x != 0.0));
        let ab = interference(&a, &b).unwrap();
        prop_assert_eq!(ab, interference(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}
