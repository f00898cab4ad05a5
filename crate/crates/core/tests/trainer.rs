use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raylab_core::analysis::{min_progress, PlateauOptions};
use raylab_core::bandit::{component_performance, expected_reinforce_gradient, sample_update};
use raylab_core::trainer::*;
use raylab_core::{BanditSpec, Representation};

fn config(k: usize, mode: TrainMode) -> TrainConfig {
    TrainConfig::new(BanditSpec::new(k, k).unwrap(), mode)
}

#[test]
fn identical_seeds_give_identical_runs() {
    for mode in [
        TrainMode::OnpolicyShared,
        TrainMode::OffpolicyMix(0.2),
        TrainMode::Supervised,
    ] {
        let c = config(2, mode).with_seed(42);
        assert_eq!(train(&c).unwrap(), train(&c).unwrap());
    }
    let a = train(&config(2, TrainMode::OnpolicyShared).with_seed(1)).unwrap();
    let b = train(&config(2, TrainMode::OnpolicyShared).with_seed(2)).unwrap();
    assert_ne!(a.records, b.records);
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let c = config(4, TrainMode::OnpolicyShared);
    let seeds = ensemble_seeds(5, 24);
    let opts = PlateauOptions::expected_rate();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&c, &seeds, &opts).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn records_stay_in_bounds_and_honour_the_stop_contract() {
    for (k, mode) in [
        (2, TrainMode::OnpolicyShared),
        (4, TrainMode::Tabular),
        (4, TrainMode::Separate),
        (3, TrainMode::OffpolicyMix(0.1)),
    ] {
        for seed in 0..5 {
            let mut c = config(k, mode).with_seed(seed);
            c.max_samples = 20_000;
            let t = train(&c).unwrap();
            for r in &t.records {
                assert!(r.j.iter().all(|j| (0.0..=1.0).contains(j)));
                assert!((0.0..=k as f64).contains(&r.total));
                assert_relative_eq!(r.total, r.j.iter().sum::<f64>(), epsilon = 1e-12);
            }
            assert!(t.records.windows(2).all(|w| w[1].step == w[0].step + 1));
            let last = t.last().unwrap();
            assert!(
                last.total >= c.stop_j || last.step * c.batch as u64 == c.max_samples,
                "{mode:?} seed {seed}: stopped at {} after {} steps",
                last.total,
                last.step
            );
        }
    }
}

#[test]
fn sampled_updates_average_to_the_expected_direction() {
    let c = config(2, TrainMode::OnpolicyShared);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = init_params(&c, &mut rng).unwrap();
    let n = 100_000;
    let d = params.dim();
    let (mut s1, mut s2) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let g = sample_update(&params, &mut rng, c.mode.sample_mode())
            .unwrap()
            .grad;
        for i in 0..d {
            s1[i] += g[i];
            s2[i] += g[i] * g[i];
        }
    }
    let expected = expected_reinforce_gradient(&params) / 2.0;
    for i in 0..d {
        let mean = s1[i] / n as f64;
        let se = ((s2[i] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!(
            (mean - expected[i]).abs() <= 4.0 * se + 1e-12,
            "coordinate {i}"
        );
    }
}

#[test]
fn balanced_initialization_solves_the_logit() {
    let mut c = config(2, TrainMode::OnpolicyShared);
    c.target_j0 = 0.2;
    c.init = InitSplit::Balanced;
    let p = init_params(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_relative_eq!(p.weights()[(0, 0)], (0.1f64 / 0.9).ln(), epsilon = 1e-12);
    assert_relative_eq!(p.weights()[(1, 1)], -2.1972245773362196, epsilon = 1e-12);
    let perf = component_performance(&p);
    assert_relative_eq!(perf[0], 0.1, epsilon = 1e-12);
    assert_relative_eq!(perf[1], 0.1, epsilon = 1e-12);
}

#[test]
fn random_initialization_hits_the_target_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (k, n) in [(2, 2), (4, 4), (8, 8), (2, 4)] {
        let c = TrainConfig::new(BanditSpec::new(k, n).unwrap(), TrainMode::OnpolicyShared);
        for _ in 0..50 {
            let p = init_params(&c, &mut rng).unwrap();
            let perf = component_performance(&p);
            assert!((perf.total() - c.target_j0).abs() < 1e-9);
            assert!(perf.as_slice().iter().all(|&j| j > 0.0));
        }
    }
}

#[test]
fn degenerate_targets_are_rejected() {
    let spec = BanditSpec::new(2, 2).unwrap();
    assert!(params_for_targets(spec, Representation::Shared, &[0.0, 0.2]).is_err());
    assert!(params_for_targets(spec, Representation::Shared, &[1.0, 0.2]).is_err());
    let mut c = config(2, TrainMode::OnpolicyShared);
    c.target_j0 = 1.5;
    c.init = InitSplit::Fractions(vec![0.9, 0.1]);
    assert!(init_params(&c, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    c.target_j0 = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = config(2, TrainMode::OnpolicyShared);
    c.eta = 0.0;
    assert!(train(&c).is_err());
    let mut c = config(2, TrainMode::OnpolicyShared);
    c.batch = 3;
    assert!(c.validate().is_err());
    c.context_sampling = ContextSampling::Uniform;
    assert!(c.validate().is_ok());
    assert!(config(2, TrainMode::OffpolicyMix(1.5)).validate().is_err());
}

#[test]
fn supervised_runs_avoid_the_plateaus_of_reinforce() {
    let seeds = ensemble_seeds(6, 40);
    let opts = PlateauOptions::expected_rate();
    let run = |mode| {
        let mut c = config(2, mode);
        c.target_j0 = 0.2;
        run_ensemble(&c, &seeds, &opts).unwrap()
    };
    let sup = run(TrainMode::Supervised);
    let on = run(TrainMode::OnpolicyShared);
    let mut on_mins: Vec<f64> = on.runs.iter().filter_map(|r| r.min_progress).collect();
    on_mins.sort_by(f64::total_cmp);
    let median = on_mins[on_mins.len() / 2];
    for r in &sup.runs {
        assert!(r.reached_stop);
        assert!(r.min_progress.unwrap() > median, "seed {}", r.seed);
    }
}

#[test]
fn windowed_and_expected_progress_track_each_other_on_smooth_runs() {
    let mut c = config(2, TrainMode::Supervised).with_seed(9);
    c.eta = 0.01;
    let t = train(&c).unwrap();
    let windowed = min_progress(&t, &PlateauOptions::stochastic()).unwrap();
    let expected = min_progress(&t, &PlateauOptions::expected_rate()).unwrap();
    assert!(
        (windowed / expected - 1.0).abs() < 0.5,
        "{windowed} vs {expected}"
    );
}

#[test]
fn singleton_ensemble_cdf_is_a_single_step() {
    let c = config(2, TrainMode::OnpolicyShared);
    let e = run_ensemble(&c, &[77], &PlateauOptions::expected_rate()).unwrap();
    let cdf = e.cdf();
    assert_eq!(cdf.len(), 1);
    assert_eq!(cdf[0].1, 1.0);
    assert!(run_ensemble(&c, &[], &PlateauOptions::expected_rate()).is_err());
}

#[test]
fn adam_training_converges() {
    let mut c = config(2, TrainMode::OnpolicyShared).with_seed(3);
    c.optimizer = Optimizer::adam();
    c.eta = 0.01;
    c.init = InitSplit::Balanced;
    let t = train(&c).unwrap();
    assert!(t.last().unwrap().total >= c.stop_j);
}

#[test]
fn mode_names_round_trip() {
    for mode in [
        TrainMode::OnpolicyShared,
        TrainMode::Tabular,
        TrainMode::Separate,
        TrainMode::OffpolicyMix(0.25),
        TrainMode::Supervised,
    ] {
        assert_eq!(mode.label().parse::<TrainMode>().unwrap(), mode);
    }
    assert_eq!(
        "mix:0.1".parse::<TrainMode>().unwrap(),
        TrainMode::OffpolicyMix(0.1)
    );
    assert!("sarsa".parse::<TrainMode>().is_err());
}
