//! Stochastic training of the bandit policy from sampled contexts.
//!
//! A batch holds one sample per context (contexts enumerated, not drawn)
//! unless [`ContextSampling::Uniform`] is selected. Performance is recorded
//! after every batch, exactly, from the parameters.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{detect_plateaus_empirical, min_progress, PlateauOptions};
use crate::bandit::{
    component_performance, expected_reinforce_gradient, expected_update, sample_update_in_context,
    BanditSpec, Params, Representation, SampleMode,
};
use crate::error::{domain, Error, Result};
use crate::seed::derive_seed;
use crate::trajectory::{Record, Trajectory, TrajectorySource};

/// Representation and data-generation ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    OnpolicyShared,
    Tabular,
    Separate,
    OffpolicyMix(f64),
    Supervised,
}

impl TrainMode {
    pub fn representation(self) -> Representation {
        match self {
            TrainMode::Tabular => Representation::Tabular,
            TrainMode::Separate => Representation::Separate,
            _ => Representation::Shared,
        }
    }

    pub fn sample_mode(self) -> SampleMode {
        match self {
            TrainMode::OffpolicyMix(beta) => SampleMode::EpsilonMix(beta),
            TrainMode::Supervised => SampleMode::Supervised,
            _ => SampleMode::OnPolicy,
        }
    }

    pub fn label(self) -> String {
        match self {
            TrainMode::OnpolicyShared => "onpolicy_shared".into(),
            TrainMode::Tabular => "tabular".into(),
            TrainMode::Separate => "separate".into(),
            TrainMode::OffpolicyMix(beta) => format!("offpolicy_mix:{beta}"),
            TrainMode::Supervised => "supervised".into(),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "onpolicy_shared" | "onpolicy" => TrainMode::OnpolicyShared,
            "tabular" => TrainMode::Tabular,
            "separate" => TrainMode::Separate,
            "supervised" => TrainMode::Supervised,
            "offpolicy_mix" | "offpolicy" => TrainMode::OffpolicyMix(DEFAULT_MIX),
            other => {
                let beta = other
                    .strip_prefix("offpolicy_mix:")
                    .or_else(|| other.strip_prefix("mix:"))
                    .and_then(|b| b.parse::<f64>().ok());
                match beta {
                    Some(beta) => TrainMode::OffpolicyMix(beta),
                    None => return domain(format!("unknown training mode `{other}`")),
                }
            }
        })
    }
}

/// Share of uniform-random actions in the off-policy ablation.
pub const DEFAULT_MIX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSampling {
    /// Each batch cycles through the contexts in order.
    Enumerated,
    /// Each sample draws its context uniformly.
    Uniform,
}

/// How the initial performance is split across components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSplit {
    /// Uniform direction on the positive orthant (uniform angle for `K = 2`).
    Random,
    /// `J_k = J₀/K` for every component.
    Balanced,
    /// Explicit fractions of `J₀`, normalised to sum to one.
    Fractions(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: BanditSpec,
    pub mode: TrainMode,
    pub optimizer: Optimizer,
    pub eta: f64,
    pub batch: usize,
    pub target_j0: f64,
    /// Budget in samples (not batches).
    pub max_samples: u64,
    pub stop_j: f64,
    pub seed: u64,
    pub context_sampling: ContextSampling,
    pub init: InitSplit,
}

/// Smallest share of `J₀` any component may receive from the random split.
const MIN_SHARE: f64 = 0.01;
const DIVERGENCE_NORM: f64 = 1e4;

impl TrainConfig {
    /// Defaults: `η = 0.1`, one sample per context, `J₀ = K/10`,
    /// stop at `J ≥ K − 0.1` or after `10⁵` samples.
    pub fn new(spec: BanditSpec, mode: TrainMode) -> Self {
        let k = spec.contexts() as f64;
        Self {
            spec,
            mode,
            optimizer: Optimizer::Sgd,
            eta: 0.1,
            batch: spec.contexts(),
            target_j0: k / 10.0,
            max_samples: 100_000,
            stop_j: k - 0.1,
            seed: 0,
            context_sampling: ContextSampling::Enumerated,
            init: InitSplit::Random,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.spec.contexts();
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return domain(format!("step size {} must be positive", self.eta));
        }
        if self.batch == 0 {
            return domain("batch must be at least 1");
        }
        if self.context_sampling == ContextSampling::Enumerated && !self.batch.is_multiple_of(k) {
            return domain(format!(
                "enumerated contexts need a batch that is a multiple of K={k}, got {}",
                self.batch
            ));
        }
        if !(self.target_j0 > 0.0 && self.target_j0 < k as f64) {
            return domain(format!(
                "initial performance {} outside (0, K)",
                self.target_j0
            ));
        }
        if self.target_j0 >= self.stop_j {
            return domain("initial performance must be below the stop threshold");
        }
        if let TrainMode::OffpolicyMix(beta) = self.mode {
            if !(0.0..=1.0).contains(&beta) {
                return domain(format!("mixing weight {beta} outside [0, 1]"));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return domain("invalid Adam hyperparameters");
            }
        }
        Ok(())
    }
}

/// Per-component performance targets summing to `J₀`.
pub fn init_targets<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<Vec<f64>> {
    let k = config.spec.contexts();
    let j0 = config.target_j0;
    if !(j0 > 0.0 && j0 < k as f64) {
        return domain(format!("initial performance {j0} outside (0, K)"));
    }
    let shares: Vec<f64> = match &config.init {
        InitSplit::Balanced => vec![1.0 / k as f64; k],
        InitSplit::Fractions(f) => {
            if f.len() != k || f.iter().any(|v| !(*v > 0.0)) {
                return domain("need K positive fractions");
            }
            let s: f64 = f.iter().sum();
            f.iter().map(|v| v / s).collect()
        }
        InitSplit::Random if k == 1 => vec![1.0],
        InitSplit::Random => {
            let dir: Vec<f64> = if k == 2 {
                let phi = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
                vec![phi.cos(), phi.sin()]
            } else {
                (0..k)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z.abs()
                    })
                    .collect()
            };
            let s: f64 = dir.iter().sum();
            let clipped: Vec<f64> = dir.iter().map(|d| (d / s).max(MIN_SHARE)).collect();
            let s: f64 = clipped.iter().sum();
            clipped.iter().map(|c| c / s).collect()
        }
    };
    let targets: Vec<f64> = shares.iter().map(|s| s * j0).collect();
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return domain(format!(
            "component target {t} must lie strictly inside (0, 1)"
        ));
    }
    Ok(targets)
}

/// Parameters with `b = 0`, off-diagonal weights zero and `W_kk` solved so
/// that `J_k` hits its target.
pub fn params_for_targets(
    spec: BanditSpec,
    repr: Representation,
    targets: &[f64],
) -> Result<Params> {
    if targets.len() != spec.contexts() {
        return Err(Error::Shape(format!(
            "{} targets for K={}",
            targets.len(),
            spec.contexts()
        )));
    }
    let others = (spec.arms() - 1) as f64;
    let mut p = Params::zeros(spec, repr);
    for (k, &j) in targets.iter().enumerate() {
        if !(j > 0.0 && j < 1.0) {
            return domain(format!(
                "component target {j} must lie strictly inside (0, 1)"
            ));
        }
        // e^w / (e^w + n − 1) = j
        p.weights_mut()[(k, k)] = (j * others / (1.0 - j)).ln();
    }
    Ok(p)
}

pub fn init_params<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<Params> {
    let targets = init_targets(config, rng)?;
    params_for_targets(config.spec, config.mode.representation(), &targets)
}

struct AdamState {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

fn optimizer_step(
    optimizer: &Optimizer,
    state: &mut Option<AdamState>,
    grad: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    match *optimizer {
        Optimizer::Sgd => grad * eta,
        Optimizer::Adam { beta1, beta2, eps } => {
            let s = state.get_or_insert_with(|| AdamState {
                m: DVector::zeros(grad.len()),
                v: DVector::zeros(grad.len()),
                t: 0,
            });
            s.t += 1;
            s.m = &s.m * beta1 + grad * (1.0 - beta1);
            s.v = &s.v * beta2 + grad.component_mul(grad) * (1.0 - beta2);
            let c1 = 1.0 - beta1.powi(s.t);
            let c2 = 1.0 - beta2.powi(s.t);
            s.m.zip_map(&s.v, |m, v| eta * (m / c1) / ((v / c2).sqrt() + eps))
        }
    }
}

/// One training run. Deterministic given `config.seed`.
pub fn train(config: &TrainConfig) -> Result<Trajectory> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(config, &mut rng)?;
    let k = config.spec.contexts();
    let sample_mode = config.mode.sample_mode();

    let mut traj = Trajectory::new(
        config.eta,
        TrajectorySource::Train {
            config: Box::new(config.clone()),
            seed: config.seed,
        },
    );
    let rate = |p: &Params| -> Result<f64> {
        Ok(expected_reinforce_gradient(p).dot(&expected_update(p, sample_mode)?))
    };
    let perf = component_performance(&params).into_vec();
    traj.records
        .push(Record::new(0, perf).with_rate(rate(&params)?));

    let mut adam = None;
    let mut samples = 0u64;
    let mut step = 0u64;
    let mut grad = DVector::zeros(params.dim());
    while traj.last().expect("initial record").total < config.stop_j
        && samples + config.batch as u64 <= config.max_samples
    {
        grad.fill(0.0);
        for i in 0..config.batch {
            let context = match config.context_sampling {
                ContextSampling::Enumerated => i % k,
                ContextSampling::Uniform => rng.random_range(0..k),
            };
            let s = sample_update_in_context(&params, context, &mut rng, sample_mode)?;
            grad += s.grad;
        }
        grad /= config.batch as f64;
        let delta = optimizer_step(&config.optimizer, &mut adam, &grad, config.eta);
        params.apply(&delta);
        samples += config.batch as u64;
        step += 1;

        let norm = params.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence {
                step: step as usize,
                norm,
            });
        }
        traj.records.push(
            Record::new(step, component_performance(&params).into_vec()).with_rate(rate(&params)?),
        );
    }
    Ok(traj)
}

/// Summary of a single ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub min_progress: Option<f64>,
    pub plateau_count: Option<usize>,
    pub steps: u64,
    pub initial_j: Vec<f64>,
    pub final_total: f64,
    pub reached_stop: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: Vec<RunSummary>,
}

impl EnsembleSummary {
    /// Empirical CDF of min progress as `(value, fraction ≤ value)`, over runs
    /// that produced a measurement. Runs with no admissible records are skipped.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<f64> = self.runs.iter().filter_map(|r| r.min_progress).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n))
            .collect()
    }

    /// Fraction of all runs whose min progress is at most `eps`.
    pub fn fraction_at_most(&self, eps: f64) -> f64 {
        let hits = self
            .runs
            .iter()
            .filter(|r| r.min_progress.is_some_and(|m| m <= eps))
            .count();
        hits as f64 / self.runs.len() as f64
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.runs
            .iter()
            .filter(|r| r.error.is_some())
            .map(|r| r.seed)
            .collect()
    }

    pub fn median_plateau_count(&self) -> Option<f64> {
        let mut c: Vec<usize> = self.runs.iter().filter_map(|r| r.plateau_count).collect();
        if c.is_empty() {
            return None;
        }
        c.sort_unstable();
        let n = c.len();
        Some(if n % 2 == 1 {
            c[n / 2] as f64
        } else {
            (c[n / 2 - 1] + c[n / 2]) as f64 / 2.0
        })
    }
}

pub fn summarize_run(
    seed: u64,
    traj: &Trajectory,
    stop_j: f64,
    opts: &PlateauOptions,
) -> RunSummary {
    let last = traj.last().expect("trajectories start with a record");
    RunSummary {
        seed,
        min_progress: min_progress(traj, opts).ok(),
        plateau_count: detect_plateaus_empirical(traj, opts).ok().map(|p| p.len()),
        steps: last.step,
        initial_j: traj.records[0].j.clone(),
        final_total: last.total,
        reached_stop: last.total >= stop_j,
        error: None,
    }
}

/// Per-run seeds derived from a master seed.
pub fn ensemble_seeds(master: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| derive_seed(master, i)).collect()
}

/// Trains one run per seed (in parallel) and summarises each. Failed runs are
/// recorded, not propagated.
pub fn run_ensemble(
    config: &TrainConfig,
    seeds: &[u64],
    opts: &PlateauOptions,
) -> Result<EnsembleSummary> {
    if seeds.is_empty() {
        return domain("an ensemble needs at least one seed");
    }
    config.validate()?;
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = config.clone().with_seed(seed);
            match train(&cfg) {
                Ok(traj) => summarize_run(seed, &traj, cfg.stop_j, opts),
                Err(e) => RunSummary {
                    seed,
                    min_progress: None,
                    plateau_count: None,
                    steps: 0,
                    initial_j: Vec::new(),
                    final_total: f64::NAN,
                    reached_stop: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(EnsembleSummary { runs })
}
