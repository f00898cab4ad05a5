//! The registered experiment recipes. Each one resolves its parameters,
//! runs, and returns CSV tables for [`crate::output::write_outputs`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use raylab_core::analysis::{basin_polygon_at, is_wta, min_progress, null_clines, PlateauOptions};
use raylab_core::bandit::{coupling_derivative, coupling_profile};
use raylab_core::dynamics::{
    fixed_point_classify, flow_integrate_until, jddot_2x2, jdot_2x2, p6, Coupling, DeepLinearState,
    FactoredObjective, FixedPointKind, FlowState, FlowSystem,
};
use raylab_core::seed::derive_seed;
use raylab_core::trainer::{
    ensemble_seeds, init_targets, run_ensemble, summarize_run, train, InitSplit, Optimizer,
    TrainConfig, TrainMode,
};
use raylab_core::{BanditSpec, SampleMode, Trajectory};

use crate::config::{ExperimentRecipe, RecipeName, RecipeParams};
use crate::error::CliError;
use crate::output::{int, num, opt, RecipeOutput, Table};

const DEFAULT_SEED: u64 = 0;

pub fn run_recipe(recipe: &ExperimentRecipe) -> Result<RecipeOutput, CliError> {
    let p = &recipe.params;
    match recipe.name {
        RecipeName::FlowField => flow_field(p),
        RecipeName::Trajectories => trajectories(p),
        RecipeName::Cdf => cdf(p),
        RecipeName::Scaling => scaling(p),
        RecipeName::Basin => basin(p),
        RecipeName::Coupling => coupling(p),
        RecipeName::Badness => badness(p),
        RecipeName::DeepLinear => deep_linear(p),
    }
}

fn config_err(e: raylab_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn scaled(count: usize, quick: bool) -> usize {
    if quick {
        (count / 10).max(1)
    } else {
        count
    }
}

fn parse_modes(p: &RecipeParams, default: &[&str]) -> Result<Vec<TrainMode>, CliError> {
    let given: Vec<String> = match &p.modes {
        Some(m) => m.clone(),
        None => default.iter().map(|s| s.to_string()).collect(),
    };
    if given.is_empty() {
        return Err(CliError::Config("`modes` needs at least one value".into()));
    }
    given
        .iter()
        .map(|m| m.parse::<TrainMode>().map_err(config_err))
        .collect()
}

fn parse_optimizer(s: &str) -> Result<Optimizer, CliError> {
    match s {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::adam()),
        other => Err(CliError::Config(format!(
            "unknown optimizer `{other}`; expected `sgd` or `adam`"
        ))),
    }
}

fn optimizer_label(o: &Optimizer) -> &'static str {
    match o {
        Optimizer::Sgd => "sgd",
        Optimizer::Adam { .. } => "adam",
    }
}

fn plateau_options(p: &RecipeParams) -> PlateauOptions {
    let mut opts = match p.estimator.as_deref() {
        Some("windowed") => PlateauOptions::stochastic(),
        _ => PlateauOptions::expected_rate(),
    };
    if let Some(w) = p.window {
        opts.window = w;
    }
    if let Some(t) = p.threshold {
        opts = opts.with_threshold(t);
    }
    opts
}

/// Indices kept when thinning `len` records by `stride`; the last one is always kept.
fn thinned(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |&i| i % stride == 0 || i + 1 == len)
}

fn kind_label(kind: FixedPointKind) -> &'static str {
    match kind {
        FixedPointKind::Unstable => "unstable",
        FixedPointKind::Saddle => "saddle",
        FixedPointKind::Stable => "stable",
        FixedPointKind::NotFixed => "not_fixed",
    }
}

fn flow_field(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let n = p.resolution.unwrap_or(50);
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();

    let mut field = Table::new(
        "flow_field.csv",
        &["j1", "j2", "jdot1", "jdot2", "jddot", "wta"],
    );
    for &a in &grid {
        for &b in &grid {
            let (d1, d2) = jdot_2x2(a, b)?;
            let wta = is_wta(&[d1, d2]).map(|k| int(k + 1)).unwrap_or_default();
            field.push(vec![
                num(a),
                num(b),
                num(d1),
                num(d2),
                num(jddot_2x2(a, b)?),
                wta,
            ]);
        }
    }

    let mut clines = Table::new("null_clines.csv", &["component", "branch", "j1", "j2"]);
    for cline in null_clines(n)? {
        for (branch, points) in [("lower", &cline.lower), ("upper", &cline.upper)] {
            for &[a, b] in points {
                clines.push(vec![
                    int(cline.component + 1),
                    branch.into(),
                    num(a),
                    num(b),
                ]);
            }
        }
    }

    // J̈ vanishes on the anti-diagonal and on the zero set of P6.
    let mut inflection = Table::new("inflection.csv", &["curve", "j1", "j2"]);
    for &a in &grid {
        inflection.push(vec!["antidiagonal".into(), num(a), num(1.0 - a)]);
    }
    for &a in &grid {
        for b in p6_roots(a) {
            inflection.push(vec!["p6".into(), num(a), num(b)]);
        }
    }

    let mut fixed = Table::new(
        "fixed_points.csv",
        &["j1", "j2", "kind", "trace", "determinant"],
    );
    for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
        let r = fixed_point_classify(a, b)?;
        fixed.push(vec![
            num(a),
            num(b),
            kind_label(r.kind).into(),
            num(r.trace),
            num(r.determinant),
        ]);
    }

    Ok(RecipeOutput {
        tables: vec![field, clines, inflection, fixed],
        resolved: json!({ "resolution": n }),
        seeds: Vec::new(),
    })
}

/// Roots of `P6(j1, ·)` in `(0, 1)`, bracketed on a fine grid and bisected.
fn p6_roots(j1: f64) -> Vec<f64> {
    const CELLS: usize = 2000;
    let f = |b: f64| p6(j1, b);
    let mut roots = Vec::new();
    let mut prev = (0.0, f(0.0));
    for i in 1..=CELLS {
        let b = i as f64 / CELLS as f64;
        let cur = (b, f(b));
        if prev.1 == 0.0 && prev.0 > 0.0 {
            roots.push(prev.0);
        } else if prev.1 * cur.1 < 0.0 {
            let (mut lo, mut hi) = (prev.0, cur.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (f(mid) < 0.0) == (prev.1 < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    roots
}

/// Deterministic counterpart of a 2×2 training mode, where one exists.
fn flow_system(mode: TrainMode) -> Result<Option<FlowSystem>, CliError> {
    let norm = 2f64.sqrt();
    Ok(match mode {
        TrainMode::OnpolicyShared => Some(FlowSystem::Reinforce2x2),
        TrainMode::Supervised => Some(FlowSystem::Supervised2x2),
        TrainMode::Tabular => Some(FlowSystem::Factored(FactoredObjective::uniform(
            Coupling::on_policy(),
            2,
            norm,
            0.0,
        )?)),
        TrainMode::OffpolicyMix(beta) => Some(FlowSystem::Factored(FactoredObjective::uniform(
            Coupling::Profile {
                mode: SampleMode::EpsilonMix(beta),
                arms: 2,
            },
            2,
            norm,
            -0.5,
        )?)),
        TrainMode::Separate => None,
    })
}

#[derive(Serialize)]
struct TrainSettings {
    #[serde(rename = "K")]
    k: usize,
    n: usize,
    #[serde(rename = "J0")]
    j0: f64,
    eta: Vec<f64>,
    batch: usize,
    max_samples: u64,
    #[serde(rename = "stop_J")]
    stop_j: f64,
    seed: u64,
}

fn train_settings(p: &RecipeParams, k: usize) -> TrainSettings {
    TrainSettings {
        k,
        n: p.n.unwrap_or(k),
        j0: p.j0.unwrap_or(k as f64 / 10.0),
        eta: p.eta.clone().unwrap_or_else(|| vec![0.1]),
        batch: p.batch.unwrap_or(k),
        max_samples: p.max_samples.unwrap_or(100_000),
        stop_j: p.stop_j.unwrap_or(k as f64 - 0.1),
        seed: p.seed.unwrap_or(DEFAULT_SEED),
    }
}

fn train_config(
    s: &TrainSettings,
    mode: TrainMode,
    optimizer: Optimizer,
    eta: f64,
) -> Result<TrainConfig, CliError> {
    let spec = BanditSpec::new(s.k, s.n).map_err(config_err)?;
    let mut c = TrainConfig::new(spec, mode);
    c.optimizer = optimizer;
    c.eta = eta;
    c.batch = s.batch;
    c.target_j0 = s.j0;
    c.max_samples = s.max_samples;
    c.stop_j = s.stop_j;
    c.validate().map_err(config_err)?;
    Ok(c)
}

fn trajectories(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let s = train_settings(p, 2);
    let quick = p.quick.unwrap_or(false);
    let starts = scaled(p.starts.unwrap_or(20), quick);
    let stride = p.stride.unwrap_or(10);
    let modes = parse_modes(p, &["onpolicy", "tabular", "supervised"])?;
    let eta = s.eta[0];
    let seeds = ensemble_seeds(s.seed, starts);

    let mut flows = Table::new(
        "flows.csv",
        &["mode", "start_id", "step", "j1", "j2", "total"],
    );
    let mut runs = Table::new(
        "runs.csv",
        &["mode", "start_id", "seed", "step", "j1", "j2", "total"],
    );
    let mut summary = Table::new(
        "summary.csv",
        &[
            "mode",
            "kind",
            "start_id",
            "seed",
            "j1_0",
            "j2_0",
            "steps",
            "final_total",
            "reached_stop",
            "min_progress",
        ],
    );
    let det = PlateauOptions::deterministic();
    let stochastic = plateau_options(p);
    for mode in modes {
        let cfg = train_config(&s, mode, Optimizer::Sgd, eta)?;
        let system = flow_system(mode)?;
        let label = mode.label();
        let results: Vec<_> = seeds
            .par_iter()
            .map(|&seed| -> Result<_, CliError> {
                let run = train(&cfg.clone().with_seed(seed))?;
                let flow = match &system {
                    Some(sys) => {
                        let start = FlowState::new(run.records[0].j.clone())?;
                        let max_steps = (s.max_samples / s.batch as u64) as usize;
                        Some(flow_integrate_until(
                            &start,
                            sys,
                            eta.min(0.5),
                            max_steps,
                            s.stop_j,
                        )?)
                    }
                    None => None,
                };
                Ok((run, flow))
            })
            .collect::<Result<_, _>>()?;
        for (id, ((run, flow), &seed)) in results.iter().zip(&seeds).enumerate() {
            for i in thinned(run.len(), stride) {
                let r = &run.records[i];
                runs.push(vec![
                    label.clone(),
                    int(id),
                    int(seed),
                    int(r.step),
                    num(r.j[0]),
                    num(r.j[1]),
                    num(r.total),
                ]);
            }
            summary.push(summary_row(
                &label,
                "run",
                id,
                Some(seed),
                run,
                s.stop_j,
                &stochastic,
            ));
            if let Some(flow) = flow {
                for i in thinned(flow.len(), stride) {
                    let r = &flow.records[i];
                    flows.push(vec![
                        label.clone(),
                        int(id),
                        int(r.step),
                        num(r.j[0]),
                        num(r.j[1]),
                        num(r.total),
                    ]);
                }
                summary.push(summary_row(&label, "flow", id, None, flow, s.stop_j, &det));
            }
        }
    }
    Ok(RecipeOutput {
        tables: vec![flows, runs, summary],
        resolved: json!({
            "train": s,
            "starts": starts,
            "stride": stride,
            "estimator": stochastic.estimator,
            "window": stochastic.window,
            "threshold": stochastic.threshold,
        }),
        seeds,
    })
}

fn summary_row(
    mode: &str,
    kind: &str,
    id: usize,
    seed: Option<u64>,
    traj: &Trajectory,
    stop_j: f64,
    opts: &PlateauOptions,
) -> Vec<String> {
    let first = &traj.records[0];
    let last = traj.last().expect("trajectories start with a record");
    vec![
        mode.into(),
        kind.into(),
        int(id),
        seed.map(int).unwrap_or_default(),
        num(first.j[0]),
        num(first.j[1]),
        int(last.step),
        num(last.total),
        int(last.total >= stop_j),
        opt(min_progress(traj, opts).ok()),
    ]
}

fn cdf(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let s = train_settings(p, p.k.unwrap_or(2));
    let quick = p.quick.unwrap_or(false);
    let runs_per = scaled(p.seeds.unwrap_or(1000), quick);
    let modes = parse_modes(
        p,
        &["onpolicy", "tabular", "offpolicy_mix:0.1", "supervised"],
    )?;
    let optimizers: Vec<Optimizer> = match &p.optimizers {
        Some(o) => o
            .iter()
            .map(|s| parse_optimizer(s))
            .collect::<Result<_, _>>()?,
        None => vec![Optimizer::Sgd],
    };
    let opts = plateau_options(p);
    let seeds = ensemble_seeds(s.seed, runs_per);

    let mut curve = Table::new(
        "cdf.csv",
        &[
            "mode",
            "optimizer",
            "eta",
            "rank",
            "quantile",
            "min_progress",
        ],
    );
    let mut runs = Table::new(
        "runs.csv",
        &[
            "mode",
            "optimizer",
            "eta",
            "seed",
            "j1_0",
            "min_progress",
            "plateau_count",
            "steps",
            "final_total",
            "reached_stop",
            "error",
        ],
    );
    let mut summary = Table::new(
        "summary.csv",
        &["mode", "optimizer", "eta", "epsilon", "fraction"],
    );
    for &mode in &modes {
        for optimizer in &optimizers {
            for &eta in &s.eta {
                let cfg = train_config(&s, mode, *optimizer, eta)?;
                let e = run_ensemble(&cfg, &seeds, &opts)?;
                let key = [mode.label(), optimizer_label(optimizer).into(), num(eta)];
                for (rank, (value, q)) in e.cdf().into_iter().enumerate() {
                    let mut row = key.to_vec();
                    row.extend([int(rank), num(q), num(value)]);
                    curve.push(row);
                }
                for r in &e.runs {
                    let mut row = key.to_vec();
                    row.extend([
                        int(r.seed),
                        opt(r.initial_j.first().copied()),
                        opt(r.min_progress),
                        r.plateau_count.map(int).unwrap_or_default(),
                        int(r.steps),
                        num(r.final_total),
                        int(r.reached_stop),
                        r.error.clone().unwrap_or_default(),
                    ]);
                    runs.push(row);
                }
                for exp in -7..=-1 {
                    let eps = 10f64.powi(exp);
                    let mut row = key.to_vec();
                    row.extend([num(eps), num(e.fraction_at_most(eps))]);
                    summary.push(row);
                }
            }
        }
    }
    Ok(RecipeOutput {
        tables: vec![curve, runs, summary],
        resolved: json!({
            "train": s,
            "seeds": runs_per,
            "modes": modes.iter().map(|m| m.label()).collect::<Vec<_>>(),
            "optimizers": optimizers,
            "estimator": opts.estimator,
            "window": opts.window,
            "threshold": opts.threshold,
            "start_excl": opts.start_excl,
            "opt_excl": opts.opt_excl,
        }),
        seeds,
    })
}

fn scaling(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let ks = p.ks.clone().unwrap_or_else(|| vec![2, 4, 8]);
    if ks.is_empty() {
        return Err(CliError::Config("`Ks` needs at least one value".into()));
    }
    let quick = p.quick.unwrap_or(false);
    let runs_per = scaled(p.seeds.unwrap_or(100), quick);
    let stride = p.stride.unwrap_or(100);
    let opts = plateau_options(p);
    let master = p.seed.unwrap_or(DEFAULT_SEED);
    let seeds = ensemble_seeds(master, runs_per);

    let mut curves = Table::new(
        "curves.csv",
        &["K", "eta", "seed", "step", "samples", "total", "normalized"],
    );
    let mut summary = Table::new(
        "summary.csv",
        &[
            "K",
            "eta",
            "seed",
            "steps",
            "final_total",
            "reached_stop",
            "plateau_count",
            "min_progress",
            "error",
        ],
    );
    let mut resolved = Vec::new();
    for &k in &ks {
        let s = train_settings(p, k);
        for &eta in &s.eta {
            let cfg = train_config(&s, TrainMode::OnpolicyShared, Optimizer::Sgd, eta)?;
            let trained: Vec<_> = seeds
                .par_iter()
                .map(|&seed| train(&cfg.clone().with_seed(seed)))
                .collect();
            for (traj, &seed) in trained.iter().zip(&seeds) {
                let key = [int(k), num(eta), int(seed)];
                let traj = match traj {
                    Ok(t) => t,
                    Err(e) => {
                        let mut row = key.to_vec();
                        row.extend(["", "", "", "", ""].map(String::from));
                        row.push(e.to_string());
                        summary.push(row);
                        continue;
                    }
                };
                for i in thinned(traj.len(), stride) {
                    let r = &traj.records[i];
                    let mut row = key.to_vec();
                    row.extend([
                        int(r.step),
                        int(r.step * s.batch as u64),
                        num(r.total),
                        num(r.total / k as f64),
                    ]);
                    curves.push(row);
                }
                let r = summarize_run(seed, traj, cfg.stop_j, &opts);
                let mut row = key.to_vec();
                row.extend([
                    int(r.steps),
                    num(r.final_total),
                    int(r.reached_stop),
                    r.plateau_count.map(int).unwrap_or_default(),
                    opt(r.min_progress),
                    String::new(),
                ]);
                summary.push(row);
            }
        }
        resolved.push(s);
    }
    Ok(RecipeOutput {
        tables: vec![curves, summary],
        resolved: json!({
            "train": resolved,
            "seeds": runs_per,
            "stride": stride,
            "estimator": opts.estimator,
            "window": opts.window,
            "threshold": opts.threshold,
        }),
        seeds,
    })
}

/// Starting points on `J₁ + J₂ = J₀` with the trainer's random angular split.
fn sampled_starts(j0: f64, count: usize, seed: u64) -> Result<Vec<[f64; 2]>, CliError> {
    let mut cfg = TrainConfig::new(BanditSpec::new(2, 2)?, TrainMode::OnpolicyShared);
    cfg.target_j0 = j0;
    cfg.init = InitSplit::Random;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = init_targets(&cfg, &mut rng).map_err(config_err)?;
            Ok([t[0], t[1]])
        })
        .collect()
}

/// Deterministic on-policy flow from `start`: `(min progress, steps, reached)`.
fn measure_flow(
    start: [f64; 2],
    stop: f64,
    max_steps: usize,
) -> Result<(Option<f64>, u64, bool), CliError> {
    let t = flow_integrate_until(
        &FlowState::pair(start[0], start[1])?,
        &FlowSystem::Reinforce2x2,
        0.1,
        max_steps,
        stop,
    )?;
    let last = t.last().expect("trajectories start with a record");
    let eps = min_progress(&t, &PlateauOptions::deterministic()).ok();
    Ok((eps, last.step, last.total >= stop))
}

fn basin(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let j0s = p.j0s.clone().unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]);
    if j0s.is_empty() {
        return Err(CliError::Config("`J0s` needs at least one value".into()));
    }
    if let Some(j) = j0s.iter().find(|&&j| j >= 1.9) {
        return Err(CliError::Config(format!(
            "`J0s` value {j} must be below 1.9"
        )));
    }
    let quick = p.quick.unwrap_or(false);
    let starts = scaled(p.starts.unwrap_or(200), quick);
    let max_steps = p.max_steps.unwrap_or(1_000_000);
    let master = p.seed.unwrap_or(DEFAULT_SEED);
    let seeds = ensemble_seeds(master, j0s.len());
    let stop = 2.0 - 0.1;

    let mut per_start = Table::new(
        "starts.csv",
        &[
            "J0",
            "start_id",
            "j1",
            "j2",
            "min_progress",
            "steps",
            "reached_stop",
        ],
    );
    let mut fractions = Table::new("basin.csv", &["J0", "epsilon", "fraction"]);
    for (&j0, &seed) in j0s.iter().zip(&seeds) {
        let points = sampled_starts(j0, starts, seed)?;
        let measured: Vec<_> = points
            .par_iter()
            .map(|&s| measure_flow(s, stop, max_steps))
            .collect::<Result<_, _>>()?;
        for (id, (pt, (eps, steps, reached))) in points.iter().zip(&measured).enumerate() {
            per_start.push(vec![
                num(j0),
                int(id),
                num(pt[0]),
                num(pt[1]),
                opt(*eps),
                int(*steps),
                int(*reached),
            ]);
        }
        for i in 0..=30 {
            let eps = 10f64.powf(-7.0 + 6.0 * i as f64 / 30.0);
            let hits = measured
                .iter()
                .filter(|m| m.0.is_some_and(|e| e <= eps))
                .count();
            fractions.push(vec![num(j0), num(eps), num(hits as f64 / starts as f64)]);
        }
    }

    let mut polygons = Table::new(
        "polygon.csv",
        &["crossing_j1", "epsilon", "vertex", "j1", "j2"],
    );
    for c in [0.025, 0.05, 0.075, 0.1, 0.125] {
        let poly = basin_polygon_at(c)?;
        for (i, v) in poly.vertices.iter().enumerate() {
            polygons.push(vec![
                num(c),
                num(poly.epsilon),
                int(i),
                num(v[0]),
                num(v[1]),
            ]);
        }
    }
    Ok(RecipeOutput {
        tables: vec![fractions, per_start, polygons],
        resolved: json!({
            "J0s": j0s,
            "starts": starts,
            "max_steps": max_steps,
            "seed": master,
            "eta": 0.1,
            "stop_J": stop,
        }),
        seeds,
    })
}

fn coupling(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let modes = parse_modes(p, &["onpolicy", "supervised", "mix:0.1"])?;
    let arms = p.n.unwrap_or(2);
    let n = p.resolution.unwrap_or(101);
    let mut table = Table::new("coupling.csv", &["mode", "u", "f", "fprime"]);
    let mut labels = Vec::new();
    for mode in modes {
        let sample = mode.sample_mode();
        let label = match sample {
            SampleMode::OnPolicy => "onpolicy".to_string(),
            SampleMode::Supervised => "supervised".to_string(),
            SampleMode::EpsilonMix(beta) => format!("mix:{beta}"),
        };
        for i in 0..n {
            let u = i as f64 / (n - 1) as f64;
            table.push(vec![
                label.clone(),
                num(u),
                num(coupling_profile(sample, arms, u)),
                num(coupling_derivative(sample, arms, u)),
            ]);
        }
        labels.push(label);
    }
    Ok(RecipeOutput {
        tables: vec![table],
        resolved: json!({ "modes": labels, "n": arms, "resolution": n }),
        seeds: Vec::new(),
    })
}

fn badness(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let j0 = p.j0.unwrap_or(0.2);
    let stop = p.stop_j.unwrap_or(1.9);
    if !(j0 < stop && stop < 2.0) {
        return Err(CliError::Config(format!(
            "need J0 < stop_J < 2, got J0 = {j0}, stop_J = {stop}"
        )));
    }
    let quick = p.quick.unwrap_or(false);
    let starts = scaled(p.starts.unwrap_or(100), quick);
    let max_steps = p.max_steps.unwrap_or(10_000_000);
    let master = p.seed.unwrap_or(DEFAULT_SEED);
    let seed = derive_seed(master, 0);

    let (_, baseline, reached) = measure_flow([j0 / 2.0, j0 / 2.0], stop, max_steps)?;
    if !reached {
        return Err(CliError::Config(format!(
            "the balanced flow needs more than max_steps = {max_steps} steps"
        )));
    }
    let points = sampled_starts(j0, starts, seed)?;
    let measured: Vec<_> = points
        .par_iter()
        .map(|&s| measure_flow(s, stop, max_steps))
        .collect::<Result<_, _>>()?;

    let mut table = Table::new(
        "badness.csv",
        &[
            "kind",
            "start_id",
            "j1_0",
            "j2_0",
            "epsilon",
            "steps",
            "ratio",
            "reached_stop",
        ],
    );
    let (eps, _, _) = measure_flow([j0 / 2.0, j0 / 2.0], stop, max_steps)?;
    table.push(vec![
        "balanced".into(),
        String::new(),
        num(j0 / 2.0),
        num(j0 / 2.0),
        opt(eps),
        int(baseline),
        num(1.0),
        int(true),
    ]);
    for (id, (pt, (eps, steps, reached))) in points.iter().zip(&measured).enumerate() {
        table.push(vec![
            "sampled".into(),
            int(id),
            num(pt[0]),
            num(pt[1]),
            opt(*eps),
            int(*steps),
            num(*steps as f64 / baseline as f64),
            int(*reached),
        ]);
    }
    Ok(RecipeOutput {
        tables: vec![table],
        resolved: json!({
            "J0": j0,
            "stop_J": stop,
            "starts": starts,
            "max_steps": max_steps,
            "seed": master,
            "eta": 0.1,
        }),
        seeds: vec![seed],
    })
}

fn deep_linear(p: &RecipeParams) -> Result<RecipeOutput, CliError> {
    let sv = p.singular_values.clone().unwrap_or_else(|| vec![3.0, 1.0]);
    if sv.is_empty() {
        return Err(CliError::Config(
            "`singular_values` needs at least one value".into(),
        ));
    }
    let eta = p.eta.as_ref().map_or(1e-3, |e| e[0]);
    let steps = p.steps.unwrap_or(40_000);
    let scale = p.init_scale.unwrap_or(1e-3);
    let hidden = p.hidden.unwrap_or(sv.len());
    let stride = p.stride.unwrap_or(10);
    let master = p.seed.unwrap_or(DEFAULT_SEED);
    let seed = derive_seed(master, 0);

    let d = sv.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    };
    let (w1, w2) = (init(hidden, d), init(d, hidden));
    let sxy = DMatrix::from_diagonal(&DVector::from_vec(sv.clone()));
    let state = DeepLinearState::new(w1, w2, sxy, DMatrix::identity(d, d))?;
    let traj = raylab_core::dynamics::deep_linear_flow(&state, eta, steps)?;

    let mut loss = Table::new("loss.csv", &["step", "loss"]);
    let mut modes = Table::new("modes.csv", &["step", "mode", "singular_value", "strength"]);
    let strengths = traj.modes.as_ref().expect("identity input correlation");
    let mut order: Vec<f64> = sv.clone();
    order.sort_by(|a, b| b.total_cmp(a));
    for i in thinned(traj.loss.len(), stride) {
        loss.push(vec![int(i), num(traj.loss[i])]);
        for (m, s) in strengths[i].iter().enumerate() {
            modes.push(vec![int(i), int(m + 1), num(order[m]), num(*s)]);
        }
    }
    Ok(RecipeOutput {
        tables: vec![loss, modes],
        resolved: json!({
            "singular_values": sv,
            "eta": eta,
            "steps": steps,
            "init_scale": scale,
            "hidden": hidden,
            "stride": stride,
            "seed": master,
        }),
        seeds: vec![seed],
    })
}
