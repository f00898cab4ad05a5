//! Measurements on learning dynamics: plateaus, winner-take-all regions,
//! null clines and basin-of-attraction bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::PerfPoint;
use crate::dynamics::jdot_2x2;
use crate::error::{domain, Error, Result};
use crate::trajectory::Trajectory;

/// How normalized progress is measured along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressEstimator {
    /// `(J(t+w) − J(t)) / (w·η)` from the recorded performances.
    Windowed,
    /// The expected rate recorded with each point, free of sampling noise.
    ExpectedRate,
}

/// Knobs for progress-based plateau detection.
///
/// Records whose total performance is below `J(0) + start_excl` or above
/// `K − opt_excl` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauOptions {
    pub start_excl: f64,
    pub opt_excl: f64,
    pub threshold: f64,
    pub window: usize,
    pub estimator: ProgressEstimator,
}

impl PlateauOptions {
    /// Defaults for noisy stochastic runs.
    pub fn stochastic() -> Self {
        Self {
            start_excl: 0.05,
            opt_excl: 0.15,
            threshold: 1e-2,
            window: 25,
            estimator: ProgressEstimator::Windowed,
        }
    }

    /// Stochastic defaults, measured with the recorded expected rate.
    pub fn expected_rate() -> Self {
        Self {
            estimator: ProgressEstimator::ExpectedRate,
            ..Self::stochastic()
        }
    }

    /// Defaults for exact flows: no smoothing.
    pub fn deterministic() -> Self {
        Self {
            window: 1,
            ..Self::stochastic()
        }
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }

    pub fn with_exclusions(self, start_excl: f64, opt_excl: f64) -> Self {
        Self {
            start_excl,
            opt_excl,
            ..self
        }
    }
}

impl Default for PlateauOptions {
    fn default() -> Self {
        Self::stochastic()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauKind {
    AnalyticInflection,
    EmpiricalDip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    /// Where the slowest progress occurred.
    pub location: PerfPoint,
    /// Flatness: the smallest normalized progress magnitude in the plateau.
    pub epsilon: f64,
    pub entry_step: u64,
    pub exit_step: u64,
    pub kind: PlateauKind,
}

/// `(record index, |progress|)` for every record outside the exclusion windows.
fn admissible_progress(traj: &Trajectory, opts: &PlateauOptions) -> Result<Vec<(usize, f64)>> {
    if traj.len() < 3 {
        return domain(format!(
            "trajectory has {} records, need at least 3",
            traj.len()
        ));
    }
    let k = traj.components() as f64;
    let lo = traj.records[0].total + opts.start_excl;
    let hi = k - opts.opt_excl;
    let progress = match opts.estimator {
        ProgressEstimator::Windowed => traj.progress(opts.window),
        ProgressEstimator::ExpectedRate => traj
            .rates()
            .ok_or_else(|| Error::Domain("trajectory has no recorded rates".into()))?,
    };
    let admissible: Vec<(usize, f64)> = progress
        .into_iter()
        .enumerate()
        .filter(|&(t, _)| {
            let total = traj.records[t].total;
            total >= lo && total <= hi
        })
        .map(|(t, p)| (t, p.abs()))
        .collect();
    if admissible.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(admissible)
}

/// Slowest normalized progress outside the exclusion windows.
pub fn min_progress(traj: &Trajectory, opts: &PlateauOptions) -> Result<f64> {
    Ok(admissible_progress(traj, opts)?
        .into_iter()
        .map(|(_, p)| p)
        .fold(f64::INFINITY, f64::min))
}

/// Each maximal run of consecutive admissible records with progress below
/// the threshold is one plateau.
pub fn detect_plateaus_empirical(
    traj: &Trajectory,
    opts: &PlateauOptions,
) -> Result<Vec<PlateauReport>> {
    let admissible = admissible_progress(traj, opts)?;
    let mut out = Vec::new();
    let mut run: Option<(usize, usize, usize, f64)> = None; // (first, last, argmin, min)
    let mut flush = |run: &mut Option<(usize, usize, usize, f64)>| {
        if let Some((first, last, argmin, min)) = run.take() {
            out.push(PlateauReport {
                location: PerfPoint::new(traj.records[argmin].j.clone())
                    .expect("recorded performance lies in [0, 1]"),
                epsilon: min,
                entry_step: traj.records[first].step,
                exit_step: traj.records[last].step,
                kind: PlateauKind::EmpiricalDip,
            });
        }
    };
    let mut prev: Option<usize> = None;
    for &(t, p) in &admissible {
        let contiguous = prev.is_some_and(|q| q + 1 == t);
        if !contiguous {
            flush(&mut run);
        }
        if p < opts.threshold {
            run = Some(match run {
                Some((first, _, _, min)) if p < min => (first, t, t, p),
                Some((first, _, argmin, min)) => (first, t, argmin, min),
                None => (t, t, t, p),
            });
        } else {
            flush(&mut run);
        }
        prev = Some(t);
    }
    flush(&mut run);
    Ok(out)
}

/// Flatness of the inflection point on the diagonal `J₂ = 1 − J₁`: `2J₁²(1−J₁)²`.
pub fn epsilon_on_diagonal(j1: f64) -> f64 {
    2.0 * j1 * j1 * (1.0 - j1) * (1.0 - j1)
}

/// Ranges of `J₁` on the diagonal where the inflection is a plateau
/// (acceleration turns from negative to positive).
pub fn diagonal_plateau_interval() -> [(f64, f64); 2] {
    let r = 15f64.sqrt();
    [(0.0, (15.0 - r) / 30.0), ((15.0 + r) / 30.0, 1.0)]
}

pub fn in_diagonal_plateau_interval(j1: f64) -> bool {
    diagonal_plateau_interval()
        .iter()
        .any(|&(a, b)| j1 >= a && j1 <= b)
}

/// First crossing of `J₁ + J₂ = 1`, linearly interpolated between records.
pub fn diagonal_crossing(traj: &Trajectory) -> Option<[f64; 2]> {
    traj.records.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        let (sa, sb) = (a.total - 1.0, b.total - 1.0);
        if sa == 0.0 {
            return Some([a.j[0], a.j[1]]);
        }
        if sa < 0.0 && sb >= 0.0 {
            let s = sa / (sa - sb);
            Some([
                a.j[0] + s * (b.j[0] - a.j[0]),
                a.j[1] + s * (b.j[1] - a.j[1]),
            ])
        } else {
            None
        }
    })
}

/// The analytic plateau traversed by a `2×2` trajectory, if its diagonal
/// crossing lies in a plateau interval.
pub fn analytic_plateau(traj: &Trajectory) -> Option<PlateauReport> {
    let [j1, j2] = diagonal_crossing(traj)?;
    if !in_diagonal_plateau_interval(j1) {
        return None;
    }
    let step = traj
        .records
        .iter()
        .find(|r| r.total >= 1.0)
        .map_or(0, |r| r.step);
    Some(PlateauReport {
        location: PerfPoint::pair(j1.clamp(0.0, 1.0), j2.clamp(0.0, 1.0)).ok()?,
        epsilon: epsilon_on_diagonal(j1),
        entry_step: step,
        exit_step: step,
        kind: PlateauKind::AnalyticInflection,
    })
}

/// The winning component if following `J̇` improves exactly one component:
/// `J̇_k > 0` and `J̇_{k′} ≤ 0` for every other `k′`.
pub fn is_wta(jdot: &[f64]) -> Option<usize> {
    let mut winners = jdot.iter().enumerate().filter(|(_, &v)| v > 0.0);
    match (winners.next(), winners.next()) {
        (Some((k, _)), None) => Some(k),
        _ => None,
    }
}

/// Points of one null cline, split into its two quadratic branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCline {
    /// Zero-based component whose derivative vanishes on this curve.
    pub component: usize,
    pub lower: Vec<[f64; 2]>,
    pub upper: Vec<[f64; 2]>,
}

/// The two hyperbolae `J̇₁ = 0` (`2J₁(1−J₁) = J₂(1−J₂)`) and `J̇₂ = 0`
/// (`J₁(1−J₁) = 2J₂(1−J₂)`), sampled at `resolution` values of `J₁`.
pub fn null_clines(resolution: usize) -> Result<[NullCline; 2]> {
    if resolution < 2 {
        return domain("null clines need a resolution of at least 2");
    }
    let mut xs: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    // tips of the first cline, where its branches meet
    let tip = (1.0 - 0.5f64.sqrt()) / 2.0;
    xs.extend([tip, 1.0 - tip]);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    // Solves J₂(1−J₂) = c for both branches.
    let solve = |c: f64| -> Option<(f64, f64)> {
        let disc = 1.0 - 4.0 * c;
        if disc < -1e-15 {
            return None;
        }
        let r = disc.max(0.0).sqrt();
        Some(((1.0 - r) / 2.0, (1.0 + r) / 2.0))
    };

    let mut first = NullCline {
        component: 0,
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let mut second = NullCline {
        component: 1,
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for &x in &xs {
        let a = x * (1.0 - x);
        if let Some((lo, hi)) = solve(2.0 * a) {
            first.lower.push([x, lo]);
            first.upper.push([x, hi]);
        }
        if let Some((lo, hi)) = solve(a / 2.0) {
            second.lower.push([x, lo]);
            second.upper.push([x, hi]);
        }
    }
    Ok([first, second])
}

/// Polygon of starting points guaranteed to reach a plateau at least as flat as `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinPolygon {
    pub vertices: Vec<[f64; 2]>,
    pub epsilon: f64,
}

impl BasinPolygon {
    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a[1] > p[1]) != (b[1] > p[1])
                && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
            {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// `(min corner, max corner)`.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        self.vertices.iter().fold(
            ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
            |(lo, hi), v| {
                (
                    [lo[0].min(v[0]), lo[1].min(v[1])],
                    [hi[0].max(v[0]), hi[1].max(v[1])],
                )
            },
        )
    }

    /// Uniform draw from the interior by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let (lo, hi) = self.bounding_box();
        loop {
            let p = [
                lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
                lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
            ];
            if self.contains(p) {
                return p;
            }
        }
    }
}

/// Lower bound on the basin of the plateau reached by trajectories leaving
/// the `J₂`-dominated WTA region through `crossing` on the `J̇₁ = 0` cline.
pub fn basin_polygon(crossing: [f64; 2]) -> Result<BasinPolygon> {
    let [x1, y1] = crossing;
    if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&y1) {
        return domain("crossing must lie in the unit square");
    }
    let residual = 2.0 * x1 * (1.0 - x1) - y1 * (1.0 - y1);
    if residual.abs() > 1e-6 {
        return domain(format!(
            "({x1}, {y1}) is not on the J1 null cline (residual {residual:e})"
        ));
    }
    let x2 = 0.5 * (1.0 + x1 - y1);
    Ok(BasinPolygon {
        vertices: vec![
            [0.0, 0.0],
            [0.0, 1.0],
            [x2, 1.0 - x2],
            [x1, y1],
            [x1, 1.0 - y1],
        ],
        epsilon: 2.0 * x2 * x2,
    })
}

/// [`basin_polygon`] for the upper-branch crossing at `J₁ = j1`.
pub fn basin_polygon_at(j1: f64) -> Result<BasinPolygon> {
    let c = 2.0 * j1 * (1.0 - j1);
    let disc = 1.0 - 4.0 * c;
    if disc < 0.0 {
        return domain(format!("the J1 null cline does not reach J1 = {j1}"));
    }
    basin_polygon([j1, (1.0 + disc.sqrt()) / 2.0])
}

/// Chance that a start near the origin, uniform in angle, is in a WTA region:
/// `(4/π)·arctan(½)`.
pub fn wta_init_probability_analytic() -> f64 {
    4.0 / std::f64::consts::PI * 0.5f64.atan()
}

/// Monte-Carlo estimate of [`wta_init_probability_analytic`] at a finite radius.
pub fn wta_init_probability_mc<R: Rng + ?Sized>(
    samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return domain("need at least one sample");
    }
    if !(radius > 0.0 && radius <= 1.0) {
        return domain(format!("radius {radius} outside (0, 1]"));
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let phi = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
        let (j1, j2) = (radius * phi.cos(), radius * phi.sin());
        let (a, b) = jdot_2x2(j1, j2)?;
        if is_wta(&[a, b]).is_some() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}
