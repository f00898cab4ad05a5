//! Continuous-time learning dynamics in performance coordinates.
//!
//! For the `2×2` shared bandit the expected-gradient flow closes over
//! `(J₁, J₂)`:
//!
//! ```text
//! J̇₁ = 2J₁²(1−J₁)² − J₁(1−J₁)J₂(1−J₂)
//! J̇₂ = 2J₂²(1−J₂)² − J₁(1−J₁)J₂(1−J₂)
//! ```
//!
//! The factored form `∇J_k = f_k(J_k) v_k` generalises this; its second-order
//! expressions drop all `∇v_k` terms and are therefore approximate for
//! problems where the `v_k` vary with the parameters.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bandit::{coupling_derivative, coupling_profile, SampleMode};
use crate::error::{domain, Error, Result};
use crate::trajectory::{Record, Trajectory, TrajectorySource};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return domain(format!("{name} = {v} outside [0, 1]"));
    }
    Ok(())
}

/// `(J̇₁, J̇₂)` of the on-policy `2×2` bandit.
pub fn jdot_2x2(j1: f64, j2: f64) -> Result<(f64, f64)> {
    check_unit("J1", j1)?;
    check_unit("J2", j2)?;
    Ok(jdot_2x2_unchecked(j1, j2))
}

#[inline]
fn jdot_2x2_unchecked(j1: f64, j2: f64) -> (f64, f64) {
    let a = j1 * (1.0 - j1);
    let b = j2 * (1.0 - j2);
    (2.0 * a * a - a * b, 2.0 * b * b - a * b)
}

/// The degree-6 polynomial with `J̈ = (1 − J₁ − J₂)·P₆(J₁, J₂)`.
pub fn p6(j1: f64, j2: f64) -> f64 {
    let (a, b) = (j1, j2);
    let (a2, b2) = (a * a, b * b);
    let (a3, b3) = (a2 * a, b2 * b);
    let (a4, b4) = (a3 * a, b3 * b);
    let (a5, b5) = (a4 * a, b4 * b);
    let (a6, b6) = (a5 * a, b5 * b);
    2.0 * (-8.0 * a6 + 8.0 * a5 * b + 20.0 * a5 - 20.0 * a4 * b - 16.0 * a4 - 2.0 * a3 * b3
        + 3.0 * a3 * b2
        + 15.0 * a3 * b
        + 4.0 * a3
        + 3.0 * a2 * b3
        - 4.0 * a2 * b2
        - 3.0 * a2 * b
        + 8.0 * a * b5
        - 20.0 * a * b4
        + 15.0 * a * b3
        - 3.0 * a * b2
        - 8.0 * b6
        + 20.0 * b5
        - 16.0 * b4
        + 4.0 * b3)
}

/// Acceleration `J̈ = ⟨∇J̇, ∇J⟩` of the on-policy `2×2` bandit.
pub fn jddot_2x2(j1: f64, j2: f64) -> Result<f64> {
    check_unit("J1", j1)?;
    check_unit("J2", j2)?;
    Ok((1.0 - j1 - j2) * p6(j1, j2))
}

/// `J̇` of the supervised (cross-entropy) `2×2` variant, in `J` coordinates.
pub fn jdot_supervised(j1: f64, j2: f64) -> Result<(f64, f64)> {
    check_unit("J1", j1)?;
    check_unit("J2", j2)?;
    Ok(jdot_supervised_unchecked(j1, j2))
}

#[inline]
fn jdot_supervised_unchecked(j1: f64, j2: f64) -> (f64, f64) {
    (
        j1 * (1.0 - j1) * (1.0 - 2.0 * j1 + j2),
        j2 * (1.0 - j2) * (1.0 - 2.0 * j2 + j1),
    )
}

/// Progress of the log-likelihood objective, `2(J₁−J₂)² + 2(1−J₁)(1−J₂) ≥ 0`.
pub fn jdot_supervised_objective(j1: f64, j2: f64) -> f64 {
    2.0 * (j1 - j2).powi(2) + 2.0 * (1.0 - j1) * (1.0 - j2)
}

/// `J̈` of the supervised objective; never positive.
pub fn jddot_supervised(j1: f64, j2: f64) -> Result<f64> {
    for (name, v) in [("J1", j1), ("J2", j2)] {
        if !(v > 0.0 && v <= 1.0) {
            return domain(format!("{name} = {v} outside (0, 1]"));
        }
    }
    Ok(-2.0 * j1 * (1.0 - j1) * (1.0 - 2.0 * j1 + j2).powi(2)
        - 2.0 * j2 * (1.0 - j2) * (1.0 - 2.0 * j2 + j1).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointKind {
    Unstable,
    Saddle,
    Stable,
    NotFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub kind: FixedPointKind,
    pub trace: f64,
    pub determinant: f64,
}

/// Classifies `(J₁, J₂)` from the sign pattern of the linearisation
/// `[[1−2J₁, J₂−½], [J₁−½, 1−2J₂]]`.
pub fn fixed_point_classify(j1: f64, j2: f64) -> Result<FixedPointReport> {
    let (d1, d2) = jdot_2x2(j1, j2)?;
    let jac = [[1.0 - 2.0 * j1, j2 - 0.5], [j1 - 0.5, 1.0 - 2.0 * j2]];
    let trace = jac[0][0] + jac[1][1];
    let determinant = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let kind = if d1.hypot(d2) > 1e-9 {
        FixedPointKind::NotFixed
    } else if determinant < 0.0 {
        FixedPointKind::Saddle
    } else if trace > 0.0 {
        FixedPointKind::Unstable
    } else {
        FixedPointKind::Stable
    };
    Ok(FixedPointReport {
        kind,
        trace,
        determinant,
    })
}

/// A scalar coupling `f` together with its derivative.
#[derive(Clone)]
pub enum Coupling {
    /// One of the bandit learning-signal profiles.
    Profile { mode: SampleMode, arms: usize },
    /// An arbitrary smooth profile. Must be reentrant.
    Custom {
        value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Coupling {
    pub fn on_policy() -> Self {
        Coupling::Profile {
            mode: SampleMode::OnPolicy,
            arms: 2,
        }
    }

    pub fn supervised() -> Self {
        Coupling::Profile {
            mode: SampleMode::Supervised,
            arms: 2,
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            Coupling::Profile { mode, arms } => coupling_profile(*mode, *arms, u),
            Coupling::Custom { value, .. } => value(u),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            Coupling::Profile { mode, arms } => coupling_derivative(*mode, *arms, u),
            Coupling::Custom { derivative, .. } => derivative(u),
        }
    }
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::Profile { mode, arms } => f
                .debug_struct("Profile")
                .field("mode", mode)
                .field("arms", arms)
                .finish(),
            Coupling::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// Objective whose component gradients factor as `∇J_k = f_k(J_k) v_k`.
#[derive(Debug, Clone)]
pub struct FactoredObjective {
    couplings: Vec<Coupling>,
    vnorm: Vec<f64>,
    rho: DMatrix<f64>,
}

impl FactoredObjective {
    pub fn new(couplings: Vec<Coupling>, vnorm: Vec<f64>, rho: DMatrix<f64>) -> Result<Self> {
        let k = couplings.len();
        if k == 0 || vnorm.len() != k || rho.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "{} couplings, {} norms, rho {:?}",
                k,
                vnorm.len(),
                rho.shape()
            )));
        }
        if vnorm.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return domain("gradient-field norms must be positive");
        }
        for i in 0..k {
            if (rho[(i, i)] - 1.0).abs() > 1e-12 {
                return domain("interference matrix needs a unit diagonal");
            }
            for j in 0..k {
                if (rho[(i, j)] - rho[(j, i)]).abs() > 1e-12 || !(-1.0..=1.0).contains(&rho[(i, j)])
                {
                    return domain("interference matrix must be symmetric with entries in [-1, 1]");
                }
            }
        }
        Ok(Self {
            couplings,
            vnorm,
            rho,
        })
    }

    /// `K` identical components with uniform pairwise interference.
    pub fn uniform(coupling: Coupling, k: usize, vnorm: f64, rho: f64) -> Result<Self> {
        let m = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
        Self::new(vec![coupling; k], vec![vnorm; k], m)
    }

    /// The on-policy `2×2` bandit: `f(u) = u(1−u)`, `‖v‖ = √2`, `ρ = −½`.
    pub fn bandit_2x2() -> Self {
        Self::uniform(Coupling::on_policy(), 2, 2f64.sqrt(), -0.5).expect("valid constants")
    }

    /// The supervised `2×2` variant: `f(u) = 1−u`, `‖v‖ = √2`, `ρ = −½`.
    pub fn supervised_2x2() -> Self {
        Self::uniform(Coupling::supervised(), 2, 2f64.sqrt(), -0.5).expect("valid constants")
    }

    pub fn components(&self) -> usize {
        self.couplings.len()
    }

    pub fn coupling(&self, k: usize) -> &Coupling {
        &self.couplings[k]
    }

    pub fn vnorm(&self) -> &[f64] {
        &self.vnorm
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    fn check_point(&self, j: &[f64]) -> Result<()> {
        if j.len() != self.components() {
            return Err(Error::Shape(format!(
                "point of dimension {}, objective has {} components",
                j.len(),
                self.components()
            )));
        }
        Ok(())
    }
}

/// `J̇_k = Σ_{k′} ρ_{kk′} ‖v_k‖‖v_{k′}‖ f_k(J_k) f_{k′}(J_{k′})`.
pub fn factored_jdot(obj: &FactoredObjective, j: &[f64]) -> Result<Vec<f64>> {
    obj.check_point(j)?;
    Ok(factored_jdot_unchecked(obj, j))
}

fn factored_jdot_unchecked(obj: &FactoredObjective, j: &[f64]) -> Vec<f64> {
    let k = obj.components();
    let scaled: Vec<f64> = (0..k)
        .map(|i| obj.vnorm[i] * obj.couplings[i].value(j[i]))
        .collect();
    (0..k)
        .map(|i| {
            let inner: f64 = (0..k).map(|m| obj.rho[(i, m)] * scaled[m]).sum();
            scaled[i] * inner
        })
        .collect()
}

/// `J̈ ≈ Σ_k 2 f′_k(J_k)/f_k(J_k) · J̇_k²`, neglecting `∇v_k`.
///
/// Exact for the bandit, where the `v_k` are constant.
pub fn factored_jddot(obj: &FactoredObjective, j: &[f64]) -> Result<f64> {
    obj.check_point(j)?;
    let jdot = factored_jdot_unchecked(obj, j);
    let mut acc = 0.0;
    for (i, jd) in jdot.iter().enumerate() {
        let f = obj.couplings[i].value(j[i]);
        if f == 0.0 {
            return Err(Error::Singularity(format!(
                "f_{i}(J_{i}) = 0: the point is a saddle limit"
            )));
        }
        acc += 2.0 * obj.couplings[i].derivative(j[i]) / f * jd * jd;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauVerdict {
    PlateauPresent,
    Absent,
}

/// Approximate `J̈` at the two points flanking the saddle `(J_a = 0, J_b = 1)`:
/// `(J̈|_{J_a=0, J_b=1−ξ}, J̈|_{J_a=ξ, J_b=1})`, where `a` is the component with `f(0) = 0`.
///
/// Returns `None` when no component has `f(0) = 0`.
pub fn saddle_boundary_values(obj: &FactoredObjective, xi: f64) -> Result<Option<(f64, f64)>> {
    if obj.components() != 2 {
        return Err(Error::Shape(
            "saddle check is defined for two components".into(),
        ));
    }
    if !(xi > 0.0 && xi <= 0.1) {
        return domain(format!("offset {xi} outside (0, 0.1]"));
    }
    let Some(a) = (0..2).find(|&k| obj.couplings[k].value(0.0).abs() < 1e-12) else {
        return Ok(None);
    };
    let b = 1 - a;
    let edge = |k: usize, u: f64| {
        let f = obj.couplings[k].value(u);
        2.0 * f.powi(3) * obj.couplings[k].derivative(u) * obj.vnorm[k].powi(4)
    };
    Ok(Some((edge(b, 1.0 - xi), edge(a, xi))))
}

/// Sufficient condition for a plateau near the saddle: `J̈` negative on the
/// dominated edge and positive on the learned edge.
pub fn saddle_neighborhood_check(obj: &FactoredObjective, xi: f64) -> Result<PlateauVerdict> {
    Ok(match saddle_boundary_values(obj, xi)? {
        Some((lower, upper)) if lower < 0.0 && upper > 0.0 => PlateauVerdict::PlateauPresent,
        _ => PlateauVerdict::Absent,
    })
}

/// A point of a flow in performance space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub j: Vec<f64>,
    pub t: f64,
}

impl FlowState {
    pub fn new(j: Vec<f64>) -> Result<Self> {
        for (k, &v) in j.iter().enumerate() {
            check_unit(&format!("J{}", k + 1), v)?;
        }
        Ok(Self { j, t: 0.0 })
    }

    pub fn pair(j1: f64, j2: f64) -> Result<Self> {
        Self::new(vec![j1, j2])
    }
}

#[derive(Debug, Clone)]
pub enum FlowSystem {
    Reinforce2x2,
    Supervised2x2,
    Factored(FactoredObjective),
}

impl FlowSystem {
    pub fn name(&self) -> &'static str {
        match self {
            FlowSystem::Reinforce2x2 => "reinforce_2x2",
            FlowSystem::Supervised2x2 => "supervised_2x2",
            FlowSystem::Factored(_) => "factored",
        }
    }

    fn dimension(&self) -> Option<usize> {
        match self {
            FlowSystem::Factored(obj) => Some(obj.components()),
            _ => Some(2),
        }
    }

    fn field(&self, j: &[f64], out: &mut [f64]) {
        match self {
            FlowSystem::Reinforce2x2 => {
                let (a, b) = jdot_2x2_unchecked(j[0], j[1]);
                out[0] = a;
                out[1] = b;
            }
            FlowSystem::Supervised2x2 => {
                let (a, b) = jdot_supervised_unchecked(j[0], j[1]);
                out[0] = a;
                out[1] = b;
            }
            FlowSystem::Factored(obj) => {
                out.copy_from_slice(&factored_jdot_unchecked(obj, j));
            }
        }
    }
}

/// Stop threshold on total performance for a `K`-component flow.
pub fn default_stop(k: usize) -> f64 {
    k as f64 - 0.1
}

const CLAMP_TOL: f64 = 1e-6;

/// Fixed-step RK4 integration in performance coordinates.
///
/// Stops after `max_steps` steps or once total performance reaches `K − 0.1`.
/// Excursions outside `[0, 1]` up to `1e−6` are clamped; larger ones abort.
pub fn flow_integrate(
    start: &FlowState,
    system: &FlowSystem,
    eta: f64,
    max_steps: usize,
) -> Result<Trajectory> {
    flow_integrate_until(start, system, eta, max_steps, default_stop(start.j.len()))
}

/// [`flow_integrate`] with an explicit stop threshold (`f64::INFINITY` disables it).
pub fn flow_integrate_until(
    start: &FlowState,
    system: &FlowSystem,
    eta: f64,
    max_steps: usize,
    stop_total: f64,
) -> Result<Trajectory> {
    if !(eta > 0.0 && eta <= 0.5) {
        return domain(format!("step size {eta} outside (0, 0.5]"));
    }
    let k = start.j.len();
    if system.dimension() != Some(k) {
        return Err(Error::Shape(format!(
            "start has {k} components, {} system expects {:?}",
            system.name(),
            system.dimension()
        )));
    }
    for (i, &v) in start.j.iter().enumerate() {
        check_unit(&format!("J{}", i + 1), v)?;
    }

    let mut traj = Trajectory::new(
        eta,
        TrajectorySource::Flow {
            system: system.name().to_string(),
            start: start.j.clone(),
        },
    );
    let mut x = start.j.clone();
    let mut k1 = vec![0.0; k];
    let rate = |x: &[f64], buf: &mut [f64]| {
        system.field(x, buf);
        buf.iter().sum::<f64>()
    };
    let r = rate(&x, &mut k1);
    traj.records.push(Record::new(0, x.clone()).with_rate(r));

    let mut k2 = vec![0.0; k];
    let mut k3 = vec![0.0; k];
    let mut k4 = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    for step in 1..=max_steps {
        if x.iter().sum::<f64>() >= stop_total {
            break;
        }
        system.field(&x, &mut k1);
        for i in 0..k {
            tmp[i] = x[i] + 0.5 * eta * k1[i];
        }
        system.field(&tmp, &mut k2);
        for i in 0..k {
            tmp[i] = x[i] + 0.5 * eta * k2[i];
        }
        system.field(&tmp, &mut k3);
        for i in 0..k {
            tmp[i] = x[i] + eta * k3[i];
        }
        system.field(&tmp, &mut k4);
        for i in 0..k {
            let next = x[i] + eta / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            let excursion = (-next).max(next - 1.0);
            if excursion > CLAMP_TOL || !next.is_finite() {
                return Err(Error::IntegrationInstability {
                    step,
                    excursion: if next.is_finite() {
                        excursion
                    } else {
                        f64::INFINITY
                    },
                });
            }
            x[i] = next.clamp(0.0, 1.0);
        }
        let r = rate(&x, &mut k1);
        traj.records
            .push(Record::new(step as u64, x.clone()).with_rate(r));
    }
    Ok(traj)
}

/// Two-layer linear network trained on full-batch squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepLinearState {
    /// `hidden × input`
    pub w1: DMatrix<f64>,
    /// `output × hidden`
    pub w2: DMatrix<f64>,
    /// Input-output correlation, `output × input`.
    pub sxy: DMatrix<f64>,
    /// Input correlation, `input × input`.
    pub sxx: DMatrix<f64>,
}

impl DeepLinearState {
    pub fn new(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        sxy: DMatrix<f64>,
        sxx: DMatrix<f64>,
    ) -> Result<Self> {
        let (h, i) = w1.shape();
        let (o, h2) = w2.shape();
        if h != h2 || sxy.shape() != (o, i) || sxx.shape() != (i, i) {
            return Err(Error::Shape(format!(
                "W1 {:?}, W2 {:?}, Sxy {:?}, Sxx {:?}",
                w1.shape(),
                w2.shape(),
                sxy.shape(),
                sxx.shape()
            )));
        }
        if (&sxx - sxx.transpose()).amax() > 1e-12 {
            return domain("input correlation must be symmetric");
        }
        if sxx.clone().symmetric_eigenvalues().min() < -1e-12 {
            return domain("input correlation must be positive semidefinite");
        }
        Ok(Self { w1, w2, sxy, sxx })
    }

    pub fn residual(&self) -> DMatrix<f64> {
        &self.sxy - &self.w2 * &self.w1 * &self.sxx
    }

    pub fn loss(&self) -> f64 {
        self.residual().norm_squared()
    }

    fn whitened(&self) -> bool {
        let n = self.sxx.nrows();
        (&self.sxx - DMatrix::<f64>::identity(n, n)).amax() <= 1e-12
    }

    /// Fraction of each singular mode of `Σxy` captured by `W₂W₁`:
    /// `uᵢᵀ W₂W₁ vᵢ / sᵢ`, ordered by decreasing singular value.
    pub fn mode_strengths(&self) -> Result<Vec<f64>> {
        if !self.whitened() {
            return domain("mode strengths need an identity input correlation");
        }
        Ok(mode_strengths_of(&self.sxy, &(&self.w2 * &self.w1)))
    }
}

fn mode_strengths_of(sxy: &DMatrix<f64>, product: &DMatrix<f64>) -> Vec<f64> {
    let svd = sxy.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut modes: Vec<(f64, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, &s)| {
            let a = (u.column(i).transpose() * product * vt.row(i).transpose())[(0, 0)];
            (s, a / s)
        })
        .collect();
    modes.sort_by(|a, b| b.0.total_cmp(&a.0));
    modes.into_iter().map(|(_, strength)| strength).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepLinearTrajectory {
    /// `‖Σxy − W₂W₁Σxx‖²_F` before each step, plus the final value.
    pub loss: Vec<f64>,
    /// Per-step mode strengths; only recorded when `Σxx = I`.
    pub modes: Option<Vec<Vec<f64>>>,
    pub final_state: DeepLinearState,
}

/// Euler integration of `Ẇ₁ = W₂ᵀR`, `Ẇ₂ = R W₁ᵀ` with `R = Σxy − W₂W₁Σxx`.
pub fn deep_linear_flow(
    state: &DeepLinearState,
    eta: f64,
    steps: usize,
) -> Result<DeepLinearTrajectory> {
    if !(eta > 0.0 && eta.is_finite()) {
        return domain(format!("learning rate {eta} must be positive"));
    }
    let mut s = state.clone();
    let track_modes = s.whitened();
    let mut loss = Vec::with_capacity(steps + 1);
    let mut modes = track_modes.then(|| Vec::with_capacity(steps + 1));
    for step in 0..=steps {
        let r = s.residual();
        let l = r.norm_squared();
        if !(l <= 1e6) {
            return Err(Error::Divergence { step, norm: l });
        }
        loss.push(l);
        if let Some(m) = modes.as_mut() {
            m.push(mode_strengths_of(&s.sxy, &(&s.w2 * &s.w1)));
        }
        if step == steps {
            break;
        }
        let d1 = s.w2.transpose() * &r * eta;
        let d2 = &r * s.w1.transpose() * eta;
        s.w1 += d1;
        s.w2 += d2;
    }
    Ok(DeepLinearTrajectory {
        loss,
        modes,
        final_state: s,
    })
}
