//! The deterministic `(K×n)` contextual bandit.
//!
//! Context `k` is rewarded only for arm `k`, so the per-context performance is
//! `J_k = π(k | s_k)` and the total is `J = Σ_k J_k`. Logits are linear in a
//! one-hot context encoding, `ℓ = W s + b`, where the bias `b` is the only
//! parameter shared across contexts. Contexts and arms are indexed from zero.
//!
//! Gradients are returned over a flattened parameter vector: the `n×K` weight
//! matrix in column-major order (one column per context) followed by the bias
//! block (`n×1` for shared and tabular, `n×K` for separate biases).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanditSpec {
    contexts: usize,
    arms: usize,
}

impl BanditSpec {
    /// Arms beyond the first `contexts` are never rewarded.
    pub fn new(contexts: usize, arms: usize) -> Result<Self> {
        if contexts == 0 {
            return domain("a bandit needs at least one context");
        }
        if arms < contexts {
            return domain(format!("need n >= K arms, got n={arms}, K={contexts}"));
        }
        Ok(Self { contexts, arms })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn arms(&self) -> usize {
        self.arms
    }
}

/// How the bias is shared between contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// One action bias shared by every context (the interfering case).
    Shared,
    /// No bias at all; contexts touch disjoint weights.
    Tabular,
    /// One bias copy per context, so no gradient crosses between contexts.
    Separate,
}

/// Trainable weights of the linear-softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    spec: BanditSpec,
    repr: Representation,
    weights: DMatrix<f64>,
    bias: DMatrix<f64>,
}

impl Params {
    pub fn zeros(spec: BanditSpec, repr: Representation) -> Self {
        let n = spec.arms;
        let bias_cols = match repr {
            Representation::Separate => spec.contexts,
            _ => 1,
        };
        Self {
            spec,
            repr,
            weights: DMatrix::zeros(n, spec.contexts),
            bias: DMatrix::zeros(n, bias_cols),
        }
    }

    /// `weights` is `n×K`; `bias` has length `n` for shared/tabular and shape `n×K` for separate.
    pub fn from_parts(
        spec: BanditSpec,
        repr: Representation,
        weights: DMatrix<f64>,
        bias: DMatrix<f64>,
    ) -> Result<Self> {
        let template = Self::zeros(spec, repr);
        if weights.shape() != template.weights.shape() {
            return Err(Error::Shape(format!(
                "weights {:?}, expected {:?}",
                weights.shape(),
                template.weights.shape()
            )));
        }
        if bias.shape() != template.bias.shape() {
            return Err(Error::Shape(format!(
                "bias {:?}, expected {:?}",
                bias.shape(),
                template.bias.shape()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return domain("parameters must be finite");
        }
        if repr == Representation::Tabular && bias.iter().any(|&v| v != 0.0) {
            return domain("tabular parameters carry no bias");
        }
        Ok(Self {
            spec,
            repr,
            weights,
            bias,
        })
    }

    /// Rebuilds parameters from a flattened vector laid out as described in the module docs.
    pub fn from_flat(spec: BanditSpec, repr: Representation, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec, repr);
        if flat.len() != p.dim() {
            return Err(Error::Shape(format!(
                "flat vector of length {}, expected {}",
                flat.len(),
                p.dim()
            )));
        }
        let nw = p.weights.len();
        p.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        p.bias.as_mut_slice().copy_from_slice(&flat[nw..]);
        Self::from_parts(spec, repr, p.weights, p.bias)
    }

    pub fn spec(&self) -> BanditSpec {
        self.spec
    }

    pub fn repr(&self) -> Representation {
        self.repr
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.weights
    }

    pub fn bias(&self) -> &DMatrix<f64> {
        &self.bias
    }

    /// Length of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.weights.iter().chain(self.bias.iter()).copied(),
        )
    }

    pub fn norm(&self) -> f64 {
        (self.weights.norm_squared() + self.bias.norm_squared()).sqrt()
    }

    /// `θ ← θ + delta`. The bias block of a tabular policy stays at zero.
    pub fn apply(&mut self, delta: &DVector<f64>) {
        debug_assert_eq!(delta.len(), self.dim());
        let nw = self.weights.len();
        for (w, d) in self.weights.iter_mut().zip(delta.iter()) {
            *w += d;
        }
        if self.repr != Representation::Tabular {
            for (b, d) in self.bias.iter_mut().zip(delta.iter().skip(nw)) {
                *b += d;
            }
        }
    }

    fn check_context(&self, context: usize) -> Result<()> {
        if context >= self.spec.contexts {
            return domain(format!(
                "context {context} out of range for K={}",
                self.spec.contexts
            ));
        }
        Ok(())
    }

    fn bias_column(&self, context: usize) -> Option<usize> {
        match self.repr {
            Representation::Shared => Some(0),
            Representation::Tabular => None,
            Representation::Separate => Some(context),
        }
    }

    fn logits(&self, context: usize) -> DVector<f64> {
        let mut l = self.weights.column(context).into_owned();
        if let Some(c) = self.bias_column(context) {
            l += self.bias.column(c);
        }
        l
    }

    /// Adds a logit-space vector for `context` into a flattened gradient.
    fn scatter(&self, context: usize, dlogits: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.spec.arms;
        let w0 = context * n;
        for a in 0..n {
            out[w0 + a] += dlogits[a];
        }
        if let Some(c) = self.bias_column(context) {
            let b0 = self.weights.len() + c * n;
            for a in 0..n {
                out[b0 + a] += dlogits[a];
            }
        }
    }
}

/// Per-component performances `J_k ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfPoint(Vec<f64>);

impl PerfPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return domain("a performance point needs at least one component");
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return domain(format!("performance component {v} outside [0, 1]"));
        }
        Ok(Self(values))
    }

    pub fn pair(j1: f64, j2: f64) -> Result<Self> {
        Self::new(vec![j1, j2])
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PerfPoint {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Numerically stable softmax (max-logit subtraction).
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut p = logits.map(|l| (l - max).exp());
    let z = p.sum();
    p /= z;
    p
}

pub fn policy_probs(params: &Params, context: usize) -> Result<DVector<f64>> {
    params.check_context(context)?;
    Ok(softmax(&params.logits(context)))
}

pub fn component_performance(params: &Params) -> PerfPoint {
    let values = (0..params.spec.contexts)
        .map(|k| softmax(&params.logits(k))[k])
        .collect();
    PerfPoint(values)
}

/// `∇_θ J_k` over the flattened parameter vector.
pub fn component_gradient(params: &Params, context: usize) -> Result<DVector<f64>> {
    params.check_context(context)?;
    let mut g = DVector::zeros(params.dim());
    let pi = softmax(&params.logits(context));
    // ∂π_k/∂ℓ = π_k (e_k − π)
    let mut dl = -pi.clone() * pi[context];
    dl[context] += pi[context];
    params.scatter(context, &dl, &mut g);
    Ok(g)
}

/// Expected on-policy REINFORCE direction summed over contexts: `Σ_k ∇_θ J_k`.
pub fn expected_reinforce_gradient(params: &Params) -> DVector<f64> {
    let mut g = DVector::zeros(params.dim());
    for k in 0..params.spec.contexts {
        let pi = softmax(&params.logits(k));
        let mut dl = -pi.clone() * pi[k];
        dl[k] += pi[k];
        params.scatter(k, &dl, &mut g);
    }
    g
}

/// Gradient of the cross-entropy objective `Σ_k log J_k`, i.e. `Σ_k ∇J_k / J_k`.
pub fn supervised_gradient(params: &Params) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(params.dim());
    for k in 0..params.spec.contexts {
        let pi = softmax(&params.logits(k));
        if pi[k] <= 0.0 {
            return Err(Error::Singularity(format!("J_{k} = 0")));
        }
        let mut dl = -pi;
        dl[k] += 1.0;
        params.scatter(k, &dl, &mut g);
    }
    Ok(g)
}

/// Mean of [`sample_update`] over contexts and actions: the direction a
/// stochastic step follows on average.
pub fn expected_update(params: &Params, mode: SampleMode) -> Result<DVector<f64>> {
    mode.validate()?;
    let n = params.spec.arms as f64;
    let mut g = DVector::zeros(params.dim());
    for k in 0..params.spec.contexts {
        let pi = softmax(&params.logits(k));
        // Probability that the sample for context k is credited to arm k.
        let weight = match mode {
            SampleMode::OnPolicy => pi[k],
            SampleMode::EpsilonMix(beta) => (1.0 - beta) * pi[k] + beta / n,
            SampleMode::Supervised => 1.0,
        };
        let mut dl = -pi * weight;
        dl[k] += weight;
        params.scatter(k, &dl, &mut g);
    }
    Ok(g / params.spec.contexts as f64)
}

/// How training samples are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Actions drawn from the current policy.
    OnPolicy,
    /// Actions drawn from `(1−β)π + β·uniform`, with no importance correction.
    EpsilonMix(f64),
    /// Cross-entropy towards the rewarded arm, independent of the sampled action.
    Supervised,
}

impl SampleMode {
    fn validate(self) -> Result<()> {
        match self {
            SampleMode::EpsilonMix(beta) if !(0.0..=1.0).contains(&beta) => {
                domain(format!("mixing weight {beta} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub grad: DVector<f64>,
    pub context: usize,
    pub action: usize,
    pub reward: f64,
}

/// One stochastic update with the context drawn uniformly.
pub fn sample_update<R: Rng + ?Sized>(
    params: &Params,
    rng: &mut R,
    mode: SampleMode,
) -> Result<GradSample> {
    mode.validate()?;
    let context = rng.random_range(0..params.spec.contexts);
    sample_update_in_context(params, context, rng, mode)
}

/// One stochastic update for a given context.
pub fn sample_update_in_context<R: Rng + ?Sized>(
    params: &Params,
    context: usize,
    rng: &mut R,
    mode: SampleMode,
) -> Result<GradSample> {
    mode.validate()?;
    params.check_context(context)?;
    let pi = softmax(&params.logits(context));
    let n = params.spec.arms;
    let u: f64 = rng.random();
    let action = match mode {
        SampleMode::EpsilonMix(beta) if u < beta => rng.random_range(0..n),
        _ => {
            // Reuse the draw for the policy: rescale onto [0, 1) when mixing.
            let v = match mode {
                SampleMode::EpsilonMix(beta) => (u - beta) / (1.0 - beta),
                _ => u,
            };
            sample_categorical(&pi, v)
        }
    };
    let reward = if action == context { 1.0 } else { 0.0 };
    let mut grad = DVector::zeros(params.dim());
    let target = match mode {
        SampleMode::Supervised => Some(context),
        _ if reward > 0.0 => Some(action),
        _ => None,
    };
    if let Some(a) = target {
        // ∇_ℓ log π(a) = e_a − π
        let mut dl = -pi;
        dl[a] += 1.0;
        params.scatter(context, &dl, &mut grad);
    }
    Ok(GradSample {
        grad,
        context,
        action,
        reward,
    })
}

fn sample_categorical(p: &DVector<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Cosine similarity between two gradients, clamped to `[−1, 1]`.
pub fn interference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "gradients of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::UndefinedInterference);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Learning-signal coupling `f(u)` in `∇J_k = f(J_k) v_k`.
///
/// For the mixed behaviour policy the expected update in a context is the
/// probability of sampling the rewarded arm, `(1−β)u + β/n`, times the
/// `(1−u)` scale of `∇ log π`.
pub fn coupling_profile(mode: SampleMode, arms: usize, u: f64) -> f64 {
    match mode {
        SampleMode::OnPolicy => u * (1.0 - u),
        SampleMode::Supervised => 1.0 - u,
        SampleMode::EpsilonMix(beta) => ((1.0 - beta) * u + beta / arms as f64) * (1.0 - u),
    }
}

/// `f′(u)` for [`coupling_profile`].
pub fn coupling_derivative(mode: SampleMode, arms: usize, u: f64) -> f64 {
    match mode {
        SampleMode::OnPolicy => 1.0 - 2.0 * u,
        SampleMode::Supervised => -1.0,
        SampleMode::EpsilonMix(beta) => {
            (1.0 - beta) * (1.0 - u) - ((1.0 - beta) * u + beta / arms as f64)
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The redundancy-free parameterisation of the `2×2` shared bandit:
/// `θ = (W₁₁−W₂₁, W₂₂−W₁₂, b₁−b₂)` with `J₁ = σ(θ₁+θ₃)`, `J₂ = σ(θ₂−θ₃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub theta: [f64; 3],
}

const DIR1: [f64; 3] = [1.0, 0.0, 1.0];
const DIR2: [f64; 3] = [0.0, 1.0, -1.0];

impl ReducedParams {
    pub fn new(theta: [f64; 3]) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return domain("reduced parameters must be finite");
        }
        Ok(Self { theta })
    }

    /// Inverse map from `(J₁, J₂)` and the free slack `θ₃`.
    pub fn from_perf(j1: f64, j2: f64, slack: f64) -> Result<Self> {
        for j in [j1, j2] {
            if !(j > 0.0 && j < 1.0) {
                return domain(format!("performance {j} must lie strictly inside (0, 1)"));
            }
        }
        Self::new([logit(j1) - slack, logit(j2) + slack, slack])
    }

    pub fn perf(&self) -> (f64, f64) {
        let [t1, t2, t3] = self.theta;
        (sigmoid(t1 + t3), sigmoid(t2 - t3))
    }

    /// `(∇J₁, ∇J₂)`.
    pub fn component_gradients(&self) -> ([f64; 3], [f64; 3]) {
        let (j1, j2) = self.perf();
        (
            DIR1.map(|d| j1 * (1.0 - j1) * d),
            DIR2.map(|d| j2 * (1.0 - j2) * d),
        )
    }

    pub fn reinforce_gradient(&self) -> [f64; 3] {
        let (g1, g2) = self.component_gradients();
        [g1[0] + g2[0], g1[1] + g2[1], g1[2] + g2[2]]
    }

    /// `∇(log J₁ + log J₂) = (1−J₁)(1,0,1) + (1−J₂)(0,1,−1)`.
    pub fn supervised_gradient(&self) -> [f64; 3] {
        let (j1, j2) = self.perf();
        let mut g = [0.0; 3];
        for i in 0..3 {
            g[i] = (1.0 - j1) * DIR1[i] + (1.0 - j2) * DIR2[i];
        }
        g
    }

    /// Full shared-bias parameters realising this point (other entries zero).
    pub fn to_params(&self) -> Params {
        let spec = BanditSpec {
            contexts: 2,
            arms: 2,
        };
        let mut p = Params::zeros(spec, Representation::Shared);
        let [t1, t2, t3] = self.theta;
        p.weights[(0, 0)] = t1;
        p.weights[(1, 1)] = t2;
        p.bias[(0, 0)] = t3;
        p
    }
}
