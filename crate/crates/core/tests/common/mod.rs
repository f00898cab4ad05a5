#![allow(dead_code)]

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DVector;
use rand::Rng;
use raylab_core::bandit::component_performance;
use raylab_core::{BanditSpec, Params, Representation};

/// Central difference of `f` at `x` for every coordinate.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

/// Parameters from a flat vector; the tabular bias slots are held at zero.
pub fn params_from(spec: BanditSpec, repr: Representation, x: &[f64]) -> Params {
    let mut flat = x.to_vec();
    if repr == Representation::Tabular {
        let nw = spec.contexts() * spec.arms();
        flat[nw..].iter_mut().for_each(|v| *v = 0.0);
    }
    Params::from_flat(spec, repr, &flat).unwrap()
}

pub fn random_params<R: Rng>(
    spec: BanditSpec,
    repr: Representation,
    scale: f64,
    rng: &mut R,
) -> Params {
    let dim = Params::zeros(spec, repr).dim();
    let flat: Vec<f64> = (0..dim)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    params_from(spec, repr, &flat)
}

pub fn total_performance(spec: BanditSpec, repr: Representation) -> impl Fn(&[f64]) -> f64 {
    move |x| component_performance(&params_from(spec, repr, x)).total()
}

pub fn log_likelihood(spec: BanditSpec, repr: Representation) -> impl Fn(&[f64]) -> f64 {
    move |x| {
        component_performance(&params_from(spec, repr, x))
            .as_slice()
            .iter()
            .map(|j| j.ln())
            .sum()
    }
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Forward-mode dual number `a + b·ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        Dual::new(self.re * c, self.eps * c)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

/// The 2×2 bandit field written out independently of the library.
pub fn field<T>(j1: T, j2: T) -> (T, T)
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Mul<f64, Output = T>,
{
    let f1 = j1 - j1 * j1;
    let f2 = j2 - j2 * j2;
    (f1 * f1 * 2.0 - f1 * f2, f2 * f2 * 2.0 - f1 * f2)
}

/// `J̈ = ∇(J̇₁ + J̇₂) · J̇` by forward-mode differentiation along the field.
pub fn jddot_autodiff(j1: f64, j2: f64) -> f64 {
    let (a, b) = field(j1, j2);
    let (d1, d2) = field(Dual::new(j1, a), Dual::new(j2, b));
    (d1 + d2).eps
}
