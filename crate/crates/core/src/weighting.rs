//! Probability weighting functions `w(t, p)`.
//!
//! All weightings are strictly increasing bijections of [0, 1] at each `t`.
//! Quadrature integrates in the standard-normal coordinate `z = Φ⁻¹(p)`, so
//! each weighting exposes the distorted density `d/dz w(t, Φ(z))`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::normal;

/// Construction family of a weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingKind {
    Identity,
    PhiFamily,
    UserSupplied,
}

/// Shape of `p ↦ w(t, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Identity,
    Concave,
    Convex,
    InverseS,
    S,
    Other,
}

pub trait Weighting: Send + Sync + fmt::Debug {
    /// w(t, p).
    fn eval(&self, t: f64, p: f64) -> f64;

    /// ∂w/∂p (t, p) on (0, 1).
    fn deriv(&self, t: f64, p: f64) -> f64;

    /// d/dz w(t, Φ(z)) = w′(t, Φ(z)) φ(z).
    fn distorted_density(&self, t: f64, z: f64) -> f64 {
        let (phi, p) = (normal::pdf(z), normal::cdf(z));
        if phi == 0.0 || p <= 0.0 || p >= 1.0 {
            return 0.0;
        }
        let v = self.deriv(t, p) * phi;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    fn kind(&self) -> WeightingKind;

    fn is_time_invariant(&self) -> bool;

    /// Horizon of a time-dependent weighting.
    fn horizon(&self) -> Option<f64> {
        None
    }

    fn phi_params(&self) -> Option<&PhiFamily> {
        None
    }
}

/// w(t, p) = p.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Identity;

impl Weighting for Identity {
    fn eval(&self, _t: f64, p: f64) -> f64 {
        p
    }
    fn deriv(&self, _t: f64, _p: f64) -> f64 {
        1.0
    }
    fn distorted_density(&self, _t: f64, z: f64) -> f64 {
        normal::pdf(z)
    }
    fn kind(&self) -> WeightingKind {
        WeightingKind::Identity
    }
    fn is_time_invariant(&self) -> bool {
        true
    }
}

/// Location shift ν(t) of the Φ-family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiShift {
    Constant { nu: f64 },
    /// ν(t) = −β√(T−t), i.e. w(t,p) = Φ((Φ⁻¹(p) − β√(T−t))/λ).
    SqrtDecay { beta: f64, horizon: f64 },
}

/// w(t, p) = Φ((Φ⁻¹(p) + ν(t))/λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiFamily {
    pub lambda: f64,
    pub shift: PhiShift,
}

impl PhiFamily {
    pub fn constant(lambda: f64, nu: f64) -> Result<Self> {
        Self::new(lambda, PhiShift::Constant { nu })
    }

    pub fn sqrt_decay(lambda: f64, beta: f64, horizon: f64) -> Result<Self> {
        Self::new(lambda, PhiShift::SqrtDecay { beta, horizon })
    }

    pub fn new(lambda: f64, shift: PhiShift) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda must be positive and finite"));
        }
        match shift {
            PhiShift::Constant { nu } if !nu.is_finite() => Err(invalid("nu must be finite")),
            PhiShift::SqrtDecay { beta, horizon } if !beta.is_finite() || !(horizon > 0.0) => {
                Err(invalid("beta must be finite and the horizon positive"))
            }
            _ => Ok(Self { lambda, shift }),
        }
    }

    /// ν(t); `t` is clamped to the horizon.
    pub fn nu(&self, t: f64) -> f64 {
        match self.shift {
            PhiShift::Constant { nu } => nu,
            PhiShift::SqrtDecay { beta, horizon } => -beta * (horizon - t).max(0.0).sqrt(),
        }
    }

    /// ν′(t); infinite at the horizon for the square-root form.
    pub fn nu_dot(&self, t: f64) -> f64 {
        match self.shift {
            PhiShift::Constant { .. } => 0.0,
            PhiShift::SqrtDecay { beta, horizon } => 0.5 * beta / (horizon - t).sqrt(),
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self.shift {
            PhiShift::SqrtDecay { beta, .. } => Some(beta),
            PhiShift::Constant { .. } => None,
        }
    }

    /// Analytic shape rule.
    pub fn shape(&self, t: f64) -> Shape {
        let nu = self.nu(t);
        if self.lambda > 1.0 {
            Shape::InverseS
        } else if self.lambda < 1.0 {
            Shape::S
        } else if nu > 0.0 {
            Shape::Concave
        } else if nu < 0.0 {
            Shape::Convex
        } else {
            Shape::Identity
        }
    }

    /// Inflection in z-coordinates, z₀ = ν/(λ²−1), for λ ≠ 1.
    pub fn turning_point(&self, t: f64) -> Option<f64> {
        let l2 = self.lambda * self.lambda;
        (l2 != 1.0).then(|| self.nu(t) / (l2 - 1.0))
    }

    /// w′(Φ(z)) = φ((z+ν)/λ) / (λ φ(z)).
    pub fn deriv_at_quantile(&self, t: f64, z: f64) -> f64 {
        let u = (z + self.nu(t)) / self.lambda;
        (0.5 * (z * z - u * u)).exp() / self.lambda
    }
}

impl Weighting for PhiFamily {
    fn eval(&self, t: f64, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        normal::cdf((normal::quantile(p) + self.nu(t)) / self.lambda)
    }
    fn deriv(&self, t: f64, p: f64) -> f64 {
        self.deriv_at_quantile(t, normal::quantile(p))
    }
    fn distorted_density(&self, t: f64, z: f64) -> f64 {
        normal::pdf((z + self.nu(t)) / self.lambda) / self.lambda
    }
    fn kind(&self) -> WeightingKind {
        WeightingKind::PhiFamily
    }
    fn is_time_invariant(&self) -> bool {
        matches!(self.shift, PhiShift::Constant { .. })
    }
    fn horizon(&self) -> Option<f64> {
        match self.shift {
            PhiShift::SqrtDecay { horizon, .. } => Some(horizon),
            PhiShift::Constant { .. } => None,
        }
    }
    fn phi_params(&self) -> Option<&PhiFamily> {
        Some(self)
    }
}

type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Weighting from user closures `(t, p) ↦ w` and `(t, p) ↦ w′`.
#[derive(Clone)]
pub struct CustomWeighting {
    eval: ScalarFn,
    deriv: ScalarFn,
    time_invariant: bool,
    horizon: Option<f64>,
}

impl CustomWeighting {
    pub fn time_invariant(
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { eval: Arc::new(eval), deriv: Arc::new(deriv), time_invariant: true, horizon: None }
    }

    pub fn time_dependent(
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        horizon: f64,
    ) -> Self {
        Self { eval: Arc::new(eval), deriv: Arc::new(deriv), time_invariant: false, horizon: Some(horizon) }
    }
}

impl fmt::Debug for CustomWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomWeighting")
            .field("time_invariant", &self.time_invariant)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl Weighting for CustomWeighting {
    fn eval(&self, t: f64, p: f64) -> f64 {
        (self.eval)(t, p)
    }
    fn deriv(&self, t: f64, p: f64) -> f64 {
        (self.deriv)(t, p)
    }
    fn kind(&self) -> WeightingKind {
        WeightingKind::UserSupplied
    }
    fn is_time_invariant(&self) -> bool {
        self.time_invariant
    }
    fn horizon(&self) -> Option<f64> {
        self.horizon
    }
}

/// Dual weighting w̄(t, p) = 1 − w(t, 1 − p).
#[derive(Debug, Clone)]
pub struct Dual<W>(pub W);

impl<W: Weighting> Weighting for Dual<W> {
    fn eval(&self, t: f64, p: f64) -> f64 {
        1.0 - self.0.eval(t, 1.0 - p)
    }
    fn deriv(&self, t: f64, p: f64) -> f64 {
        self.0.deriv(t, 1.0 - p)
    }
    fn distorted_density(&self, t: f64, z: f64) -> f64 {
        self.0.distorted_density(t, -z)
    }
    fn kind(&self) -> WeightingKind {
        WeightingKind::UserSupplied
    }
    fn is_time_invariant(&self) -> bool {
        self.0.is_time_invariant()
    }
    fn horizon(&self) -> Option<f64> {
        self.0.horizon()
    }
}

/// Shape at time `t`: analytic for the Φ-family, otherwise the sign pattern
/// of the discrete slope of `w′` on 2001 uniform interior points.
pub fn classify_shape(w: &dyn Weighting, t: f64) -> Shape {
    if let Some(phi) = w.phi_params() {
        return phi.shape(t);
    }
    const N: usize = 2001;
    const MIN_MAG: f64 = 1e-10;
    let d: Vec<f64> = (1..=N).map(|i| w.deriv(t, i as f64 / (N + 1) as f64)).collect();
    let signs: Vec<i8> = d
        .windows(2)
        .filter_map(|s| {
            let diff = s[1] - s[0];
            if diff > MIN_MAG {
                Some(1)
            } else if diff < -MIN_MAG {
                Some(-1)
            } else {
                None
            }
        })
        .collect();
    let mut pattern: Vec<i8> = Vec::new();
    for s in signs {
        if pattern.last() != Some(&s) {
            pattern.push(s);
        }
    }
    match pattern.as_slice() {
        [] => Shape::Identity,
        [-1] => Shape::Concave,
        [1] => Shape::Convex,
        [-1, 1] => Shape::InverseS,
        [1, -1] => Shape::S,
        _ => Shape::Other,
    }
}

/// One failed check in [`Assumption1Report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assumption1Violation {
    DerivativeBound { p: f64, deriv: f64, bound: f64 },
    NotIncreasing { p: f64, deriv: f64 },
    Endpoint { p: f64, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub t: f64,
    pub c: f64,
    pub alpha: f64,
    pub w_at_0: f64,
    pub w_at_1: f64,
    pub violations: Vec<Assumption1Violation>,
}

impl Assumption1Report {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks w′(p) ≤ c[p^α + (1−p)^α], w′ > 0 and the endpoint values on `grid`.
/// Advisory only.
pub fn validate_assumption1(
    w: &dyn Weighting,
    t: f64,
    c: f64,
    alpha: f64,
    grid: &[f64],
) -> Result<Assumption1Report> {
    if !(-1.0 < alpha && alpha < 0.0) {
        return Err(invalid("alpha must lie in (-1, 0)"));
    }
    if grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(invalid("probability grid must lie inside (0, 1)"));
    }
    let mut violations = Vec::new();
    let w0 = w.eval(t, 0.0);
    let w1 = w.eval(t, 1.0);
    if w0.abs() > 1e-12 {
        violations.push(Assumption1Violation::Endpoint { p: 0.0, value: w0 });
    }
    if (w1 - 1.0).abs() > 1e-12 {
        violations.push(Assumption1Violation::Endpoint { p: 1.0, value: w1 });
    }
    for &p in grid {
        let d = w.deriv(t, p);
        let bound = c * (p.powf(alpha) + (1.0 - p).powf(alpha));
        if !(d > 0.0) {
            violations.push(Assumption1Violation::NotIncreasing { p, deriv: d });
        }
        if !(d <= bound) {
            violations.push(Assumption1Violation::DerivativeBound { p, deriv: d, bound });
        }
    }
    Ok(Assumption1Report { t, c, alpha, w_at_0: w0, w_at_1: w1, violations })
}
