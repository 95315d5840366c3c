//! Market primitives: parameters, the market price of risk, strategies and
//! the Merton baseline.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Raw JSON form of [`MarketParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub r: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Constant-coefficient market with `n` stocks driven by `d >= n` Brownian motions.
///
/// σσᵀ, its Cholesky factor, (σσᵀ)⁻¹μ and θ are computed once at construction.
#[derive(Debug, Clone)]
pub struct MarketParams {
    spec: MarketSpec,
    sigma: DMatrix<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    merton_dir: Vec<f64>,
    theta: f64,
}

impl MarketParams {
    pub fn new(r: f64, mu: Vec<f64>, sigma: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        Self::from_spec(MarketSpec { r, mu, sigma, horizon })
    }

    pub fn from_spec(spec: MarketSpec) -> Result<Self> {
        let n = spec.mu.len();
        if n == 0 {
            return Err(invalid("mu must have at least one entry"));
        }
        if spec.sigma.len() != n {
            return Err(invalid(format!("sigma has {} rows, expected {n}", spec.sigma.len())));
        }
        let d = spec.sigma[0].len();
        if d < n || spec.sigma.iter().any(|row| row.len() != d) {
            return Err(invalid("sigma must be a rectangular n x d matrix with d >= n"));
        }
        if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
            return Err(invalid("T must be positive and finite"));
        }
        let finite = spec.r.is_finite()
            && spec.mu.iter().all(|v| v.is_finite())
            && spec.sigma.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("market parameters must be finite"));
        }
        let sigma = DMatrix::from_fn(n, d, |i, j| spec.sigma[i][j]);
        let cov = &sigma * sigma.transpose();
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
        let mu = DVector::from_column_slice(&spec.mu);
        let dir = chol.solve(&mu);
        let theta = mu.dot(&dir).max(0.0).sqrt();
        Ok(Self { merton_dir: dir.iter().copied().collect(), spec, sigma, cov, chol, theta })
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }
    pub fn r(&self) -> f64 {
        self.spec.r
    }
    pub fn mu(&self) -> &[f64] {
        &self.spec.mu
    }
    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }
    /// Number of stocks.
    pub fn n(&self) -> usize {
        self.spec.mu.len()
    }
    /// Number of Brownian motions.
    pub fn d(&self) -> usize {
        self.sigma.ncols()
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    /// (σσᵀ)⁻¹μ.
    pub fn merton_direction(&self) -> &[f64] {
        &self.merton_dir
    }
    pub fn mu_is_zero(&self) -> bool {
        self.spec.mu.iter().all(|&v| v == 0.0)
    }
    pub fn mu_norm_inf(&self) -> f64 {
        self.spec.mu.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Solves (σσᵀ) x = b with the stored factor.
    pub fn solve_cov(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(b)).iter().copied().collect()
    }

    /// σσᵀ π.
    pub fn cov_times(&self, pi: &[f64]) -> Vec<f64> {
        (&self.cov * DVector::from_column_slice(pi)).iter().copied().collect()
    }

    /// |πᵀσ|² = πᵀσσᵀπ.
    pub fn quad(&self, pi: &[f64]) -> f64 {
        let v = DVector::from_column_slice(pi);
        v.dot(&(&self.cov * &v))
    }

    /// aᵀσσᵀb.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        DVector::from_column_slice(a).dot(&(&self.cov * DVector::from_column_slice(b)))
    }

    /// πᵀμ.
    pub fn drift(&self, pi: &[f64]) -> f64 {
        pi.iter().zip(&self.spec.mu).map(|(a, b)| a * b).sum()
    }
}

/// Market price of risk √(μᵀ(σσᵀ)⁻¹μ).
pub fn theta(m: &MarketParams) -> f64 {
    m.theta()
}

/// Deterministic strategy on `[0, T)`.
///
/// `Grid` values are samples at increasing times. Point evaluation is
/// piecewise constant and right-continuous; integrals use the trapezoid rule
/// on the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Constant { value: Vec<f64> },
    Grid { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl Strategy {
    pub fn constant(value: Vec<f64>) -> Self {
        Strategy::Constant { value }
    }

    pub fn zero(n: usize) -> Self {
        Strategy::Constant { value: vec![0.0; n] }
    }

    pub fn grid(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(invalid("strategy grid needs matching, non-empty times and values"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("strategy grid times must be strictly increasing"));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
            return Err(invalid("strategy values must be finite vectors of equal length"));
        }
        Ok(Strategy::Grid { times, values })
    }

    pub fn dim(&self) -> usize {
        match self {
            Strategy::Constant { value } => value.len(),
            Strategy::Grid { values, .. } => values[0].len(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Strategy::Constant { value } => value.iter().all(|&v| v == 0.0),
            Strategy::Grid { values, .. } => values.iter().flatten().all(|&v| v == 0.0),
        }
    }

    /// π(t), right-continuous.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        match self {
            Strategy::Constant { value } => value.clone(),
            Strategy::Grid { times, values } => values[right_index(times, t)].clone(),
        }
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Strategy::Constant { value } => {
                Strategy::Constant { value: value.iter().map(|v| v * c).collect() }
            }
            Strategy::Grid { times, values } => Strategy::Grid {
                times: times.clone(),
                values: values.iter().map(|v| v.iter().map(|x| x * c).collect()).collect(),
            },
        }
    }

    /// ∫ₐᵇ f(π(s)) ds.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Strategy::Constant { value } => f(value) * (b - a),
            Strategy::Grid { times, values } => {
                trapezoid_between(times, |k| f(&values[k]), a, b)
            }
        }
    }

    /// Π(t) = ∫ₜᵀ|πᵀσ|² ds.
    pub fn exposure(&self, m: &MarketParams, t: f64) -> f64 {
        self.integrate(t, m.horizon(), |p| m.quad(p))
    }

    /// ∫ₜᵀ πᵀμ ds.
    pub fn drift_integral(&self, m: &MarketParams, t: f64) -> f64 {
        self.integrate(t, m.horizon(), |p| m.drift(p))
    }
}

/// Index of the last grid time `<= t`, clamped into range.
fn right_index(times: &[f64], t: f64) -> usize {
    let snap = 1e-12 * (times[times.len() - 1] - times[0]).abs();
    match times.partition_point(|&s| s <= t + snap) {
        0 => 0,
        k => k - 1,
    }
}

/// Linear interpolation of samples; constant extrapolation outside the grid.
fn interp(times: &[f64], v: &impl Fn(usize) -> f64, t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return v(0);
    }
    if t >= times[n - 1] {
        return v(n - 1);
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    let (a, b) = (v(k), v(k + 1));
    a + w * (b - a)
}

/// Trapezoid rule for samples `v(k)` at `times`, restricted to [a, b].
fn trapezoid_between(times: &[f64], v: impl Fn(usize) -> f64, a: f64, b: f64) -> f64 {
    let n = times.len();
    // Constant extension beyond the sample range.
    let mut total = 0.0;
    if a < times[0] {
        total += v(0) * (b.min(times[0]) - a);
    }
    if b > times[n - 1] {
        total += v(n - 1) * (b - a.max(times[n - 1]));
    }
    let lo = a.max(times[0]);
    let hi = b.min(times[n - 1]);
    if hi <= lo {
        return total;
    }
    let mut prev_t = lo;
    let mut prev_v = interp(times, &v, lo);
    let start = times.partition_point(|&s| s <= lo);
    for (k, &tk) in times.iter().enumerate().skip(start) {
        if tk >= hi {
            break;
        }
        let vk = v(k);
        total += 0.5 * (prev_v + vk) * (tk - prev_t);
        prev_t = tk;
        prev_v = vk;
    }
    total + 0.5 * (prev_v + interp(times, &v, hi)) * (hi - prev_t)
}

/// Classical Merton strategy (σσᵀ)⁻¹μ/(1−γ).
pub fn merton_strategy(m: &MarketParams, gamma: f64) -> Result<Strategy> {
    if gamma == 1.0 {
        return Err(invalid("gamma = 1 makes the Merton scaling 1/(1 - gamma) undefined"));
    }
    let s = 1.0 / (1.0 - gamma);
    Ok(Strategy::constant(m.merton_direction().iter().map(|v| v * s).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_market() -> MarketParams {
        MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap()
    }

    #[test]
    fn scalar_theta_and_merton() {
        let m = paper_market();
        assert!((theta(&m) - 0.25).abs() < 1e-15);
        let pi = merton_strategy(&m, -2.0).unwrap().value_at(0.0);
        assert!((pi[0] - 0.05 / 0.04 / 3.0).abs() < 1e-15);
        let log = merton_strategy(&m, 0.0).unwrap().value_at(3.0);
        assert!((log[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn gamma_one_rejected() {
        assert!(merton_strategy(&paper_market(), 1.0).is_err());
    }

    #[test]
    fn zero_mu_gives_zero_theta() {
        let m = MarketParams::new(0.0, vec![0.0, 0.0], vec![vec![0.2, 0.0], vec![0.1, 0.3]], 1.0).unwrap();
        assert_eq!(theta(&m), 0.0);
        assert!(merton_strategy(&m, -1.0).unwrap().is_zero());
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(MarketParams::new(0.0, vec![0.1], vec![vec![0.0]], 1.0).is_err());
        assert!(MarketParams::new(0.0, vec![0.1, 0.1], vec![vec![0.2, 0.0]], 1.0).is_err());
        assert!(MarketParams::new(0.0, vec![0.1], vec![vec![0.2]], 0.0).is_err());
        // rank-deficient: two stocks, identical loadings
        let r = MarketParams::new(0.0, vec![0.1, 0.1], vec![vec![0.2, 0.1], vec![0.2, 0.1]], 1.0);
        assert_eq!(r.unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn grid_strategy_is_right_continuous() {
        let s = Strategy::grid(vec![0.0, 1.0, 2.0], vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(s.value_at(0.999)[0], 1.0);
        assert_eq!(s.value_at(1.0)[0], 2.0);
        assert_eq!(s.value_at(5.0)[0], 3.0);
    }

    #[test]
    fn grid_integral_matches_trapezoid() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let values: Vec<Vec<f64>> = times.iter().map(|&t| vec![t]).collect();
        let s = Strategy::grid(times, values).unwrap();
        // linear integrand: trapezoid exact, including partial end intervals
        let v = s.integrate(0.05, 0.73, |p| p[0]);
        assert!((v - 0.5 * (0.73f64.powi(2) - 0.05f64.powi(2))).abs() < 1e-15);
    }
}
