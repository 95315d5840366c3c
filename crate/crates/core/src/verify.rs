//! Perturbation oracle: conditional law of terminal wealth under a
//! spike perturbation, the perturbed RDU f(ε; t, κ), the quadratic form
//! G(t, κ) and a pointwise strict-equilibrium check.

use serde::Serialize;

use crate::error::{domain, invalid, Result};
use crate::model::{MarketParams, Strategy};
use crate::normal;
use crate::ode::OdeSolution;
use crate::par::{self, Execution};
use crate::problem::Problem;

/// Constant perturbation κ on [t, t + ε).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    pub t: f64,
    pub epsilon: f64,
    pub kappa: Vec<f64>,
}

impl Perturbation {
    pub fn new(t: f64, epsilon: f64, kappa: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(t >= 0.0 && epsilon >= 0.0 && (t + epsilon < horizon || epsilon == 0.0 && t < horizon)) {
            return Err(invalid("perturbation needs 0 <= t, t + epsilon < T"));
        }
        if kappa.iter().any(|k| !k.is_finite()) {
            return Err(invalid("kappa must be finite"));
        }
        Ok(Self { t, epsilon, kappa })
    }
}

/// ln X(T) = ln x + r(T−t) + g − H/2 + √H ξ given the state at t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbedLaw {
    pub g: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

/// Drift and variance aggregates of the perturbed strategy.
pub fn perturbed_law(strategy: &Strategy, m: &MarketParams, pert: &Perturbation) -> PerturbedLaw {
    let base = PerturbedLaw { g: strategy.drift_integral(m, pert.t), h: strategy.exposure(m, pert.t) };
    perturb(base, strategy, m, pert)
}

/// Adds the κ-terms on [t, t + ε) to the unperturbed aggregates.
fn perturb(base: PerturbedLaw, strategy: &Strategy, m: &MarketParams, pert: &Perturbation) -> PerturbedLaw {
    let (t, eps, k) = (pert.t, pert.epsilon, &pert.kappa);
    if eps == 0.0 {
        return base;
    }
    let cross = strategy.integrate(t, t + eps, |p| 2.0 * m.bilinear(p, k));
    PerturbedLaw { g: base.g + m.drift(k) * eps, h: (base.h + cross + m.quad(k) * eps).max(0.0) }
}

/// Q(p) = x exp{r(T−t) + g − H/2 + √H Φ⁻¹(p)}.
pub fn conditional_quantile(x: f64, m: &MarketParams, strategy: &Strategy, pert: &Perturbation, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || !(x > 0.0) {
        return Err(invalid("conditional quantile needs p in (0,1) and x > 0"));
    }
    let law = perturbed_law(strategy, m, pert);
    let mean = m.r() * (m.horizon() - pert.t) + law.g - 0.5 * law.h;
    Ok(x * (mean + law.h.sqrt() * normal::quantile(p)).exp())
}

/// f(ε; t, κ), the RDU at t of the perturbed terminal wealth.
pub fn perturbed_rdu(p: &Problem, x: f64, strategy: &Strategy, pert: &Perturbation) -> Result<f64> {
    if !(x > 0.0) {
        return Err(invalid("wealth must be positive"));
    }
    rdu_of_law(p, x, pert.t, perturbed_law(strategy, &p.market, pert))
}

fn rdu_of_law(p: &Problem, x: f64, t: f64, law: PerturbedLaw) -> Result<f64> {
    let a = p.market.r() * (p.horizon() - t) + law.g - 0.5 * law.h;
    let root = law.h.sqrt();
    let g = p.gamma;
    if g == 0.0 {
        let hx0 = if root > 0.0 { p.h.dx(t, 0.0)? } else { 0.0 };
        Ok(x.ln() + a - root * hx0)
    } else {
        let h = if root > 0.0 { p.h.value(t, -g * root)? } else { 1.0 };
        Ok(x.powf(g) / g * (g * a).exp() * h)
    }
}

/// G(t, κ) = −b|κᵀσ|² + 2(μ − b σσᵀπ(t))ᵀκ with b the bracket at the
/// strategy's Π(t).
#[allow(non_snake_case)]
pub fn G_form(p: &Problem, strategy: &Strategy, t: f64, kappa: &[f64]) -> Result<f64> {
    let pi_t = strategy.exposure(&p.market, t);
    g_form_at(p, strategy, t, kappa, pi_t)
}

fn g_form_at(p: &Problem, strategy: &Strategy, t: f64, kappa: &[f64], pi_t: f64) -> Result<f64> {
    if !(pi_t > 0.0) {
        return Err(domain("G(t, kappa) needs positive remaining exposure; use the zero-exposure branch"));
    }
    let b = p.bracket(t, pi_t)?;
    let lin = linear_coefficient(&p.market, b, &strategy.value_at(t));
    let lin_k: f64 = lin.iter().zip(kappa).map(|(l, k)| l * k).sum();
    Ok(-b * p.market.quad(kappa) + 2.0 * lin_k)
}

/// μ − b σσᵀπ.
fn linear_coefficient(m: &MarketParams, b: f64, pi: &[f64]) -> Vec<f64> {
    m.mu().iter().zip(m.cov_times(pi)).map(|(mu, c)| mu - b * c).collect()
}

/// ±{0.01, 0.1, 0.5, 1}·eᵢ for each coordinate and ±(σσᵀ)⁻¹μ normalised.
pub fn default_kappa_set(m: &MarketParams) -> Vec<Vec<f64>> {
    let n = m.n();
    let mut out = Vec::new();
    for i in 0..n {
        for s in [0.01, 0.1, 0.5, 1.0] {
            for sign in [1.0, -1.0] {
                let mut k = vec![0.0; n];
                k[i] = sign * s;
                out.push(k);
            }
        }
    }
    let dir = m.merton_direction();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.push(dir.iter().map(|d| d / norm).collect());
        out.push(dir.iter().map(|d| -d / norm).collect());
    }
    out
}

/// Relative offsets of the default ε-ladder, multiplied by T − t.
pub const DEFAULT_EPS_FRACTIONS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// `n` uniform points kT/n, k = 0..n−1.
pub fn default_t_grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| horizon * k as f64 / n as f64).collect()
}

/// Inputs of [`equilibrium_check`]; `None` fields take the defaults.
#[derive(Debug, Clone, Default)]
pub struct CheckConfig {
    pub t_grid: Option<Vec<f64>>,
    pub kappas: Option<Vec<Vec<f64>>>,
    pub eps_fractions: Option<Vec<f64>>,
    /// Exposure path the strategy claims, Π = Y; used for the bracket.
    pub exposure: Option<OdeSolution>,
    pub wealth: f64,
    pub execution: Execution,
}

/// Which decision rule applied at a grid time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    FirstOrder,
    ZeroExposure,
}

/// Per (t, κ) record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub t: f64,
    pub kappa: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    /// Largest (f(ε) − f(0))/ε over the ladder.
    pub slope: f64,
    pub slopes: Vec<f64>,
    pub verdict: bool,
}

/// Per grid time summary of the complete-decision test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeRecord {
    pub t: f64,
    pub branch: Branch,
    /// Π(t) by quadrature of the strategy.
    pub exposure_quadrature: f64,
    /// Π(t) used for the bracket.
    pub exposure: f64,
    pub bracket: Option<f64>,
    /// ‖μ − b σσᵀπ(t)‖∞.
    pub residual: Option<f64>,
    pub residual_tol: f64,
    pub hx0: Option<f64>,
    pub passed: bool,
}

/// Full report, serialisable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub times: Vec<TimeRecord>,
    pub points: Vec<PointRecord>,
    /// max |Π_quadrature − Y| over the grid when a path is claimed.
    pub exposure_mismatch: Option<f64>,
    pub exposure_tol: Option<f64>,
    pub worst_slope: f64,
    pub worst_residual: f64,
}

/// |G| above this must agree in sign with the finite-difference slope.
pub const SLOPE_SIGN_THRESHOLD: f64 = 1e-6;

fn check_time(p: &Problem, strategy: &Strategy, t: f64, cfg: &CheckConfig, kappas: &[Vec<f64>], fracs: &[f64]) -> Result<(TimeRecord, Vec<PointRecord>)> {
    let m = &p.market;
    let pi_quad = strategy.exposure(m, t);
    let exposure = cfg.exposure.as_ref().map_or(pi_quad, |y| y.value_at(t));
    let residual_tol = 1e-8 * m.mu_norm_inf();
    let x = cfg.wealth;
    let horizon = p.horizon();
    let base = PerturbedLaw { g: strategy.drift_integral(m, t), h: pi_quad };
    let f0 = rdu_of_law(p, x, t, base)?;
    let mut points = Vec::with_capacity(kappas.len());
    let slopes_of = |k: &[f64]| -> Result<Vec<f64>> {
        fracs
            .iter()
            .map(|fr| {
                let eps = fr * (horizon - t);
                let pert = Perturbation { t, epsilon: eps, kappa: k.to_vec() };
                let f = rdu_of_law(p, x, t, perturb(base, strategy, m, &pert))?;
                Ok((f - f0) / eps)
            })
            .collect()
    };
    let record = if exposure > 0.0 {
        let b = p.bracket(t, exposure)?;
        let lin = linear_coefficient(m, b, &strategy.value_at(t));
        let residual = lin.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut all = b > 0.0 && residual <= residual_tol;
        for k in kappas {
            let g = g_form_at(p, strategy, t, k, exposure)?;
            let slopes = slopes_of(k)?;
            let slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slope_ok = g.abs() <= SLOPE_SIGN_THRESHOLD || slopes.iter().all(|s| s.signum() == g.signum());
            let verdict = g < 0.0 && slope_ok;
            all &= verdict;
            points.push(PointRecord { t, kappa: k.clone(), g: Some(g), slope, slopes, verdict });
        }
        TimeRecord {
            t,
            branch: Branch::FirstOrder,
            exposure_quadrature: pi_quad,
            exposure,
            bracket: Some(b),
            residual: Some(residual),
            residual_tol,
            hx0: None,
            passed: all,
        }
    } else {
        let p0 = p.h.point(t, 0.0)?;
        let tol = p.h.zero_tol();
        let analytic = if p0.hx > tol {
            true
        } else if p0.hx < -tol {
            false
        } else {
            m.mu_is_zero() && 1.0 - p.gamma * p0.hxx > 0.0
        };
        let mut all = analytic;
        for k in kappas {
            let slopes = slopes_of(k)?;
            let slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let verdict = analytic && slope < 0.0;
            all &= verdict;
            points.push(PointRecord { t, kappa: k.clone(), g: None, slope, slopes, verdict });
        }
        TimeRecord {
            t,
            branch: Branch::ZeroExposure,
            exposure_quadrature: pi_quad,
            exposure,
            bracket: None,
            residual: None,
            residual_tol,
            hx0: Some(p0.hx),
            passed: all,
        }
    };
    Ok((record, points))
}

/// Strict-equilibrium test of `strategy` on a time grid.
///
/// With Π(t) > 0 the quadratic form decides: b > 0 and a vanishing linear
/// coefficient, plus G < 0 and matching slope signs over the κ-set. With
/// Π(t) = 0 the sign of h_x(t, 0) decides, with the slopes as evidence.
pub fn equilibrium_check(p: &Problem, strategy: &Strategy, cfg: &CheckConfig) -> Result<VerificationReport> {
    let m = &p.market;
    if strategy.dim() != m.n() {
        return Err(invalid("strategy dimension differs from the number of assets"));
    }
    if !(cfg.wealth > 0.0) {
        return Err(invalid("wealth must be positive"));
    }
    let horizon = p.horizon();
    let t_grid = cfg.t_grid.clone().unwrap_or_else(|| default_t_grid(horizon, 50));
    if t_grid.iter().any(|&t| !(t >= 0.0 && t < horizon)) {
        return Err(invalid("check times must lie in [0, T)"));
    }
    let kappas = cfg.kappas.clone().unwrap_or_else(|| default_kappa_set(m));
    let fracs = cfg.eps_fractions.clone().unwrap_or_else(|| DEFAULT_EPS_FRACTIONS.to_vec());
    if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(invalid("epsilon fractions must lie in (0, 1)"));
    }
    let rows = par::try_map(cfg.execution, &t_grid, |&t| check_time(p, strategy, t, cfg, &kappas, &fracs))?;
    let (exposure_mismatch, exposure_tol) = match &cfg.exposure {
        Some(y) => {
            let worst = rows.iter().map(|(r, _)| (r.exposure_quadrature - r.exposure).abs()).fold(0.0, f64::max);
            (Some(worst), Some(1e-5 * y.eta().max(1.0)))
        }
        None => (None, None),
    };
    let mut times = Vec::with_capacity(rows.len());
    let mut points = Vec::new();
    for (r, ps) in rows {
        times.push(r);
        points.extend(ps);
    }
    let exposure_ok = match (exposure_mismatch, exposure_tol) {
        (Some(e), Some(tol)) => e <= tol,
        _ => true,
    };
    let passed = exposure_ok && times.iter().all(|r| r.passed);
    let worst_slope = points.iter().map(|p| p.slope).fold(f64::NEG_INFINITY, f64::max);
    let worst_residual = times.iter().filter_map(|r| r.residual).fold(0.0, f64::max);
    Ok(VerificationReport { passed, times, points, exposure_mismatch, exposure_tol, worst_slope, worst_residual })
}
