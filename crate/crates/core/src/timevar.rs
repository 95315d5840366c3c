//! Time-dependent weightings with γ ≤ 0: the singular exposure equation
//! Y′ = −θ² m(t, √Y)², Y(T) = 0, solved forward from Y(0) = η or backward
//! from Y(T) = ε.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hfun::HFunction;
use crate::model::MarketParams;
use crate::ode::{rk4_backward, rk4_forward, OdeSolution};
use crate::par::{self, Execution};
use crate::problem::{MValue, Problem};

/// Solver knobs shared by the time-variant routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// RK4 steps on [0, T].
    pub steps: usize,
    /// Terminal values for the maximal-solution approximation, decreasing.
    pub eps_ladder: Vec<f64>,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { steps: 20_000, eps_ladder: default_eps_ladder(), execution: Execution::default() }
    }
}

/// 1e-2, 1e-3, ..., 1e-8.
pub fn default_eps_ladder() -> Vec<f64> {
    (2..=8).map(|k| 10f64.powi(-k)).collect()
}

/// [`Problem`] restricted to γ ≤ 0.
#[derive(Debug, Clone)]
pub struct TimevarProblem(Problem);

impl TimevarProblem {
    pub fn new(market: MarketParams, h: HFunction, gamma: f64) -> Result<Self> {
        if gamma > 0.0 {
            return Err(invalid("time-variant analysis requires gamma <= 0"));
        }
        Ok(Self(Problem::new(market, h, gamma)?))
    }

    pub fn problem(&self) -> &Problem {
        &self.0
    }
}

impl Deref for TimevarProblem {
    type Target = Problem;
    fn deref(&self) -> &Problem {
        &self.0
    }
}

/// m(t, x) with its validity flag.
pub fn m(p: &TimevarProblem, t: f64, x: f64) -> Result<MValue> {
    p.m(t, x)
}

fn rhs(p: &Problem) -> impl FnMut(f64, f64) -> Result<(f64, bool)> + '_ {
    let theta2 = p.theta() * p.theta();
    move |t, y| {
        let mv = p.m(t, y.max(0.0).sqrt())?;
        Ok((-theta2 * mv.value * mv.value, mv.valid))
    }
}

/// Forward solve from Y(0) = η.
pub fn solve_forward(p: &TimevarProblem, eta: f64, steps: usize) -> Result<OdeSolution> {
    forward(p.problem(), eta, steps)
}

pub(crate) fn forward(p: &Problem, eta: f64, steps: usize) -> Result<OdeSolution> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid("eta must be finite and non-negative"));
    }
    if steps == 0 {
        return Err(invalid("steps must be positive"));
    }
    if eta == 0.0 {
        return Ok(OdeSolution::zero(p.horizon(), steps));
    }
    rk4_forward(&mut rhs(p), p.horizon(), eta, steps)
}

/// Backward solve from Y(T) = ε.
pub fn solve_backward_eps(p: &TimevarProblem, epsilon: f64, steps: usize) -> Result<OdeSolution> {
    backward(p.problem(), epsilon, steps)
}

pub(crate) fn backward(p: &Problem, epsilon: f64, steps: usize) -> Result<OdeSolution> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be positive"));
    }
    if steps == 0 {
        return Err(invalid("steps must be positive"));
    }
    rk4_backward(&mut rhs(p), p.horizon(), epsilon, steps)
}

fn require_log(p: &TimevarProblem) -> Result<()> {
    if p.gamma != 0.0 {
        return Err(invalid("log-utility solver requires gamma = 0"));
    }
    Ok(())
}

/// Forward solve of Y′ = −θ²Y/(√Y + h_x(t,0))².
pub fn solve_log_forward(p: &TimevarProblem, eta: f64, steps: usize) -> Result<OdeSolution> {
    require_log(p)?;
    solve_forward(p, eta, steps)
}

/// Backward solve of the log-utility equation from Y(T) = ε.
pub fn solve_log_backward_eps(p: &TimevarProblem, epsilon: f64, steps: usize) -> Result<OdeSolution> {
    require_log(p)?;
    solve_backward_eps(p, epsilon, steps)
}

/// Y(T) counts as zero at or below this.
pub fn zero_floor(eta: f64) -> f64 {
    1e-10f64.max(1e-6 * eta)
}

/// η* from the ε-ladder.
#[derive(Debug, Clone, Serialize)]
pub struct EtaStarEstimate {
    pub eta_star: f64,
    pub ladder: Vec<f64>,
    /// Y_ε(0) for each rung.
    pub values: Vec<f64>,
    pub converged: bool,
    /// Aitken Δ² limit of the last three rungs, when their differences
    /// shrink geometrically. Diagnostic only.
    pub extrapolated: Option<f64>,
    /// Path for the last rung, the maximal-solution approximation.
    #[serde(skip)]
    pub maximal: OdeSolution,
}

/// Runs the ε-ladder; Y_ε(0) must decrease along it.
pub fn estimate_eta_star(p: &TimevarProblem, config: &SolverConfig) -> Result<EtaStarEstimate> {
    eta_star_ladder(p.problem(), config)
}

pub(crate) fn eta_star_ladder(p: &Problem, config: &SolverConfig) -> Result<EtaStarEstimate> {
    let ladder = config.eps_ladder.clone();
    if ladder.is_empty() {
        return Err(invalid("epsilon ladder must not be empty"));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) || ladder.iter().any(|&e| !(e > 0.0)) {
        return Err(invalid("epsilon ladder must be positive and strictly decreasing"));
    }
    let mut paths = par::try_map(config.execution, &ladder, |&eps| backward(p, eps, config.steps))?;
    let values: Vec<f64> = paths.iter().map(|s| s.eta()).collect();
    for (j, w) in values.windows(2).enumerate() {
        if w[1] > w[0] * (1.0 + 1e-13) {
            return Err(Error::NonMonotoneLadder { eps: ladder[j + 1], previous: w[0], next: w[1] });
        }
    }
    let n = values.len();
    let eta_star = values[n - 1];
    let converged = n >= 2 && (values[n - 2] - values[n - 1]).abs() < 1e-6 * eta_star.max(1.0);
    let maximal = paths.pop().expect("non-empty ladder");
    let extrapolated = aitken(&values);
    Ok(EtaStarEstimate { eta_star, ladder, values, converged, extrapolated, maximal })
}

fn aitken(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let (d1, d2) = (values[n - 2] - values[n - 3], values[n - 1] - values[n - 2]);
    if d1 == 0.0 || d2 == 0.0 {
        return Some(values[n - 1]);
    }
    let r = d2 / d1;
    (r > 0.0 && r < 1.0).then(|| (values[n - 1] + d2 * r / (1.0 - r)).max(0.0))
}

/// η* by bisection on "the forward solution from η reaches zero at T".
pub fn eta_star_bisection(p: &TimevarProblem, steps: usize) -> Result<f64> {
    let theta2_t = p.theta() * p.theta() * p.horizon();
    let hits = |eta: f64| -> Result<bool> { Ok(solve_forward(p, eta, steps)?.terminal() <= zero_floor(eta)) };
    if theta2_t == 0.0 || hits(theta2_t)? {
        return Ok(theta2_t);
    }
    let (mut lo, mut hi) = (0.0, theta2_t);
    while hi - lo > 1e-12 * theta2_t {
        let mid = 0.5 * (lo + hi);
        if hits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// h_x(T−τ, 0)/(θ√τ) at one rung.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSample {
    pub tau: f64,
    pub ratio: f64,
}

/// Sampled suprema for the regularity conditions of the forward method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularitySamples {
    /// Description of the sampled (t, x) grid.
    pub grid: String,
    /// sup h_xx(T−τ, x) over the terminal ladder and x ≤ 0.1.
    pub hxx_near_terminal_sup: f64,
    /// sup √x h_xx(t, √x) over t ≤ T/2, x ≤ 1.
    pub sqrt_x_hxx_sup: f64,
    /// sup_t h(t, 1), inf_t h_x(t, 1), sup_t h_x(t, 1), sup h_xx(t, x ≤ 1) with t < T.
    pub h_sup: f64,
    pub hx_inf: f64,
    pub hx_sup: f64,
    pub hxx_sup: f64,
}

/// Advisory checks of the conditions behind the positive-solution theory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExistenceReport {
    pub ratio_ladder: Vec<RatioSample>,
    /// Largest ratio over the three rungs closest to T.
    pub ratio_limsup: f64,
    pub ratio_condition: bool,
    pub hx0_min: f64,
    pub hx0_max: f64,
    pub hx0_negative: usize,
    pub hx0_zero: usize,
    pub hx0_positive: usize,
    pub sample_times: usize,
    /// Zero band applied to h_x(t, 0).
    pub zero_tol: f64,
    /// Every sampled h_x(t, 0) in the last tenth of the horizon lies in the zero band.
    pub hx0_vanishes_near_terminal: bool,
    pub regularity: RegularitySamples,
    pub passed: bool,
}

/// Sample times: 401 uniform points on [0, T) and T − T·10⁻ᵏ, k = 1..8.
pub(crate) fn sample_times(horizon: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..401).map(|i| horizon * i as f64 / 401.0).collect();
    ts.extend(terminal_ladder(horizon).iter().map(|tau| horizon - tau));
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn terminal_ladder(horizon: f64) -> Vec<f64> {
    (1..=8).map(|k| horizon * 10f64.powi(-k)).collect()
}

pub fn check_existence_conditions(p: &TimevarProblem) -> Result<ExistenceReport> {
    existence_report(p.problem())
}

pub(crate) fn existence_report(p: &Problem) -> Result<ExistenceReport> {
    let horizon = p.horizon();
    let theta = p.theta();
    let h = &p.h;
    let tol = h.zero_tol();
    let ratio_ladder: Vec<RatioSample> = terminal_ladder(horizon)
        .into_iter()
        .map(|tau| {
            let hx = h.dx(horizon - tau, 0.0)?;
            Ok(RatioSample { tau, ratio: hx / (theta * tau.sqrt()) })
        })
        .collect::<Result<_>>()?;
    let ratio_limsup = ratio_ladder[ratio_ladder.len() - 3..].iter().map(|s| s.ratio).fold(f64::NEG_INFINITY, f64::max);
    let ts = sample_times(horizon);
    let hx0: Vec<f64> = ts.iter().map(|&t| h.dx(t, 0.0)).collect::<Result<_>>()?;
    let (mut neg, mut zero, mut pos) = (0, 0, 0);
    for &v in &hx0 {
        if v < -tol {
            neg += 1;
        } else if v.abs() < tol {
            zero += 1;
        } else {
            pos += 1;
        }
    }
    let vanishes = ts.iter().zip(&hx0).filter(|(&t, _)| t >= 0.9 * horizon).all(|(_, v)| v.abs() < tol);
    let regularity = regularity_samples(p)?;
    let ratio_condition = ratio_limsup < 1.0;
    let finite = [regularity.hxx_near_terminal_sup, regularity.sqrt_x_hxx_sup, regularity.h_sup, regularity.hx_sup, regularity.hxx_sup]
        .iter()
        .all(|v| v.is_finite());
    Ok(ExistenceReport {
        ratio_ladder,
        ratio_limsup,
        ratio_condition,
        hx0_min: hx0.iter().copied().fold(f64::INFINITY, f64::min),
        hx0_max: hx0.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        hx0_negative: neg,
        hx0_zero: zero,
        hx0_positive: pos,
        sample_times: ts.len(),
        zero_tol: tol,
        hx0_vanishes_near_terminal: vanishes,
        passed: ratio_condition && neg == 0 && finite && regularity.hx_inf > 0.0,
        regularity,
    })
}

fn regularity_samples(p: &Problem) -> Result<RegularitySamples> {
    let horizon = p.horizon();
    let h = &p.h;
    let xs_small = [0.0, 1e-4, 1e-3, 1e-2, 0.1];
    let mut hxx_near = f64::NEG_INFINITY;
    for tau in terminal_ladder(horizon) {
        for &x in &xs_small {
            hxx_near = hxx_near.max(h.dxx(horizon - tau, x)?);
        }
    }
    let ts: Vec<f64> = (0..40).map(|i| horizon * i as f64 / 40.0).chain(terminal_ladder(horizon).into_iter().map(|tau| horizon - tau)).collect();
    let mut sqrt_x = f64::NEG_INFINITY;
    for &t in ts.iter().filter(|&&t| t <= 0.5 * horizon) {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            sqrt_x = sqrt_x.max(x.sqrt() * h.dxx(t, x.sqrt())?);
        }
    }
    let (mut h_sup, mut hx_inf, mut hx_sup, mut hxx_sup) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &t in &ts {
        let q = h.point(t, 1.0)?;
        h_sup = h_sup.max(q.h);
        hx_inf = hx_inf.min(q.hx);
        hx_sup = hx_sup.max(q.hx);
        for i in 1..=10 {
            hxx_sup = hxx_sup.max(h.dxx(t, i as f64 / 10.0)?);
        }
    }
    Ok(RegularitySamples {
        grid: "t: 40 uniform points on [0,T) plus T-T*10^-k (k=1..8); x: {0,1e-4,1e-3,1e-2,0.1} near T, 21 points on [0,1] for sqrt(x) h_xx, zeta = 1 elsewhere"
            .to_string(),
        hxx_near_terminal_sup: hxx_near,
        sqrt_x_hxx_sup: sqrt_x,
        h_sup,
        hx_inf,
        hx_sup,
        hxx_sup,
    })
}

/// Summary attached to time-variant classifications.
#[derive(Debug, Clone, Serialize)]
pub struct TimevarDiagnostics {
    pub existence: ExistenceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_star: Option<EtaStarEstimate>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfun::PhiH;
    use crate::weighting::PhiFamily;
    use std::sync::Arc;

    const THETA: f64 = 0.25;

    fn example(lambda: f64, beta: f64, gamma: f64) -> TimevarProblem {
        let market = MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap();
        let h = Arc::new(PhiH::new(PhiFamily::sqrt_decay(lambda, beta, 10.0).unwrap()));
        TimevarProblem::new(market, h, gamma).unwrap()
    }

    #[test]
    fn m_closed_form_for_sqrt_family() {
        let p = example(1.5, 0.1, -2.0);
        let (t, x) = (4.0, 0.3);
        let want = x / (5.5 * x + 0.1 * 6f64.sqrt());
        assert!((m(&p, t, x).unwrap().value - want).abs() < 1e-15);
        assert_eq!(m(&p, t, 0.0).unwrap().value, 0.0);
        let far = m(&p, t, 50.0).unwrap().value;
        assert!((far - 1.0 / 5.5).abs() < 1e-3);
    }

    #[test]
    fn m_log_case() {
        let market = MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap();
        let h = Arc::new(PhiH::new(PhiFamily::constant(1.0, -0.1).unwrap()));
        let p = TimevarProblem::new(market, h, 0.0).unwrap();
        assert!((m(&p, 0.0, 0.1).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forward_linear_solution_at_half_theta() {
        let p = example(1.0, THETA / 2.0, -2.0);
        let c = (THETA / 6.0).powi(2);
        let s = solve_forward(&p, c * 10.0, 4000).unwrap();
        for (t, y) in s.times.iter().zip(&s.values) {
            assert!((y - c * (10.0 - t)).abs() < 1e-9, "t = {t}: {y}");
        }
    }

    #[test]
    fn zero_eta_is_zero_path() {
        let s = solve_forward(&example(1.5, 0.23, -2.0), 0.0, 100).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn backward_upper_bound_and_ordering() {
        let p = example(1.5, 0.23, -2.0);
        let theta2_t = THETA * THETA * 10.0;
        let a = solve_backward_eps(&p, 1e-3, 2000).unwrap();
        let b = solve_backward_eps(&p, 1e-5, 2000).unwrap();
        assert!(a.eta() <= 1e-3 + theta2_t);
        assert!(a.eta() > b.eta());
        assert!(b.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn log_solvers_require_log_utility() {
        let p = example(1.0, 0.1, -1.0);
        assert!(solve_log_forward(&p, 0.1, 10).is_err());
        assert!(solve_log_backward_eps(&p, 0.1, 10).is_err());
    }

    #[test]
    fn log_with_flat_weighting_is_merton_exposure() {
        let market = MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap();
        let h = Arc::new(PhiH::new(PhiFamily::constant(1.0, 0.0).unwrap()));
        let p = TimevarProblem::new(market, h, 0.0).unwrap();
        let s = solve_log_forward(&p, 0.625, 1000).unwrap();
        assert!(s.terminal() < 1e-12);
        assert!((s.value_at(5.0) - 0.3125).abs() < 1e-12);
    }

    #[test]
    fn short_ladder_not_converged() {
        let p = example(1.5, 0.23, -2.0);
        let cfg = SolverConfig { steps: 1000, eps_ladder: vec![1e-4], ..Default::default() };
        assert!(!estimate_eta_star(&p, &cfg).unwrap().converged);
    }

    #[test]
    fn gamma_positive_rejected() {
        let market = MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap();
        let h = Arc::new(PhiH::new(PhiFamily::sqrt_decay(1.0, 0.1, 10.0).unwrap()));
        assert!(TimevarProblem::new(market, h, 0.5).is_err());
    }

    #[test]
    fn existence_ratio() {
        let r = check_existence_conditions(&example(1.0, 0.5 * THETA, -2.0)).unwrap();
        assert!((r.ratio_limsup - 0.5).abs() < 1e-6);
        assert!(r.ratio_condition);
        let r = check_existence_conditions(&example(1.0, 1.2 * THETA, -2.0)).unwrap();
        assert!((r.ratio_limsup - 1.2).abs() < 1e-6);
        assert!(!r.ratio_condition);
    }
}
