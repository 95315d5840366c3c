//! Time-invariant weightings: the function 𝒢, the threshold y₁, the
//! closed-form exposure path and the six-way existence classification.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::hfun::HFunction;
use crate::model::{MarketParams, Strategy};
use crate::ode::{uniform_grid, OdeSolution};
use crate::problem::Problem;
use crate::quad::adaptive_simpson;

/// Default number of intervals of the autonomous time grid.
pub const DEFAULT_GRID_STEPS: usize = 2000;

/// [`Problem`] whose h does not depend on t.
#[derive(Debug, Clone)]
pub struct AutonomousProblem(Problem);

impl AutonomousProblem {
    pub fn new(market: MarketParams, h: HFunction, gamma: f64) -> Result<Self> {
        if !h.is_time_invariant() {
            return Err(invalid("autonomous problems need a time-invariant weighting"));
        }
        Ok(Self(Problem::new(market, h, gamma)?))
    }

    pub fn problem(&self) -> &Problem {
        &self.0
    }
}

impl Deref for AutonomousProblem {
    type Target = Problem;
    fn deref(&self) -> &Problem {
        &self.0
    }
}

/// Existence outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DsesCase {
    NoDses,
    ZeroUnique,
    NonzeroUnique,
    /// A continuum of equilibria indexed by η ∈ [0, η*].
    Family,
    /// Sampled conditions fall outside every covered regime.
    Undetermined,
}

impl DsesCase {
    pub fn describe(self) -> &'static str {
        match self {
            DsesCase::NoDses => "no DSES",
            DsesCase::ZeroUnique => "zero is the unique DSES",
            DsesCase::NonzeroUnique => "unique non-zero DSES",
            DsesCase::Family => "family of DSESes",
            DsesCase::Undetermined => "undetermined",
        }
    }
}

/// Quantities every classification reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub hx0: f64,
    pub hxx0: f64,
    /// 1 − γ h_xx(0).
    pub curvature: f64,
    /// `None` encodes y₁ = ∞.
    pub y1: Option<f64>,
    /// 𝒢(y₁) when finite; `None` if the integration stopped above θ²T first.
    pub g_y1: Option<f64>,
    pub theta2_t: f64,
    pub flags: Vec<String>,
}

/// Outcome of a classification.
#[derive(Debug, Clone, Serialize)]
pub struct ClassificationResult {
    pub case: DsesCase,
    /// Case label, roman numerals for the autonomous routing.
    pub label: String,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timevar: Option<crate::timevar::TimevarDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(skip)]
    pub y: Option<OdeSolution>,
}

/// Bracket 1 + h′(−γ√y)/(h(−γ√y)√y).
pub fn drift_factor(p: &AutonomousProblem, y: f64) -> Result<f64> {
    p.bracket(0.0, y)
}

fn require_flat(p: &AutonomousProblem) -> Result<()> {
    let hx0 = p.h.dx(0.0, 0.0)?;
    if !p.hx0_is_zero(hx0) {
        return Err(domain(format!("G needs h'(0) = 0, got {hx0:e}")));
    }
    Ok(())
}

/// ∫_{a}^{b} bracket(z)² dz through z = s², which removes the √z cusp at 0.
fn g_segment(p: &AutonomousProblem, a: f64, b: f64) -> Result<f64> {
    let mut err = None;
    let mut f = |s: f64| match p.bracket(0.0, s * s) {
        Ok(v) => 2.0 * s * v * v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let scale = b.max(1e-300);
    let v = adaptive_simpson(&mut f, a.sqrt(), b.sqrt(), 1e-14 * scale.max(1e-6));
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// 𝒢(y) = ∫₀ʸ bracket(z)² dz; needs h′(0) = 0.
#[allow(non_snake_case)]
pub fn G(p: &AutonomousProblem, y: f64) -> Result<f64> {
    require_flat(p)?;
    if y < 0.0 {
        return Err(invalid("G needs y >= 0"));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    g_segment(p, 0.0, y)
}

/// Brackets at or below this count as non-positive in the y₁ search.
const BRACKET_ZERO: f64 = 1e-12;

/// y₁ = inf{y > 0 : bracket(y) ≤ 0}; `None` encodes +∞.
pub fn y1(p: &AutonomousProblem) -> Result<Option<f64>> {
    require_flat(p)?;
    if p.gamma <= 0.0 {
        return Ok(None);
    }
    const POINTS: usize = 1801;
    let (lo, hi) = (1e-12f64.ln(), 1e6f64.ln());
    let mut prev = None;
    for i in 0..POINTS {
        let y = (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp();
        if drift_factor(p, y)? <= BRACKET_ZERO {
            let Some(mut a) = prev else {
                return Ok(Some(0.0));
            };
            let mut b = y;
            while b - a > 1e-12 * b {
                let mid = 0.5 * (a + b);
                if drift_factor(p, mid)? <= BRACKET_ZERO {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Ok(Some(b));
        }
        prev = Some(y);
    }
    Ok(None)
}

/// Ordering of 𝒢(y₁) against θ²T.
#[derive(Debug, Clone, Copy, PartialEq)]
enum GVerdict {
    Above,
    BelowOrEqual { equal: bool },
}

fn compare_g_y1(p: &AutonomousProblem, y1: Option<f64>, target: f64) -> Result<(GVerdict, Option<f64>)> {
    let eq_tol = 1e-12 * target.max(1.0);
    match y1 {
        Some(y) => {
            let g = G(p, y)?;
            let verdict = if g > target + eq_tol {
                GVerdict::Above
            } else {
                GVerdict::BelowOrEqual { equal: (g - target).abs() <= eq_tol }
            };
            Ok((verdict, Some(g)))
        }
        None => {
            let mut y = target.clamp(1e-12, 1.0);
            let mut g = G(p, y)?;
            while g <= target && y <= 1e9 {
                let next = 2.0 * y;
                g += g_segment(p, y, next)?;
                y = next;
            }
            if g > target {
                Ok((GVerdict::Above, None))
            } else {
                Ok((GVerdict::BelowOrEqual { equal: (g - target).abs() <= eq_tol }, Some(g)))
            }
        }
    }
}

/// 𝒢⁻¹(target) on [0, y₁).
#[allow(non_snake_case)]
pub fn G_inverse(p: &AutonomousProblem, target: f64) -> Result<f64> {
    require_flat(p)?;
    if !(target >= 0.0 && target.is_finite()) {
        return Err(invalid("G inverse needs a finite non-negative target"));
    }
    invert_increment(p, 0.0, target, y1(p)?)
}

/// Y(t) = 𝒢⁻¹(θ²(T−t)) on `steps + 1` uniform times.
///
/// Targets are processed from t = T backward; each inversion integrates
/// only the increment beyond the previous root.
pub fn solve_autonomous(p: &AutonomousProblem, steps: usize) -> Result<OdeSolution> {
    require_flat(p)?;
    if p.market.mu_is_zero() {
        return Err(domain("mu = 0 admits no positive exposure path"));
    }
    let horizon = p.horizon();
    let theta2 = p.theta() * p.theta();
    let y1 = y1(p)?;
    if let (GVerdict::BelowOrEqual { .. }, _) = compare_g_y1(p, y1, theta2 * horizon)? {
        return Err(domain("G(y1) <= theta^2 T: no positive exposure path"));
    }
    let times = uniform_grid(horizon, steps);
    let mut values = vec![0.0; times.len()];
    let (mut y_prev, mut g_prev) = (0.0f64, 0.0f64);
    for k in (0..steps).rev() {
        let need = theta2 * (horizon - times[k]) - g_prev;
        let y = invert_increment(p, y_prev, need, y1)?;
        g_prev += g_segment(p, y_prev, y)?;
        y_prev = y;
        values[k] = y;
    }
    Ok(OdeSolution::from_path(times, values, false, None))
}

/// Solves ∫_{a}^{y} bracket² = need for y > a by safeguarded Newton.
fn invert_increment(p: &AutonomousProblem, a: f64, need: f64, y1: Option<f64>) -> Result<f64> {
    if need <= 0.0 {
        return Ok(a);
    }
    let ba = drift_factor(p, a.max(1e-300))?;
    let mut hi = a + 2.0 * need / (ba * ba).max(1e-300);
    if let Some(y1) = y1 {
        hi = hi.min(y1);
    }
    while g_segment(p, a, hi)? < need {
        if let Some(y1) = y1 {
            if hi >= y1 {
                return Err(domain("exposure target exceeds G(y1)"));
            }
            hi = (a + 2.0 * (hi - a)).min(y1);
        } else {
            hi = a + 2.0 * (hi - a);
        }
    }
    let mut lo = a;
    let mut y = a + need / (ba * ba).max(1e-300);
    if !(y > lo && y < hi) {
        y = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = g_segment(p, a, y)? - need;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let b = drift_factor(p, y)?;
        let mut next = y - f / (b * b);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 1e-13 * y || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        y = next;
    }
    Ok(y)
}

/// Six-way existence routing for time-invariant weightings.
pub fn classify_time_invariant(p: &AutonomousProblem, steps: usize) -> Result<ClassificationResult> {
    let p0 = p.h.point(0.0, 0.0)?;
    let theta2_t = p.theta() * p.theta() * p.horizon();
    let curvature = 1.0 - p.gamma * p0.hxx;
    let mut diag = Diagnostics { hx0: p0.hx, hxx0: p0.hxx, curvature, theta2_t, ..Default::default() };
    let tol = p.h.zero_tol();
    if p0.hx.abs() < tol && p0.hx.abs() > 0.1 * tol {
        diag.flags.push(format!("h'(0) = {:e} is inside but near the edge of the zero band {tol:e}", p0.hx));
    }
    let n = p.market.n();
    let done = |case, label: &str, diag, strategy, y| ClassificationResult {
        case,
        label: label.to_string(),
        diagnostics: diag,
        timevar: None,
        strategy,
        y,
    };
    if !p.hx0_is_zero(p0.hx) {
        let y1v = None;
        diag.y1 = y1v;
        return Ok(if p0.hx < 0.0 {
            done(DsesCase::NoDses, "i", diag, None, None)
        } else {
            done(DsesCase::ZeroUnique, "ii", diag, Some(Strategy::zero(n)), Some(OdeSolution::zero(p.horizon(), steps)))
        });
    }
    let y1v = y1(p)?;
    diag.y1 = y1v;
    if p.market.mu_is_zero() {
        return Ok(if curvature > 0.0 {
            done(DsesCase::ZeroUnique, "iii", diag, Some(Strategy::zero(n)), Some(OdeSolution::zero(p.horizon(), steps)))
        } else {
            done(DsesCase::NoDses, "iv", diag, None, None)
        });
    }
    let (verdict, g) = compare_g_y1(p, y1v, theta2_t)?;
    diag.g_y1 = g;
    match verdict {
        GVerdict::Above => {
            let y = solve_autonomous(p, steps)?;
            let eq = crate::equilibrium::build_strategy(p.problem(), &y)?;
            Ok(done(DsesCase::NonzeroUnique, "v", diag, Some(eq.strategy), Some(y)))
        }
        GVerdict::BelowOrEqual { equal } => {
            if equal {
                diag.flags.push("G(y1) equals theta^2 T within tolerance; routed to case (vi)".into());
            }
            Ok(done(DsesCase::NoDses, "vi", diag, None, None))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfun::{PhiH, QuadratureH};
    use crate::weighting::{Identity, PhiFamily};
    use std::sync::Arc;

    fn market(mu: f64) -> MarketParams {
        MarketParams::new(0.0, vec![mu], vec![vec![0.2]], 10.0).unwrap()
    }

    fn phi(lambda: f64, nu: f64, gamma: f64, mu: f64) -> AutonomousProblem {
        let h = Arc::new(PhiH::new(PhiFamily::constant(lambda, nu).unwrap()));
        AutonomousProblem::new(market(mu), h, gamma).unwrap()
    }

    #[test]
    fn bracket_closed_forms() {
        let p = phi(1.0, 0.0, -2.0, 0.05);
        for &y in &[1e-14, 1e-6, 0.3, 5.0] {
            assert!((drift_factor(&p, y).unwrap() - 3.0).abs() < 1e-12);
        }
        let p = phi(1.3, 0.2, 0.0, 0.05);
        let y = 0.04;
        assert!((drift_factor(&p, y).unwrap() - (1.0 - 0.2 / 0.2)).abs() < 1e-12);
    }

    #[test]
    fn g_linear_for_symmetric_family() {
        let (lambda, gamma) = (1.5, -2.0);
        let p = phi(lambda, 0.0, gamma, 0.05);
        let c = (1.0 - gamma * lambda * lambda).powi(2);
        for &y in &[0.0, 1e-6, 0.1, 3.0] {
            assert!((G(&p, y).unwrap() - c * y).abs() < 1e-11 * (c * y).max(1.0));
        }
    }

    #[test]
    fn g_requires_flat_slope() {
        assert!(G(&phi(1.0, 0.3, -2.0, 0.05), 0.1).is_err());
    }

    #[test]
    fn y1_cases() {
        assert_eq!(y1(&phi(1.5, 0.0, -2.0, 0.05)).unwrap(), None);
        assert_eq!(y1(&phi(1.5, 0.0, 0.3, 0.05)).unwrap(), None);
        assert_eq!(y1(&phi(1.0, 0.0, 1.0, 0.05)).unwrap(), Some(0.0));
    }

    /// Equal mixture of two symmetric Φ-family weightings with λ = 0.5 and 1.5,
    /// so h = ½(e^{x²/8} + e^{9x²/8}) and the bracket decreases in y.
    #[derive(Debug)]
    struct Mixture(PhiFamily, PhiFamily);

    impl crate::weighting::Weighting for Mixture {
        fn eval(&self, t: f64, p: f64) -> f64 {
            0.5 * (self.0.eval(t, p) + self.1.eval(t, p))
        }
        fn deriv(&self, t: f64, p: f64) -> f64 {
            0.5 * (self.0.deriv(t, p) + self.1.deriv(t, p))
        }
        fn distorted_density(&self, t: f64, z: f64) -> f64 {
            0.5 * (self.0.distorted_density(t, z) + self.1.distorted_density(t, z))
        }
        fn kind(&self) -> crate::weighting::WeightingKind {
            crate::weighting::WeightingKind::UserSupplied
        }
        fn is_time_invariant(&self) -> bool {
            true
        }
    }

    fn mixture() -> Arc<dyn crate::weighting::Weighting> {
        Arc::new(Mixture(PhiFamily::constant(0.5, 0.0).unwrap(), PhiFamily::constant(1.5, 0.0).unwrap()))
    }

    #[test]
    fn y1_interior_root_for_positive_gamma() {
        let h = Arc::new(QuadratureH::new(mixture()));
        let gamma = 0.6;
        let p = AutonomousProblem::new(market(0.05), h, gamma).unwrap();
        // root of (e^{x²/8}/4 + 9e^{9x²/8}/4)/(e^{x²/8}+e^{9x²/8}) = 1/γ at x² = γ²y
        let ratio: f64 = (1.0 / gamma - 0.25) / (2.25 - 1.0 / gamma);
        let want = ratio.ln() / (gamma * gamma);
        let got = y1(&p).unwrap().unwrap();
        assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
        assert!(drift_factor(&p, 0.5 * want).unwrap() > 0.0);
        assert!(drift_factor(&p, 1.5 * want).unwrap() < 0.0);
    }

    #[test]
    fn g_matches_riemann_oracle_for_generic_h() {
        let h = Arc::new(QuadratureH::new(mixture()));
        let p = AutonomousProblem::new(market(0.05), h, -1.0).unwrap();
        let y = 0.4;
        // closed bracket for the mixture: 1 + (e^{u/8}/4 + 9e^{9u/8}/4)/(e^{u/8}+e^{9u/8}), u = y
        let b = |z: f64| {
            let (e1, e2) = ((z / 8.0).exp(), (9.0 * z / 8.0).exp());
            1.0 + (0.25 * e1 + 2.25 * e2) / (e1 + e2)
        };
        let n = 1_000_000;
        let dz = y / n as f64;
        let oracle: f64 = (0..n).map(|i| b((i as f64 + 0.5) * dz).powi(2) * dz).sum();
        assert!((G(&p, y).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn solve_matches_linear_closed_form() {
        let p = phi(1.0, 0.0, -2.0, 0.05);
        let s = solve_autonomous(&p, 200).unwrap();
        for (t, y) in s.times.iter().zip(&s.values) {
            let want = 0.0625 * (10.0 - t) / 9.0;
            assert!((y - want).abs() < 1e-12 * want.max(1e-3), "t = {t}");
        }
        assert!((s.eta() - 0.069_444_444_444_444_44).abs() < 1e-12);
        assert_eq!(s.terminal(), 0.0);
    }

    #[test]
    fn merton_recovered_for_identity() {
        let p = phi(1.0, 0.0, -2.0, 0.05);
        let c = classify_time_invariant(&p, 100).unwrap();
        assert_eq!(c.case, DsesCase::NonzeroUnique);
        assert_eq!(c.label, "v");
        let pi = c.strategy.unwrap().value_at(0.0)[0];
        assert!((pi - 1.25 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_backend_generic_solution() {
        let h = Arc::new(QuadratureH::new(Arc::new(Identity)));
        let p = AutonomousProblem::new(market(0.05), h, -1.0).unwrap();
        let s = solve_autonomous(&p, 20).unwrap();
        for (t, y) in s.times.iter().zip(&s.values) {
            let want = 0.0625 * (10.0 - t) / 4.0;
            assert!((y - want).abs() < 1e-9, "t = {t}: {y} vs {want}");
        }
    }
}
