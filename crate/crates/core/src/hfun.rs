//! The transform h(t, x) = ∫₀¹ e^{x Φ⁻¹(p)} dw(t, p) and its partials.
//!
//! Two backends: exact formulas for the Φ-family and Gauss-Legendre
//! quadrature in the normal coordinate for any weighting.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::quad::{composite_gl, GaussLegendre};
use crate::weighting::{PhiFamily, PhiShift, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ClosedPhi,
    Quadrature,
}

/// h, h_x, h_xx at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HPoint {
    pub h: f64,
    pub hx: f64,
    pub hxx: f64,
}

/// All partials exposed by the closed backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HBundle {
    pub h: f64,
    pub hx: f64,
    pub hxx: f64,
    pub hxxx: f64,
    pub ht: f64,
    pub htx: f64,
}

pub trait HTransform: Send + Sync + fmt::Debug {
    /// h, h_x, h_xx at (t, x).
    fn point(&self, t: f64, x: f64) -> Result<HPoint>;

    /// ∂ᵏh/∂xᵏ for k ≤ 3.
    fn derivative(&self, t: f64, x: f64, k: usize) -> Result<f64>;

    /// h_t; zero for time-invariant weightings.
    fn dt(&self, t: f64, x: f64) -> Result<f64>;

    /// h_tx; zero for time-invariant weightings.
    fn dtx(&self, t: f64, x: f64) -> Result<f64>;

    fn is_time_invariant(&self) -> bool;

    fn backend(&self) -> Backend;

    /// Band inside which h_x(t, 0) counts as zero.
    fn zero_tol(&self) -> f64 {
        match self.backend() {
            Backend::ClosedPhi => 1e-10,
            Backend::Quadrature => 1e-7,
        }
    }

    /// Allowed deviation of h(t, 0) from 1.
    fn normalization_tol(&self) -> f64 {
        match self.backend() {
            Backend::ClosedPhi => 1e-14,
            Backend::Quadrature => 1e-8,
        }
    }

    fn phi_family(&self) -> Option<&PhiFamily> {
        None
    }

    fn value(&self, t: f64, x: f64) -> Result<f64> {
        self.derivative(t, x, 0)
    }

    fn dx(&self, t: f64, x: f64) -> Result<f64> {
        self.derivative(t, x, 1)
    }

    fn dxx(&self, t: f64, x: f64) -> Result<f64> {
        self.derivative(t, x, 2)
    }

    /// h_x / h.
    fn log_dx(&self, t: f64, x: f64) -> Result<f64> {
        let p = self.point(t, x)?;
        Ok(p.hx / p.h)
    }

    /// h_t / h.
    fn log_dt(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.dt(t, x)? / self.value(t, x)?)
    }
}

/// Shared handle used by every problem type.
pub type HFunction = Arc<dyn HTransform>;

/// Closed backend for the Φ-family: h = exp(−ν(t)x + λ²x²/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiH {
    pub params: PhiFamily,
}

impl PhiH {
    pub fn new(params: PhiFamily) -> Self {
        Self { params }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        match self.params.shift {
            PhiShift::SqrtDecay { horizon, .. } if t >= horizon => {
                Err(domain(format!("time partials need t < T, got t = {t}")))
            }
            _ => Ok(()),
        }
    }

    /// Every partial at (t, x).
    pub fn bundle(&self, t: f64, x: f64) -> Result<HBundle> {
        let l2 = self.params.lambda * self.params.lambda;
        let nu = self.params.nu(t);
        let h = (-nu * x + 0.5 * l2 * x * x).exp();
        let a = l2 * x - nu;
        let hx = a * h;
        let (ht, htx) = if self.params.is_time_invariant_shift() {
            (0.0, 0.0)
        } else {
            self.check_time(t)?;
            let nd = self.params.nu_dot(t);
            (-x * nd * h, -nd * (h + x * hx))
        };
        Ok(HBundle { h, hx, hxx: (l2 + a * a) * h, hxxx: (3.0 * l2 * a + a * a * a) * h, ht, htx })
    }
}

impl PhiFamily {
    fn is_time_invariant_shift(&self) -> bool {
        matches!(self.shift, PhiShift::Constant { .. })
    }
}

/// Closed-form bundle for the Φ-family.
pub fn h_closed_phi(params: &PhiFamily, t: f64, x: f64) -> Result<HBundle> {
    PhiH::new(*params).bundle(t, x)
}

impl HTransform for PhiH {
    fn point(&self, t: f64, x: f64) -> Result<HPoint> {
        let l2 = self.params.lambda * self.params.lambda;
        let nu = self.params.nu(t);
        let h = (-nu * x + 0.5 * l2 * x * x).exp();
        let a = l2 * x - nu;
        Ok(HPoint { h, hx: a * h, hxx: (l2 + a * a) * h })
    }

    fn derivative(&self, t: f64, x: f64, k: usize) -> Result<f64> {
        if k > 3 {
            return Err(invalid("derivative order must be at most 3"));
        }
        let l2 = self.params.lambda * self.params.lambda;
        let nu = self.params.nu(t);
        let h = (-nu * x + 0.5 * l2 * x * x).exp();
        let a = l2 * x - nu;
        Ok(match k {
            0 => h,
            1 => a * h,
            2 => (l2 + a * a) * h,
            _ => (3.0 * l2 * a + a * a * a) * h,
        })
    }

    fn dt(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.bundle(t, x)?.ht)
    }

    fn log_dx(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.params.lambda * self.params.lambda * x - self.params.nu(t))
    }

    fn log_dt(&self, t: f64, x: f64) -> Result<f64> {
        if self.params.is_time_invariant_shift() {
            return Ok(0.0);
        }
        self.check_time(t)?;
        Ok(-x * self.params.nu_dot(t))
    }

    fn dtx(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.bundle(t, x)?.htx)
    }

    fn is_time_invariant(&self) -> bool {
        self.params.is_time_invariant_shift()
    }

    fn backend(&self) -> Backend {
        Backend::ClosedPhi
    }

    fn phi_family(&self) -> Option<&PhiFamily> {
        Some(&self.params)
    }
}

/// Composite Gauss-Legendre settings for [`QuadratureH`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Initial half-width of the z-window.
    pub half_width: f64,
    /// Panels on the initial window.
    pub panels: usize,
    /// Maximum number of panel doublings.
    pub refinements: usize,
    /// Convergence threshold on successive values, relative to h.
    pub tol: f64,
    /// Largest half-width the window may grow to.
    pub max_half_width: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { half_width: 12.0, panels: 48, refinements: 4, tol: 1e-9, max_half_width: 96.0 }
    }
}

/// Quadrature backend: h⁽ᵏ⁾(t, x) = ∫ zᵏ e^{xz} d/dz w(t, Φ(z)) dz.
///
/// The window starts at `[-half_width, half_width]` and widens, at fixed
/// panel width, until the integrand at both ends is negligible against h.
#[derive(Debug, Clone)]
pub struct QuadratureH {
    w: Arc<dyn Weighting>,
    config: QuadConfig,
}

const TAIL_TOL: f64 = 1e-18;

impl QuadratureH {
    pub fn new(w: Arc<dyn Weighting>) -> Self {
        Self::with_config(w, QuadConfig::default())
    }

    pub fn with_config(w: Arc<dyn Weighting>, config: QuadConfig) -> Self {
        Self { w, config }
    }

    pub fn weighting(&self) -> &Arc<dyn Weighting> {
        &self.w
    }

    fn integrand(&self, t: f64, x: f64, z: f64) -> [f64; 4] {
        let rho = self.w.distorted_density(t, z);
        if rho == 0.0 {
            return [0.0; 4];
        }
        let f = (x * z).exp() * rho;
        [f, z * f, z * z * f, z * z * z * f]
    }

    /// Moments k = 0..=3.
    pub fn moments(&self, t: f64, x: f64) -> Result<[f64; 4]> {
        let rule = GaussLegendre::order20();
        let width = 2.0 * self.config.half_width / self.config.panels as f64;
        let mut half = self.config.half_width;
        let mut panels = self.config.panels;
        let mut value = composite_gl(rule, -half, half, panels, |z| self.integrand(t, x, z));
        loop {
            let edge = self.integrand(t, x, -half)[0].max(self.integrand(t, x, half)[0]);
            if edge <= TAIL_TOL * value[0] || half >= self.config.max_half_width {
                break;
            }
            half = (half * 1.5).min(self.config.max_half_width);
            panels = (2.0 * half / width).ceil() as usize;
            value = composite_gl(rule, -half, half, panels, |z| self.integrand(t, x, z));
        }
        let mut last_change = f64::INFINITY;
        for _ in 0..self.config.refinements {
            panels *= 2;
            let next = composite_gl(rule, -half, half, panels, |z| self.integrand(t, x, z));
            let scale = next[0].abs().max(f64::MIN_POSITIVE);
            last_change = (0..4)
                .map(|k| (next[k] - value[k]).abs() / (scale * (next[k].abs() / scale).max(1.0)))
                .fold(0.0, f64::max);
            value = next;
            if last_change < self.config.tol {
                return Ok(value);
            }
        }
        Err(Error::QuadratureNotConverged { last_change, refinements: self.config.refinements })
    }

    fn time_step(&self, t: f64) -> Result<f64> {
        let horizon = self
            .w
            .horizon()
            .ok_or_else(|| invalid("time-dependent weighting must report its horizon"))?;
        if t >= horizon {
            return Err(domain(format!("time partials need t < T, got t = {t}")));
        }
        Ok((1e-4f64).min((horizon - t) / 10.0))
    }

    /// ∂/∂t of moment `k` by finite differences; one-sided near t = 0.
    fn time_partial(&self, t: f64, x: f64, k: usize) -> Result<f64> {
        if self.w.is_time_invariant() {
            return Ok(0.0);
        }
        let d = self.time_step(t)?;
        if t - d >= 0.0 {
            let up = self.moments(t + d, x)?[k];
            let dn = self.moments(t - d, x)?[k];
            Ok((up - dn) / (2.0 * d))
        } else {
            let d = d.min(1e-5);
            let f0 = self.moments(t, x)?[k];
            let f1 = self.moments(t + d, x)?[k];
            let f2 = self.moments(t + 2.0 * d, x)?[k];
            Ok((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * d))
        }
    }
}

impl HTransform for QuadratureH {
    fn point(&self, t: f64, x: f64) -> Result<HPoint> {
        let m = self.moments(t, x)?;
        Ok(HPoint { h: m[0], hx: m[1], hxx: m[2] })
    }

    fn derivative(&self, t: f64, x: f64, k: usize) -> Result<f64> {
        if k > 3 {
            return Err(invalid("derivative order must be at most 3"));
        }
        Ok(self.moments(t, x)?[k])
    }

    fn dt(&self, t: f64, x: f64) -> Result<f64> {
        self.time_partial(t, x, 0)
    }

    fn dtx(&self, t: f64, x: f64) -> Result<f64> {
        self.time_partial(t, x, 1)
    }

    fn is_time_invariant(&self) -> bool {
        self.w.is_time_invariant()
    }

    fn backend(&self) -> Backend {
        Backend::Quadrature
    }
}

/// k-th x-derivative of h by quadrature.
pub fn h_quadrature(w: Arc<dyn Weighting>, t: f64, x: f64, k: usize) -> Result<f64> {
    QuadratureH::new(w).derivative(t, x, k)
}

/// Closed backend when the weighting is a Φ-family, quadrature otherwise.
pub fn h_for(w: Arc<dyn Weighting>) -> HFunction {
    match w.phi_params() {
        Some(p) => Arc::new(PhiH::new(*p)),
        None => Arc::new(QuadratureH::new(w)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaHCheck {
    Normalization,
    Positivity,
    Convexity,
    SlopeIncreasing,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaHViolation {
    pub check: LemmaHCheck,
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaHReport {
    pub t: f64,
    pub h_at_zero: f64,
    pub violations: Vec<LemmaHViolation>,
}

impl LemmaHReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks h(t,0) = 1, h > 0, h_xx > 0 and strictly increasing h_x on `xs`.
pub fn check_lemma_h(h: &dyn HTransform, t: f64, xs: &[f64]) -> LemmaHReport {
    let mut violations = Vec::new();
    let h0 = h.value(t, 0.0).unwrap_or(f64::NAN);
    if !((h0 - 1.0).abs() <= h.normalization_tol()) {
        violations.push(LemmaHViolation { check: LemmaHCheck::Normalization, x: 0.0, value: h0 });
    }
    let mut grid: Vec<f64> = xs.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut prev_slope: Option<(f64, f64)> = None;
    for &x in &grid {
        let p = match h.point(t, x) {
            Ok(p) => p,
            Err(_) => {
                violations.push(LemmaHViolation { check: LemmaHCheck::Evaluation, x, value: f64::NAN });
                continue;
            }
        };
        if !(p.h > 0.0) {
            violations.push(LemmaHViolation { check: LemmaHCheck::Positivity, x, value: p.h });
        }
        if !(p.hxx > 0.0) {
            violations.push(LemmaHViolation { check: LemmaHCheck::Convexity, x, value: p.hxx });
        }
        if let Some((_, s)) = prev_slope {
            if !(p.hx > s) {
                violations.push(LemmaHViolation { check: LemmaHCheck::SlopeIncreasing, x, value: p.hx - s });
            }
        }
        prev_slope = Some((x, p.hx));
    }
    LemmaHReport { t, h_at_zero: h0, violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::Identity;

    #[test]
    fn closed_values_at_zero() {
        let p = PhiFamily::constant(1.5, 0.2).unwrap();
        let b = h_closed_phi(&p, 0.0, 0.0).unwrap();
        assert_eq!(b.h, 1.0);
        assert!((b.hx + 0.2).abs() < 1e-16);
        assert!((b.hxx - (2.25 + 0.04)).abs() < 1e-15);
        assert_eq!((b.ht, b.htx), (0.0, 0.0));
    }

    #[test]
    fn closed_sqrt_decay_partials() {
        let (beta, horizon) = (0.125, 10.0);
        let p = PhiFamily::sqrt_decay(1.0, beta, horizon).unwrap();
        let t = 6.0;
        let b = h_closed_phi(&p, t, 0.0).unwrap();
        assert!((b.hx - beta * 2.0).abs() < 1e-15);
        assert!((b.htx + beta / 4.0).abs() < 1e-15);
        let x = 0.3;
        let b = h_closed_phi(&p, t, x).unwrap();
        assert!((b.ht + x * beta / 4.0 * b.h).abs() < 1e-15);
        assert!(h_closed_phi(&p, horizon, 0.0).is_err());
        let near = h_closed_phi(&p, horizon - 1e-12, 0.0).unwrap();
        assert!(near.hx < 1e-6);
    }

    #[test]
    fn closed_time_partials_match_differences() {
        let p = PhiFamily::sqrt_decay(1.5, 0.2, 10.0).unwrap();
        let h = PhiH::new(p);
        let (t, x, d) = (3.0, 0.4, 1e-5);
        let fd = (h.value(t + d, x).unwrap() - h.value(t - d, x).unwrap()) / (2.0 * d);
        assert!((fd - h.dt(t, x).unwrap()).abs() < 1e-8);
        let fd = (h.dx(t + d, x).unwrap() - h.dx(t - d, x).unwrap()) / (2.0 * d);
        assert!((fd - h.dtx(t, x).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn quadrature_identity_mgf() {
        let v = h_quadrature(Arc::new(Identity), 0.0, 1.0, 0).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn quadrature_matches_sqrt2_family() {
        let w = Arc::new(PhiFamily::constant(2f64.sqrt(), 0.0).unwrap());
        let v = h_quadrature(w, 0.0, 1.0, 0).unwrap();
        assert!((v - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_first_derivative_matches_closed() {
        let p = PhiFamily::constant(1.5, 0.2).unwrap();
        let v = h_quadrature(Arc::new(p), 0.0, 0.7, 1).unwrap();
        let want = (2.25 * 0.7 - 0.2) * (-0.2 * 0.7 + 0.5 * 2.25 * 0.49f64).exp();
        assert!((v - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn wide_window_for_shifted_mass() {
        // density of ξ under e^{xz} weighting is centred at λ²x = 6.75
        let p = PhiFamily::constant(1.5, 0.0).unwrap();
        let q = QuadratureH::new(Arc::new(p)).derivative(0.0, 3.0, 0).unwrap();
        let c = PhiH::new(p).value(0.0, 3.0).unwrap();
        assert!((q / c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_time_partials() {
        let p = PhiFamily::sqrt_decay(1.2, 0.1, 5.0).unwrap();
        let q = QuadratureH::new(Arc::new(p));
        let c = PhiH::new(p);
        for &t in &[0.0, 2.0, 4.9] {
            let (qt, ct) = (q.dt(t, 0.5).unwrap(), c.dt(t, 0.5).unwrap());
            assert!((qt - ct).abs() < 1e-5 * ct.abs().max(1.0), "t = {t}: {qt} vs {ct}");
            let (qt, ct) = (q.dtx(t, 0.0).unwrap(), c.dtx(t, 0.0).unwrap());
            assert!((qt - ct).abs() < 1e-5 * ct.abs().max(1.0), "t = {t}: {qt} vs {ct}");
        }
    }

    #[derive(Debug)]
    struct Shifted(PhiH);

    impl HTransform for Shifted {
        fn point(&self, t: f64, x: f64) -> Result<HPoint> {
            let p = self.0.point(t, x)?;
            Ok(HPoint { h: p.h - 0.1, ..p })
        }
        fn derivative(&self, t: f64, x: f64, k: usize) -> Result<f64> {
            Ok(self.0.derivative(t, x, k)? - if k == 0 { 0.1 } else { 0.0 })
        }
        fn dt(&self, t: f64, x: f64) -> Result<f64> {
            self.0.dt(t, x)
        }
        fn dtx(&self, t: f64, x: f64) -> Result<f64> {
            self.0.dtx(t, x)
        }
        fn is_time_invariant(&self) -> bool {
            true
        }
        fn backend(&self) -> Backend {
            Backend::ClosedPhi
        }
    }

    #[test]
    fn lemma_report_pass_and_injected_fault() {
        let xs: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.1).collect();
        let good = PhiH::new(PhiFamily::constant(0.5, -0.3).unwrap());
        assert!(check_lemma_h(&good, 0.0, &xs).passed());
        let quad = QuadratureH::new(Arc::new(Identity));
        assert!(check_lemma_h(&quad, 0.0, &xs).passed());
        let bad = check_lemma_h(&Shifted(good), 0.0, &xs);
        assert!((bad.h_at_zero - 0.9).abs() < 1e-15);
        assert!(bad.violations.iter().any(|v| v.check == LemmaHCheck::Normalization));
    }
}
