//! Shared problem data and the two pointwise maps every solver uses:
//! the bracket 1 + h_x/(h√y) and its reciprocal m.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::hfun::HFunction;
use crate::model::MarketParams;

/// Exposures at or below this use the y → 0 limit of the bracket when
/// h_x(t, 0) = 0.
pub const Y_FLOOR: f64 = 1e-12;

/// Market, h-transform and CRRA exponent γ (utility x^γ/γ, log at γ = 0).
#[derive(Debug, Clone)]
pub struct Problem {
    pub market: MarketParams,
    pub h: HFunction,
    pub gamma: f64,
}

/// Value of m together with the sign condition on its denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MValue {
    pub value: f64,
    /// False when x + h_x/h (t,−γx) ≤ 0 (or 1 − γh_xx(t,0) ≤ 0 at x = 0).
    pub valid: bool,
}

impl Problem {
    pub fn new(market: MarketParams, h: HFunction, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(invalid("gamma must be finite"));
        }
        Ok(Self { market, h, gamma })
    }

    pub fn horizon(&self) -> f64 {
        self.market.horizon()
    }

    pub fn theta(&self) -> f64 {
        self.market.theta()
    }

    /// h_x(t, 0) lies in the zero band.
    pub fn hx0_is_zero(&self, hx0: f64) -> bool {
        hx0.abs() < self.h.zero_tol()
    }

    /// 1 + h_x(t,−γ√y) / (h(t,−γ√y)√y) for y > 0; the y → 0 limit
    /// 1 − γh_xx(t,0) below [`Y_FLOOR`] when h_x(t,0) = 0.
    pub fn bracket(&self, t: f64, y: f64) -> Result<f64> {
        if y <= Y_FLOOR {
            let p0 = self.h.point(t, 0.0)?;
            if self.hx0_is_zero(p0.hx) {
                return Ok(1.0 - self.gamma * p0.hxx);
            }
            if y <= 0.0 {
                return Ok(p0.hx.signum() * f64::INFINITY);
            }
        }
        let z = y.sqrt();
        Ok(1.0 + self.h.log_dx(t, -self.gamma * z)? / z)
    }

    /// m(t, x) = x / (x + h_x/h) at (t, −γx), extended to x = 0.
    pub fn m(&self, t: f64, x: f64) -> Result<MValue> {
        if x <= 0.0 {
            let p0 = self.h.point(t, 0.0)?;
            if self.hx0_is_zero(p0.hx) {
                let d = 1.0 - self.gamma * p0.hxx;
                return Ok(MValue { value: if d > 0.0 { 1.0 / d } else { 0.0 }, valid: d > 0.0 });
            }
            return Ok(MValue { value: 0.0, valid: p0.hx > 0.0 });
        }
        let den = x + self.h.log_dx(t, -self.gamma * x)?;
        Ok(MValue { value: x / den, valid: den > 0.0 })
    }
}
