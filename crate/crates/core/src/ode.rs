//! RK4 on a uniform output grid for the exposure equation Y′ = F(t, Y)
//! with F ≤ 0. Each grid interval is covered by step-doubling substeps.

use serde::Serialize;

use crate::error::{Error, Result};

/// Value Y is clamped to once a step would drive it negative.
pub const CLAMP_FLOOR: f64 = 1e-14;

/// Exposure path on an increasing time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Y > 0 at every grid time before the last.
    pub positive: bool,
    /// Some step was clamped to [`CLAMP_FLOOR`].
    pub reached_floor: bool,
    /// First time at which the m-denominator condition failed.
    pub invalid_m_at: Option<f64>,
}

impl OdeSolution {
    pub(crate) fn from_path(times: Vec<f64>, values: Vec<f64>, reached_floor: bool, invalid_m_at: Option<f64>) -> Self {
        let n = values.len();
        let positive = values[..n - 1].iter().all(|&v| v > CLAMP_FLOOR);
        Self { times, values, positive, reached_floor, invalid_m_at }
    }

    /// Zero path on a uniform grid.
    pub fn zero(horizon: f64, steps: usize) -> Self {
        let times = uniform_grid(horizon, steps);
        let values = vec![0.0; times.len()];
        Self { times, values, positive: false, reached_floor: false, invalid_m_at: None }
    }

    /// Y(0).
    pub fn eta(&self) -> f64 {
        self.values[0]
    }

    /// Y(T).
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("non-empty path")
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Linear interpolation.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }
}

/// `steps + 1` uniform points on [0, T] with exact endpoints.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| if i == steps { horizon } else { horizon * i as f64 / steps as f64 })
        .collect()
}

/// Right side evaluation: F(t, Y) and whether the m-condition held.
pub(crate) type Rhs<'a> = dyn FnMut(f64, f64) -> Result<(f64, bool)> + 'a;

struct Tracker {
    invalid_at: Option<f64>,
}

impl Tracker {
    fn eval(&mut self, f: &mut Rhs<'_>, t: f64, y: f64) -> Result<f64> {
        let (v, ok) = f(t, y)?;
        if !ok && self.invalid_at.is_none() {
            self.invalid_at = Some(t);
        }
        Ok(v)
    }
}

/// Integrates from Y(0) = `y0` over [0, T] with `steps` steps.
///
/// A stage that would make Y negative halves the substep down to
/// `1e-12·T`; past that Y is clamped to [`CLAMP_FLOOR`] and stays there,
/// since F ≤ 0 makes the floor absorbing.
pub(crate) fn rk4_forward(f: &mut Rhs<'_>, horizon: f64, y0: f64, steps: usize) -> Result<OdeSolution> {
    let times = uniform_grid(horizon, steps);
    let mut values = Vec::with_capacity(times.len());
    let mut tr = Tracker { invalid_at: None };
    let min_step = 1e-12 * horizon;
    let mut y = y0;
    let mut floored = false;
    values.push(y);
    for k in 0..steps {
        if floored || y == 0.0 {
            values.push(y);
            continue;
        }
        match advance(f, &mut tr, times[k], times[k + 1] - times[k], y, min_step)? {
            Some(next) => y = next,
            None => {
                y = CLAMP_FLOOR.min(y);
                floored = true;
            }
        }
        values.push(y);
    }
    Ok(OdeSolution::from_path(times, values, floored, tr.invalid_at))
}

/// One RK4 step; `None` if any stage goes negative.
fn rk4_step(f: &mut Rhs<'_>, tr: &mut Tracker, t: f64, h: f64, y: f64) -> Result<Option<f64>> {
    let k1 = tr.eval(f, t, y)?;
    let y2 = y + 0.5 * h * k1;
    if y2 < 0.0 {
        return Ok(None);
    }
    let k2 = tr.eval(f, t + 0.5 * h, y2)?;
    let y3 = y + 0.5 * h * k2;
    if y3 < 0.0 {
        return Ok(None);
    }
    let k3 = tr.eval(f, t + 0.5 * h, y3)?;
    let y4 = y + h * k3;
    if y4 < 0.0 {
        return Ok(None);
    }
    let k4 = tr.eval(f, t + h, y4)?;
    let next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Ok((next >= 0.0).then_some(next))
}

/// Relative local error allowed per substep.
const LOCAL_TOL: f64 = 1e-12;

/// Covers [t, t+h] (h may be negative) by step doubling, halving on
/// overshoot or error; `None` once an overshoot persists below `min_step`.
fn advance(f: &mut Rhs<'_>, tr: &mut Tracker, t: f64, h: f64, y: f64, min_step: f64) -> Result<Option<f64>> {
    let half = 0.5 * h;
    let can_split = half.abs() >= min_step;
    let full = rk4_step(f, tr, t, h, y)?;
    let fine = match rk4_step(f, tr, t, half, y)? {
        Some(mid) => rk4_step(f, tr, t + half, half, mid)?,
        None => None,
    };
    if let (Some(a), Some(b)) = (full, fine) {
        let err = (b - a).abs() / 15.0;
        if err <= LOCAL_TOL * b.abs().max(CLAMP_FLOOR) || !can_split {
            return Ok(Some(b));
        }
    } else if !can_split {
        return Ok(None);
    }
    match advance(f, tr, t, half, y, min_step)? {
        Some(mid) => advance(f, tr, t + half, half, mid, min_step),
        None => Ok(None),
    }
}

/// Integrates backward from Y(T) = `y_terminal` to t = 0.
pub(crate) fn rk4_backward(f: &mut Rhs<'_>, horizon: f64, y_terminal: f64, steps: usize) -> Result<OdeSolution> {
    let times = uniform_grid(horizon, steps);
    let mut values = vec![0.0; times.len()];
    let mut tr = Tracker { invalid_at: None };
    let min_step = 1e-12 * horizon;
    let mut y = y_terminal;
    values[steps] = y;
    for k in (0..steps).rev() {
        let t = times[k + 1];
        y = advance(f, &mut tr, t, times[k] - t, y, min_step)?
            .ok_or_else(|| Error::Numerical(format!("backward step from t = {t} left the domain")))?;
        values[k] = y;
    }
    Ok(OdeSolution::from_path(times, values, false, tr.invalid_at))
}
