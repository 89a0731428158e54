//! Tempered logarithm and exponential.
//!
//! `log_t(x) = (x^(1-t) - 1) / (1 - t)` and its inverse
//! `exp_t(x) = [1 + (1-t) x]_+^(1/(1-t))`. Both reduce to the natural
//! log/exp as `t -> 1`. For `0 <= t < 1` the logarithm is bounded below by
//! `-1/(1-t)` and the exponential is clamped to zero below that point; for
//! `t > 1` the exponential has a polynomial (heavy) left tail.
//!
//! The power is evaluated as `expm1((1-t) ln x)` / `ln_1p((1-t) x)`, which
//! stays accurate through the removable singularity at `t = 1`. Inside
//! `|1 - t| < EPS_T` the natural functions are used directly.

use crate::error::{Error, Result};

/// Threshold on `|1 - t|` below which the natural log/exp branch is taken.
pub const EPS_T: f64 = 1e-7;

/// Returns true when `t` is treated as the `t = 1` (natural) case.
#[inline]
pub fn is_unit(t: f64) -> bool {
    (1.0 - t).abs() < EPS_T
}

/// The divergence and transfer temperatures of the bi-tempered loss.
///
/// `t1` controls the tail of the divergence (bounded for `t1 < 1`), `t2`
/// the tail of the tempered softmax (heavy for `t2 > 1`). The accepted range
/// is `0 <= t1 <= 1 <= t2`; `(1, 1)` is the logistic loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperaturePair {
    t1: f64,
    t2: f64,
}

impl TemperaturePair {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !t1.is_finite() || !t2.is_finite() {
            return Err(Error::Config(format!(
                "temperatures must be finite (t1={t1}, t2={t2})"
            )));
        }
        if !(0.0..=1.0).contains(&t1) || t2 < 1.0 {
            return Err(Error::Config(format!(
                "temperatures must satisfy 0 <= t1 <= 1 <= t2 (t1={t1}, t2={t2})"
            )));
        }
        Ok(Self { t1, t2 })
    }

    /// The `(1, 1)` pair, i.e. softmax with cross-entropy.
    pub fn logistic() -> Self {
        Self { t1: 1.0, t2: 1.0 }
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn is_logistic(&self) -> bool {
        is_unit(self.t1) && is_unit(self.t2)
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!(
            "temperature must be finite and >= 0, got {t}"
        )));
    }
    Ok(())
}

/// `log_t` for any real `t` without argument validation.
///
/// `x = 0` yields `-1/(1-t)` for `t < 1` and `-inf` otherwise. Used by the
/// divergence code, which needs `log_{t-1}` with `t - 1 < 0`.
#[inline]
pub(crate) fn log_t_raw(x: f64, t: f64) -> f64 {
    if is_unit(t) {
        return x.ln();
    }
    let one_minus_t = 1.0 - t;
    (one_minus_t * x.ln()).exp_m1() / one_minus_t
}

/// `exp_t` without argument validation.
///
/// For `t < 1` the clamped region returns exactly 0. For `t > 1` the
/// function has a pole at `x = 1/(t-1)`; at and beyond it `+inf` is returned.
#[inline]
pub(crate) fn exp_t_raw(x: f64, t: f64) -> f64 {
    if is_unit(t) {
        return x.exp();
    }
    let one_minus_t = 1.0 - t;
    let z = one_minus_t * x;
    if z <= -1.0 {
        return if one_minus_t > 0.0 { 0.0 } else { f64::INFINITY };
    }
    (z.ln_1p() / one_minus_t).exp()
}

/// Tempered logarithm.
///
/// `x = 0` is accepted only for `t < 1`, where it returns the lower bound
/// `-1/(1-t)`.
pub fn log_t(x: f64, t: f64) -> Result<f64> {
    check_temperature(t)?;
    if !x.is_finite() {
        return Err(Error::domain(format!("log_t argument must be finite, got {x}")));
    }
    if x < 0.0 {
        return Err(Error::domain(format!("log_t argument must be >= 0, got {x}")));
    }
    if x == 0.0 {
        if t < 1.0 && !is_unit(t) {
            return Ok(-1.0 / (1.0 - t));
        }
        return Err(Error::domain(format!("log_t(0) is -inf for t = {t} >= 1")));
    }
    Ok(log_t_raw(x, t))
}

/// Tempered exponential.
pub fn exp_t(x: f64, t: f64) -> Result<f64> {
    check_temperature(t)?;
    if !x.is_finite() {
        return Err(Error::domain(format!("exp_t argument must be finite, got {x}")));
    }
    Ok(exp_t_raw(x, t))
}

/// Elementwise [`log_t`]; errors carry the offending index.
pub fn log_t_vec(v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    v.iter()
        .enumerate()
        .map(|(i, &x)| log_t(x, t).map_err(|e| Error::at(i, e)))
        .collect()
}

/// Elementwise [`exp_t`]; errors carry the offending index.
pub fn exp_t_vec(v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    v.iter()
        .enumerate()
        .map(|(i, &x)| exp_t(x, t).map_err(|e| Error::at(i, e)))
        .collect()
}
