//! Normalization of the tempered softmax.
//!
//! For activations `a` and temperature `t` the normalizer `lambda_t(a)` is the
//! unique scalar with `sum_i exp_t(a_i - lambda) = 1`. Two solvers are
//! provided: a bracketed bisection valid for every `t >= 0`, and the
//! fixed-point iteration for `t > 1`. The bisection always stays available
//! as the reference path.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::tempered::{check_temperature, exp_t_raw, is_unit, log_t_raw, EPS_T};

/// Absolute tolerance on `|sum_i exp_t(a_i - lambda) - 1|`.
pub const TOL_NORM: f64 = 1e-10;

/// Iteration cap of the bisection solver.
pub const BISECTION_MAX_ITERS: usize = 200;

/// Relative bracket width at which bisection stops: `width < BISECTION_REL_WIDTH (1 + |lambda|)`.
///
/// For large `t` the normalizer can reach `1e5` while the partition is very
/// flat in `lambda`, so the bracket is driven down to a few ulps.
pub const BISECTION_REL_WIDTH: f64 = 1e-15;

/// Default iteration cap of the fixed-point solver.
pub const FIXED_POINT_MAX_ITERS: usize = 100;

/// `||a_new - a||_inf` below which the fixed-point iteration has converged.
pub const FIXED_POINT_STEP_TOL: f64 = 1e-12;

/// Tolerance on the sum of a [`ProbabilityVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates that every entry lies in `[0, 1]` and the entries sum to one
    /// within [`SIMPLEX_TOL`].
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        for (i, &v) in p.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::DomainAt {
                    index: i,
                    message: format!("probability {v} outside [0, 1]"),
                });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    /// The one-hot vector `e_class` of length `k`.
    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::domain(format!("class {class} out of range for k = {k}")));
        }
        let mut p = vec![0.0; k];
        p[class] = 1.0;
        Ok(Self(p))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Returns the class index if this vector is exactly one-hot.
    pub fn one_hot_class(&self) -> Option<usize> {
        let mut class = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == 1.0 && class.is_none() {
                class = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        class
    }

    /// Mixes with the uniform distribution: `(1 - eps) p + eps / k`.
    pub fn smoothed(&self, eps: f64) -> Self {
        let k = self.0.len() as f64;
        Self(self.0.iter().map(|&p| (1.0 - eps) * p + eps / k).collect())
    }

    pub(crate) fn from_vec_unchecked(p: Vec<f64>) -> Self {
        Self(p)
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `lambda_t(a)` together with solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationResult {
    pub lambda: f64,
    pub iterations: usize,
    /// `|sum_i exp_t(a_i - lambda) - 1|`.
    pub residual: f64,
}

pub(crate) fn check_activations(a: &[f64]) -> Result<()> {
    if a.len() < 2 {
        return Err(Error::domain(format!(
            "activation vector needs at least 2 entries, got {}",
            a.len()
        )));
    }
    for (i, &x) in a.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::DomainAt {
                index: i,
                message: format!("activation {x} is not finite"),
            });
        }
    }
    Ok(())
}

fn max_of(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `sum_i exp_t(a_i - lambda)`; nonincreasing in `lambda`.
#[inline]
fn partition(a: &[f64], lambda: f64, t: f64) -> f64 {
    a.iter().map(|&x| exp_t_raw(x - lambda, t)).sum()
}

/// Bracketed bisection for `lambda_t(a)`.
///
/// The bracket `[max(a), max(a) - log_t(1/k)]` has partition `>= 1` at the
/// left end (the top term is `exp_t(0) = 1`) and `<= 1` at the right end
/// (every term is at most `1/k`). Bisection stops once the bracket is
/// narrower than [`BISECTION_REL_WIDTH`]` (1 + |lambda|)` or cannot be split
/// further.
pub fn lambda_binary_search(a: &[f64], t: f64, tol: f64) -> Result<NormalizationResult> {
    check_activations(a)?;
    check_temperature(t)?;
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let k = a.len() as f64;
    let mut lo = max_of(a);
    let mut hi = lo - log_t_raw(1.0 / k, t);
    if !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::Numeric(format!("invalid bracket [{lo}, {hi}]")));
    }

    let mut iterations = 0;
    while iterations < BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if hi - lo < BISECTION_REL_WIDTH * (1.0 + mid.abs()) || mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let z = partition(a, mid, t);
        if !z.is_finite() {
            return Err(Error::Numeric(format!("partition is {z} at lambda = {mid}")));
        }
        if z > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let lambda = 0.5 * (lo + hi);
    let residual = (partition(a, lambda, t) - 1.0).abs();
    if !(residual <= tol) {
        return Err(Error::Convergence {
            iterations,
            residual,
        });
    }
    Ok(NormalizationResult {
        lambda,
        iterations,
        residual,
    })
}

/// Fixed-point iteration for `lambda_t(a)`, `t > 1`.
///
/// With `mu = max(a)` and `a0 = a - mu`, iterate
/// `a~ <- Z(a~)^(1-t) a0` where `Z(a~) = sum_i exp_t(a~_i)`, then return
/// `lambda = -log_t(1/Z) + mu`. Converged when the update moves no entry by
/// more than [`FIXED_POINT_STEP_TOL`].
pub fn lambda_fixed_point(a: &[f64], t: f64, max_iters: usize) -> Result<NormalizationResult> {
    check_activations(a)?;
    check_temperature(t)?;
    if !(t > 1.0 + EPS_T) {
        return Err(Error::Unsupported(format!(
            "fixed-point normalization requires t > 1, got {t}"
        )));
    }
    let mu = max_of(a);
    let shifted: Vec<f64> = a.iter().map(|&x| x - mu).collect();
    let mut current = shifted.clone();
    let exponent = 1.0 - t;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let z: f64 = current.iter().map(|&x| exp_t_raw(x, t)).sum();
        let scale = z.powf(exponent);
        let mut step = 0.0f64;
        for (c, &s) in current.iter_mut().zip(&shifted) {
            let next = scale * s;
            step = step.max((next - *c).abs());
            *c = next;
        }
        if !step.is_finite() {
            return Err(Error::Numeric(format!("fixed-point step is {step}")));
        }
        if step < FIXED_POINT_STEP_TOL {
            converged = true;
            break;
        }
    }

    let z: f64 = current.iter().map(|&x| exp_t_raw(x, t)).sum();
    let lambda = -log_t_raw(1.0 / z, t) + mu;
    let residual = (partition(a, lambda, t) - 1.0).abs();
    if !converged || !(residual <= TOL_NORM) {
        return Err(Error::Convergence {
            iterations,
            residual,
        });
    }
    Ok(NormalizationResult {
        lambda,
        iterations,
        residual,
    })
}

/// `log(sum_i exp(a_i))`, the exact normalizer at `t = 1`.
fn log_sum_exp(a: &[f64]) -> f64 {
    let m = max_of(a);
    m + a.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Computes `lambda_t(a)` with the default solver for `t`.
///
/// `t > 1`: fixed-point iteration, falling back to bisection if it stalls.
/// `t = 1`: log-sum-exp. Otherwise bisection.
pub fn normalize(a: &[f64], t: f64) -> Result<NormalizationResult> {
    normalize_with_tol(a, t, TOL_NORM)
}

/// [`normalize`] with a caller-chosen residual tolerance `|sum_i y_i - 1|`.
pub fn normalize_with_tol(a: &[f64], t: f64, tol: f64) -> Result<NormalizationResult> {
    check_activations(a)?;
    check_temperature(t)?;
    if is_unit(t) {
        let lambda = log_sum_exp(a);
        let residual = (partition(a, lambda, t) - 1.0).abs();
        return Ok(NormalizationResult {
            lambda,
            iterations: 0,
            residual,
        });
    }
    if t > 1.0 {
        match lambda_fixed_point(a, t, FIXED_POINT_MAX_ITERS) {
            Ok(r) if r.residual <= tol => return Ok(r),
            Ok(_) | Err(Error::Convergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    lambda_binary_search(a, t, tol)
}

/// Tempered softmax and the normalization it used.
pub fn tempered_softmax_with_lambda(
    a: &[f64],
    t: f64,
) -> Result<(ProbabilityVector, NormalizationResult)> {
    let norm = normalize(a, t)?;
    let p = a.iter().map(|&x| exp_t_raw(x - norm.lambda, t)).collect();
    Ok((ProbabilityVector::from_vec_unchecked(p), norm))
}

/// `y_i = exp_t(a_i - lambda_t(a))`.
///
/// At `t = 1` this is the standard softmax. For `t < 1` entries far below the
/// maximum are clamped to exactly zero; for `t > 1` every entry is positive
/// and decays polynomially.
pub fn tempered_softmax(a: &[f64], t: f64) -> Result<ProbabilityVector> {
    tempered_softmax_with_lambda(a, t).map(|(p, _)| p)
}

/// The t-escort distribution `p_i^t / sum_j p_j^t`.
///
/// Evaluated at `p = tempered_softmax(a, t)` this is the gradient of
/// `lambda_t` with respect to `a`. Zero entries stay zero (including `t = 0`).
pub fn escort_distribution(p: &[f64], t: f64) -> Result<ProbabilityVector> {
    check_temperature(t)?;
    let powered: Vec<f64> = p
        .iter()
        .map(|&x| if x > 0.0 { x.powf(t) } else { 0.0 })
        .collect();
    let total: f64 = powered.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!("escort normalizer is {total}")));
    }
    Ok(ProbabilityVector::from_vec_unchecked(
        powered.into_iter().map(|x| x / total).collect(),
    ))
}
