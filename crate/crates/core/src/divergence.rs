//! Tempered Bregman divergences.
//!
//! The generator `F_t(y) = sum_i (y_i log_t y_i + (1 - y_i^(2-t)) / (2-t))`
//! has gradient `log_t y`, and its Bregman divergence
//!
//! ```text
//! D_t(y, yh) = sum_i y_i (log_t y_i - log_t yh_i) - (y_i^(2-t) - yh_i^(2-t)) / (2-t)
//! ```
//!
//! is the beta-divergence with `beta = 2 - t`. It covers the squared
//! Euclidean distance (`t = 0`), KL (`t = 1`) and Itakura-Saito (`t = 2`)
//! among others; see [`SpecialCase`].
//!
//! The power difference is evaluated as `log_{t-1} y - log_{t-1} yh`, which is
//! the same quantity written through the tempered log and has no removable
//! singularity at `t = 2` (nor at `t = 1` for the first term).
//!
//! At `t = 1` the generator differs from `sum_i (y_i ln y_i - y_i)` by the
//! constant `k`; Bregman divergences ignore affine terms, so either form
//! gives the same divergence.

use crate::error::{Error, Result};
use crate::tempered::{check_temperature, exp_t_raw, is_unit, log_t_raw, EPS_T};

fn check_nonneg(v: &[f64], name: &str) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::DomainAt {
                index: i,
                message: format!("{name} entry {x} must be finite and >= 0"),
            });
        }
    }
    Ok(())
}

fn check_positive(v: &[f64], name: &str) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() || x <= 0.0 {
            return Err(Error::DomainAt {
                index: i,
                message: format!("{name} entry {x} must be finite and > 0"),
            });
        }
    }
    Ok(())
}

fn check_same_len(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Shape("empty vectors".into()));
    }
    Ok(())
}

/// The convex generator `F_t` on the nonnegative orthant.
///
/// Uses `0 log_t 0 = 0`. `t = 2` is rejected because of the `1/(2-t)`
/// coefficient; for `t > 2` every entry must be positive.
pub fn convex_generator(y: &[f64], t: f64) -> Result<f64> {
    check_temperature(t)?;
    if (t - 2.0).abs() < EPS_T {
        return Err(Error::Unsupported("F_t is undefined at t = 2".into()));
    }
    check_nonneg(y, "y")?;
    if t > 2.0 {
        check_positive(y, "y")?;
    }
    Ok(y.iter().map(|&v| generator_term(v, t)).sum())
}

#[inline]
fn generator_term(y: f64, t: f64) -> f64 {
    let entropy = if y > 0.0 { y * log_t_raw(y, t) } else { 0.0 };
    // (1 - y^(2-t)) / (2-t) == -log_{t-1}(y)
    entropy - log_t_raw(y, t - 1.0)
}

/// Convex conjugate of the unconstrained generator, `F_t*(a)`.
///
/// Its gradient is `exp_t(a)`, so `F_t*(a) = sum_i (exp_t(a_i) a_i - F_t(exp_t(a_i)))`.
/// For `t < 1` the identity `log_t(exp_t(a)) = a` needs `a_i >= -1/(1-t)`.
pub fn dual_generator(a: &[f64], t: f64) -> Result<f64> {
    check_temperature(t)?;
    if (t - 2.0).abs() < EPS_T {
        return Err(Error::Unsupported("F_t* is undefined at t = 2".into()));
    }
    let mut total = 0.0;
    for (i, &x) in a.iter().enumerate() {
        let y = exp_t_raw(x, t);
        if !y.is_finite() || (t > 2.0 && y <= 0.0) {
            return Err(Error::DomainAt {
                index: i,
                message: format!("exp_t({x}) = {y} is outside the generator domain"),
            });
        }
        total += y * x - generator_term(y, t);
    }
    Ok(total)
}

/// Unvalidated tempered Bregman divergence.
///
/// Returns `+inf` when some `y_i > 0` meets `yhat_i = 0` at `t >= 1`.
pub(crate) fn bregman_unchecked(y: &[f64], yhat: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in y.iter().zip(yhat) {
        let cross = if a > 0.0 {
            a * (log_t_raw(a, t) - log_t_raw(b, t))
        } else {
            0.0
        };
        total += cross - (log_t_raw(a, t - 1.0) - log_t_raw(b, t - 1.0));
    }
    total
}

/// Tempered Bregman divergence `D_{F_t}(y, yhat)`.
///
/// Requires `yhat > 0` for `t >= 1` and additionally `y > 0` for `t >= 2`.
/// Tiny negative values from rounding are clamped to zero.
pub fn bregman_tempered(y: &[f64], yhat: &[f64], t: f64) -> Result<f64> {
    check_temperature(t)?;
    check_same_len(y, yhat)?;
    check_nonneg(y, "y")?;
    check_nonneg(yhat, "yhat")?;
    if t >= 1.0 || is_unit(t) {
        check_positive(yhat, "yhat")?;
    }
    if t >= 2.0 - EPS_T {
        check_positive(y, "y")?;
    }
    let d = bregman_unchecked(y, yhat, t);
    if !d.is_finite() {
        return Err(Error::Numeric(format!("divergence evaluated to {d}")));
    }
    Ok(d.max(0.0))
}

/// Named rows of the special-case table, each a closed form of
/// [`bregman_tempered`] at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpecialCase {
    /// `t = 0`: `1/2 ||y - yh||^2`.
    Euclidean,
    /// `t = 1/2`: `sum 4/3 y^(3/2) - 2 y sqrt(yh) + 2/3 yh^(3/2)`.
    THalf,
    /// `t = 1`: `sum y ln(y/yh) - y + yh`.
    Kl,
    /// `t = 3/2`: `2 sum (sqrt y - sqrt yh)^2 / sqrt yh`.
    SquaredXiRoots,
    /// `t = 2`: `sum y/yh - ln(y/yh) - 1`.
    ItakuraSaito,
    /// `t = 3`: `1/2 sum 1/y - 2/yh + y/yh^2`.
    Inverse,
}

impl SpecialCase {
    pub const ALL: [SpecialCase; 6] = [
        SpecialCase::Euclidean,
        SpecialCase::THalf,
        SpecialCase::Kl,
        SpecialCase::SquaredXiRoots,
        SpecialCase::ItakuraSaito,
        SpecialCase::Inverse,
    ];

    /// The temperature at which this row coincides with the general form.
    pub fn temperature(self) -> f64 {
        match self {
            SpecialCase::Euclidean => 0.0,
            SpecialCase::THalf => 0.5,
            SpecialCase::Kl => 1.0,
            SpecialCase::SquaredXiRoots => 1.5,
            SpecialCase::ItakuraSaito => 2.0,
            SpecialCase::Inverse => 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecialCase::Euclidean => "euclidean",
            SpecialCase::THalf => "t_half",
            SpecialCase::Kl => "kl",
            SpecialCase::SquaredXiRoots => "squared_xi_roots",
            SpecialCase::ItakuraSaito => "itakura_saito",
            SpecialCase::Inverse => "inverse",
        }
    }
}

impl std::str::FromStr for SpecialCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpecialCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown divergence case '{s}'")))
    }
}

/// Closed-form evaluation of one special-case row.
pub fn bregman_special(y: &[f64], yhat: &[f64], case: SpecialCase) -> Result<f64> {
    check_same_len(y, yhat)?;
    check_nonneg(y, "y")?;
    check_nonneg(yhat, "yhat")?;
    let t = case.temperature();
    if t >= 1.0 {
        check_positive(yhat, "yhat")?;
    }
    if t >= 2.0 {
        check_positive(y, "y")?;
    }
    let pairs = y.iter().zip(yhat);
    let d = match case {
        SpecialCase::Euclidean => 0.5 * pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        SpecialCase::THalf => pairs
            .map(|(&a, &b)| {
                4.0 / 3.0 * a.powf(1.5) - 2.0 * a * b.sqrt() + 2.0 / 3.0 * b.powf(1.5)
            })
            .sum(),
        SpecialCase::Kl => pairs
            .map(|(&a, &b)| {
                let xlogx = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
                xlogx - a + b
            })
            .sum(),
        SpecialCase::SquaredXiRoots => {
            2.0 * pairs
                .map(|(&a, &b)| {
                    let d = a.sqrt() - b.sqrt();
                    d * d / b.sqrt()
                })
                .sum::<f64>()
        }
        SpecialCase::ItakuraSaito => pairs.map(|(&a, &b)| a / b - (a / b).ln() - 1.0).sum(),
        SpecialCase::Inverse => {
            0.5 * pairs
                .map(|(&a, &b)| 1.0 / a - 2.0 / b + a / (b * b))
                .sum::<f64>()
        }
    };
    Ok(d)
}

/// Divergence of the alternate generator
/// `F~_t(y) = -(1/t) sum_i (log_t y_i - y_i + 1)`:
///
/// `(1/t) sum_i (log_t yh_i - log_t y_i + (y_i - yh_i) yh_i^(-t))`,
///
/// which equals `bregman_tempered(y, yhat, t + 1)`.
pub fn bregman_alternate(y: &[f64], yhat: &[f64], t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("temperature must be finite, got {t}")));
    }
    if t.abs() < EPS_T {
        return Err(Error::Unsupported(
            "alternate generator is undefined at t = 0".into(),
        ));
    }
    check_same_len(y, yhat)?;
    check_positive(y, "y")?;
    check_positive(yhat, "yhat")?;
    let sum: f64 = y
        .iter()
        .zip(yhat)
        .map(|(&a, &b)| log_t_raw(b, t) - log_t_raw(a, t) + (a - b) * b.powf(-t))
        .sum();
    Ok(sum / t)
}

/// Tsallis divergence over the simplex, `-sum_i y_i log_t(yh_i / y_i)`.
///
/// Terms with `y_i = 0` vanish. This is not a Bregman divergence of `F_t`;
/// at `t = 1` it is KL.
pub fn tsallis_divergence(y: &[f64], yhat: &[f64], t: f64) -> Result<f64> {
    check_temperature(t)?;
    check_same_len(y, yhat)?;
    check_nonneg(y, "y")?;
    check_nonneg(yhat, "yhat")?;
    let mut total = 0.0;
    for (i, (&a, &b)) in y.iter().zip(yhat).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 && (t >= 1.0 || is_unit(t)) {
            return Err(Error::DomainAt {
                index: i,
                message: "yhat must be > 0 where y > 0 for t >= 1".into(),
            });
        }
        total -= a * log_t_raw(b / a, t);
    }
    Ok(total.max(0.0))
}

/// Lower and upper bounds on `D_{F_t}(y, yhat)` for `0 <= t < 1` when both
/// points lie in the `(2-t)`-norm ball of radius `radius`:
///
/// ```text
/// ||y - yh||_{2-t}^2 / (2 B^t)  <=  D  <=  B^t / (2 (1-t)^2) ||y^(1-t) - yh^(1-t)||_{(2-t)/(1-t)}^2
/// ```
///
/// They follow from `B^-t`-strong convexity of `F_t` on that ball.
pub fn strong_convexity_bounds(
    y: &[f64],
    yhat: &[f64],
    t: f64,
    radius: f64,
) -> Result<(f64, f64)> {
    check_temperature(t)?;
    if !(t < 1.0) || is_unit(t) {
        return Err(Error::Unsupported(format!("bounds need 0 <= t < 1, got {t}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::domain(format!("radius must be positive, got {radius}")));
    }
    check_same_len(y, yhat)?;
    check_nonneg(y, "y")?;
    check_nonneg(yhat, "yhat")?;
    let p = 2.0 - t;
    let diff: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    let lower = lp_norm(&diff, p).powi(2) / (2.0 * radius.powf(t));
    let q = (2.0 - t) / (1.0 - t);
    let root_diff: Vec<f64> = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| a.powf(1.0 - t) - b.powf(1.0 - t))
        .collect();
    let upper = radius.powf(t) / (2.0 * (1.0 - t).powi(2)) * lp_norm(&root_diff, q).powi(2);
    Ok((lower, upper))
}

/// `||v||_p = (sum |v_i|^p)^(1/p)`.
pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}
