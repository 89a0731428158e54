//! The bi-tempered logistic loss and the Tsallis baseline.
//!
//! For activations `a`, labels `y` and temperatures `(t1, t2)`:
//!
//! ```text
//! yh = exp_{t2}(a - lambda_{t2}(a))         tempered softmax
//! L  = D_{F_{t1}}(y, yh)                     tempered Bregman divergence
//! dL/da_i = sum_j (yh_j - y_j) yh_j^(t2-t1) (delta_ij - escort_i)
//! ```
//!
//! where `escort = yh^t2 / sum(yh^t2)` is the gradient of `lambda_{t2}`.
//! `t1 < 1` bounds the loss, `t2 > 1` gives the softmax a heavy tail, and
//! `(1, 1)` recovers softmax cross-entropy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::divergence::bregman_unchecked;
use crate::error::{Error, Result};
use crate::normalization::{
    argmax, check_activations, normalize_with_tol, ProbabilityVector, TOL_NORM,
};
use crate::tempered::{exp_t_raw, log_t_raw, TemperaturePair};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temps: TemperaturePair,
    /// Mixing weight with the uniform label distribution, in `[0, 1)`.
    pub label_smoothing: f64,
    /// Residual tolerance passed to the normalization solver.
    pub normalization_tol: f64,
}

impl LossConfig {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        Ok(Self::from_temps(TemperaturePair::new(t1, t2)?))
    }

    pub fn from_temps(temps: TemperaturePair) -> Self {
        Self {
            temps,
            label_smoothing: 0.0,
            normalization_tol: TOL_NORM,
        }
    }

    pub fn logistic() -> Self {
        Self::from_temps(TemperaturePair::logistic())
    }

    pub fn with_label_smoothing(mut self, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Config(format!(
                "label smoothing must lie in [0, 1), got {eps}"
            )));
        }
        self.label_smoothing = eps;
        Ok(self)
    }

    pub fn t1(&self) -> f64 {
        self.temps.t1()
    }

    pub fn t2(&self) -> f64 {
        self.temps.t2()
    }
}

/// Value, predicted distribution and activation gradient of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `+inf` when a labelled class gets zero probability at `t1 = 1`.
    pub value: f64,
    pub probabilities: ProbabilityVector,
    pub gradient: Vec<f64>,
}

fn check_lengths(a: &[f64], y: &[f64]) -> Result<()> {
    if a.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} activations but {} label entries",
            a.len(),
            y.len()
        )));
    }
    Ok(())
}

fn escort(probs: &[f64], t: f64) -> Vec<f64> {
    let powered: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.powf(t) } else { 0.0 })
        .collect();
    let z: f64 = powered.iter().sum();
    powered.into_iter().map(|p| p / z).collect()
}

/// Bi-tempered value and gradient given the tempered softmax output `probs`.
fn bitempered_from_probs(y: &[f64], probs: &[f64], t1: f64, t2: f64) -> (f64, Vec<f64>) {
    let value = bregman_unchecked(y, probs, t1).max(0.0);
    let esc = escort(probs, t2);
    let weights: Vec<f64> = y
        .iter()
        .zip(probs)
        .map(|(&yj, &pj)| {
            if pj > 0.0 {
                (pj - yj) * pj.powf(t2 - t1)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let gradient = weights
        .iter()
        .zip(&esc)
        .map(|(w, e)| w - e * total)
        .collect();
    (value, gradient)
}

/// The bi-tempered logistic loss `D_{F_t1}(y, tempered_softmax(a, t2))`.
///
/// The full divergence is evaluated for every label distribution, so soft
/// labels and label smoothing need no special casing.
pub fn bitempered_loss(a: &[f64], y: &ProbabilityVector, cfg: &LossConfig) -> Result<LossOutput> {
    check_activations(a)?;
    check_lengths(a, y)?;
    let smoothed;
    let y = if cfg.label_smoothing > 0.0 {
        smoothed = y.smoothed(cfg.label_smoothing);
        &smoothed
    } else {
        y
    };
    let (t1, t2) = (cfg.t1(), cfg.t2());
    let norm = normalize_with_tol(a, t2, cfg.normalization_tol)?;
    let probs: Vec<f64> = a.iter().map(|&x| exp_t_raw(x - norm.lambda, t2)).collect();
    let (value, gradient) = bitempered_from_probs(y, &probs, t1, t2);
    Ok(LossOutput {
        value,
        probabilities: ProbabilityVector::from_vec_unchecked(probs),
        gradient,
    })
}

/// Mean loss over a batch and the gradient of that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean: f64,
    /// Row `n` is `(1/N) dL_n/da_n`.
    pub gradients: Vec<Vec<f64>>,
}

/// Empirical mean of per-row bi-tempered losses.
///
/// Rows are evaluated in parallel; the mean is summed in row order, so the
/// result does not depend on scheduling.
pub fn bitempered_loss_batch(
    activations: &[Vec<f64>],
    labels: &[ProbabilityVector],
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    if activations.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} activation rows but {} label rows",
            activations.len(),
            labels.len()
        )));
    }
    if activations.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let outputs: Vec<LossOutput> = activations
        .par_iter()
        .zip(labels.par_iter())
        .map(|(a, y)| bitempered_loss(a, y, cfg))
        .collect::<Result<_>>()?;
    let n = outputs.len() as f64;
    let mut sum = 0.0;
    for o in &outputs {
        sum += o.value;
    }
    let gradients = outputs
        .into_iter()
        .map(|o| o.gradient.into_iter().map(|g| g / n).collect())
        .collect();
    Ok(BatchLoss {
        mean: sum / n,
        gradients,
    })
}

fn tsallis_from_probs(class: usize, probs: &[f64], t1: f64, t2: f64) -> (f64, Vec<f64>) {
    let pc = probs[class];
    let value = -log_t_raw(pc, t1);
    let esc = escort(probs, t2);
    // d(-log_t1 p_c)/dp_c = -p_c^(-t1), dp_c/da_i = p_c^t2 (delta_ic - escort_i)
    let scale = -pc.powf(t2 - t1);
    let gradient = esc
        .iter()
        .enumerate()
        .map(|(i, e)| scale * (if i == class { 1.0 } else { 0.0 } - e))
        .collect();
    (value, gradient)
}

/// `-log_{t1} yh_c` with `yh = tempered_softmax(a, t2)` and value and gradient.
///
/// This Tsallis-style two-temperature loss is not proper for `t1 != 1`: it
/// drops the `P(y|x)` term inside `log_t(P_model / P)`.
pub fn tsallis_loss_output(
    a: &[f64],
    y: &ProbabilityVector,
    temps: TemperaturePair,
) -> Result<LossOutput> {
    check_activations(a)?;
    check_lengths(a, y)?;
    let class = y
        .one_hot_class()
        .ok_or_else(|| Error::domain("tsallis loss needs a one-hot label"))?;
    let (t1, t2) = (temps.t1(), temps.t2());
    let norm = normalize_with_tol(a, t2, TOL_NORM)?;
    let probs: Vec<f64> = a.iter().map(|&x| exp_t_raw(x - norm.lambda, t2)).collect();
    let (value, gradient) = tsallis_from_probs(class, &probs, t1, t2);
    Ok(LossOutput {
        value,
        probabilities: ProbabilityVector::from_vec_unchecked(probs),
        gradient,
    })
}

/// Value of the Tsallis baseline loss; see [`tsallis_loss_output`].
pub fn tsallis_loss(a: &[f64], y: &ProbabilityVector, temps: TemperaturePair) -> Result<f64> {
    tsallis_loss_output(a, y, temps).map(|o| o.value)
}

/// Settings of the conditional-risk minimization in [`properness_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperConfig {
    /// Random restarts; the restart with the lowest risk is kept.
    pub restarts: usize,
    pub iterations: usize,
    /// Initial step size. It grows by 1.2 after each step that lowers the
    /// risk and halves after each step that would raise it.
    pub step: f64,
    pub seed: u64,
    /// Gradient sup-norm below which a run counts as converged.
    pub grad_tol: f64,
}

impl Default for ProperConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            iterations: 10_000,
            step: 0.1,
            seed: 0,
            grad_tol: 1e-8,
        }
    }
}

/// Minimizer of one conditional risk.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMinimum {
    pub activations: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub risk: f64,
    /// `||probabilities - eta||_inf`.
    pub gap: f64,
    pub converged: bool,
}

/// Outcome of [`properness_gap`] for both losses.
#[derive(Debug, Clone, PartialEq)]
pub struct ProperReport {
    pub bitempered: RiskMinimum,
    pub tsallis: RiskMinimum,
}

#[derive(Clone, Copy)]
enum RiskKind {
    BiTempered,
    Tsallis,
}

/// `R(eta, a) = sum_i eta_i L(a | e_i)` and its gradient in `a`.
fn conditional_risk(kind: RiskKind, eta: &[f64], a: &[f64], t1: f64, t2: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = eta.len();
    let norm = normalize_with_tol(a, t2, TOL_NORM)?;
    let probs: Vec<f64> = a.iter().map(|&x| exp_t_raw(x - norm.lambda, t2)).collect();
    let mut risk = 0.0;
    let mut grad = vec![0.0; k];
    let mut onehot = vec![0.0; k];
    for (i, &w) in eta.iter().enumerate() {
        let (v, g) = match kind {
            RiskKind::BiTempered => {
                onehot.iter_mut().for_each(|x| *x = 0.0);
                onehot[i] = 1.0;
                bitempered_from_probs(&onehot, &probs, t1, t2)
            }
            RiskKind::Tsallis => tsallis_from_probs(i, &probs, t1, t2),
        };
        risk += w * v;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    Ok((risk, grad, probs))
}

fn minimize_risk(kind: RiskKind, eta: &[f64], temps: TemperaturePair, cfg: &ProperConfig) -> Result<RiskMinimum> {
    let k = eta.len();
    let (t1, t2) = (temps.t1(), temps.t2());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<RiskMinimum> = None;
    for _ in 0..cfg.restarts.max(1) {
        // the last activation is pinned at 0 to remove the shift degeneracy
        let mut a: Vec<f64> = (0..k)
            .map(|i| if i + 1 == k { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let mut converged = false;
        let mut step = cfg.step;
        let (mut risk, mut grad, _) = conditional_risk(kind, eta, &a, t1, t2)?;
        for _ in 0..cfg.iterations {
            let gmax = grad[..k - 1].iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax < cfg.grad_tol {
                converged = true;
                break;
            }
            let trial: Vec<f64> = a
                .iter()
                .zip(&grad)
                .enumerate()
                .map(|(i, (ai, gi))| if i + 1 == k { 0.0 } else { ai - step * gi })
                .collect();
            let accepted = match conditional_risk(kind, eta, &trial, t1, t2) {
                Ok((r, g, _)) if r.is_finite() && r <= risk => Some((r, g)),
                _ => None,
            };
            // grow the step while the risk keeps decreasing, halve it otherwise
            match accepted {
                Some((r, g)) => {
                    a = trial;
                    risk = r;
                    grad = g;
                    step *= 1.2;
                }
                None => step *= 0.5,
            }
            if step < 1e-12 {
                break;
            }
        }
        let (risk, grad, probs) = conditional_risk(kind, eta, &a, t1, t2)?;
        converged |= grad[..k - 1].iter().all(|g| g.abs() < cfg.grad_tol);
        let gap = probs
            .iter()
            .zip(eta)
            .fold(0.0f64, |m, (p, e)| m.max((p - e).abs()));
        if best.as_ref().map_or(true, |b| risk < b.risk) {
            best = Some(RiskMinimum {
                activations: a,
                probabilities: probs,
                risk,
                gap,
                converged,
            });
        }
    }
    best.ok_or_else(|| Error::Numeric("every restart diverged".into()))
}

/// Numerically minimizes the conditional risk `sum_i eta_i L(a | e_i)` for the
/// bi-tempered loss and for the Tsallis baseline, and reports how far each
/// minimizer's predicted distribution lands from `eta`.
///
/// A proper loss recovers `eta`; non-convergence is flagged in the report
/// rather than returned as an error.
pub fn properness_gap(
    eta: &ProbabilityVector,
    temps: TemperaturePair,
    cfg: &ProperConfig,
) -> Result<ProperReport> {
    let k = eta.len();
    if !(2..=5).contains(&k) {
        return Err(Error::domain(format!("properness check supports 2 <= k <= 5, got {k}")));
    }
    if eta.iter().any(|&p| p <= 0.0) {
        return Err(Error::domain("eta must lie in the interior of the simplex"));
    }
    Ok(ProperReport {
        bitempered: minimize_risk(RiskKind::BiTempered, eta, temps, cfg)?,
        tsallis: minimize_risk(RiskKind::Tsallis, eta, temps, cfg)?,
    })
}

impl RiskMinimum {
    /// Class selected by the minimizer.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.activations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalization::tempered_softmax;
    use crate::tempered::log_t;
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    /// Independent softmax cross-entropy oracle.
    fn softmax_ce(a: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let m = a.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let p: Vec<f64> = a.iter().map(|x| (x - lse).exp()).collect();
        let value = y
            .iter()
            .zip(a)
            .map(|(yi, ai)| if *yi > 0.0 { yi * (yi.ln() - (ai - lse)) } else { 0.0 })
            .sum();
        (value, p.iter().zip(y).map(|(pi, yi)| pi - yi).collect())
    }

    fn fd_gradient(f: impl Fn(&[f64]) -> f64, a: &[f64], h: f64) -> Vec<f64> {
        (0..a.len())
            .map(|i| {
                let mut ap = a.to_vec();
                let mut am = a.to_vec();
                ap[i] += h;
                am[i] -= h;
                (f(&ap) - f(&am)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn logistic_example() {
        let out = bitempered_loss(&[0.0, 0.0], &pv(&[1.0, 0.0]), &LossConfig::logistic()).unwrap();
        assert!((out.value - 2f64.ln()).abs() < 1e-15);
        assert!((out.gradient[0] + 0.5).abs() < 1e-15);
        assert!((out.gradient[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_at_target() {
        // a = log_t2(y) gives tempered_softmax(a) = y exactly (lambda = 0)
        for &(t1, t2) in &[(0.2, 4.0), (0.5, 1.5), (1.0, 1.0), (0.8, 1.2)] {
            let y = [0.6, 0.3, 0.1];
            let a: Vec<f64> = y.iter().map(|&v| log_t(v, t2).unwrap()).collect();
            let out = bitempered_loss(&a, &pv(&y), &LossConfig::new(t1, t2).unwrap()).unwrap();
            assert!(out.value < 1e-12);
            assert!(out.gradient.iter().all(|g| g.abs() < 1e-10), "{:?}", out.gradient);
        }
    }

    #[test]
    fn bounded_examples() {
        let cfg = LossConfig::new(0.2, 4.0).unwrap();
        let out = bitempered_loss(&[0.0, 0.0], &pv(&[1.0, 0.0]), &cfg).unwrap();
        // symmetric logits give yh = [1/2, 1/2]; one-hot closed form
        let expected = -log_t(0.5, 0.2).unwrap() - (1.0 - 2.0 * 0.5f64.powf(1.8)) / 1.8;
        assert!((out.value - expected).abs() < 1e-12);
        assert!(out.value <= 1.25);

        let cfg = LossConfig::new(0.2, 1.0).unwrap();
        let out = bitempered_loss(&[100.0, 0.0], &pv(&[0.0, 1.0]), &cfg).unwrap();
        assert!(out.value <= 1.25);
        let (logistic, _) = softmax_ce(&[100.0, 0.0], &[0.0, 1.0]);
        assert!((logistic - 100.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(t1, t2) in &[(0.2, 4.0), (0.5, 1.5), (0.8, 1.2), (1.0, 4.0)] {
            for _ in 0..50 {
                let k = rng.gen_range(2..7);
                let a: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let c = rng.gen_range(0..k);
                let out = bitempered_loss(&a, &ProbabilityVector::one_hot(k, c).unwrap(), &LossConfig::new(t1, t2).unwrap()).unwrap();
                let p = &out.probabilities;
                let s: f64 = p.iter().map(|v| v.powf(2.0 - t1)).sum();
                let closed = -log_t(p[c], t1).unwrap() - (1.0 - s) / (2.0 - t1);
                assert!((out.value - closed).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn infinite_loss_is_reported_not_raised() {
        let out = bitempered_loss(&[2000.0, 0.0], &pv(&[0.0, 1.0]), &LossConfig::logistic()).unwrap();
        assert_eq!(out.probabilities[1], 0.0);
        assert_eq!(out.value, f64::INFINITY);
    }

    #[test]
    fn label_smoothing() {
        let cfg = LossConfig::new(0.5, 2.0).unwrap().with_label_smoothing(0.1).unwrap();
        let a = [0.3, -1.0, 2.0];
        let y = ProbabilityVector::one_hot(3, 0).unwrap();
        let smoothed = y.smoothed(0.1);
        let direct = bitempered_loss(&a, &smoothed, &LossConfig::new(0.5, 2.0).unwrap()).unwrap();
        let via_cfg = bitempered_loss(&a, &y, &cfg).unwrap();
        assert_eq!(direct, via_cfg);
        assert!(LossConfig::logistic().with_label_smoothing(1.0).is_err());
    }

    #[test]
    fn shape_and_domain_errors() {
        let cfg = LossConfig::logistic();
        assert!(matches!(bitempered_loss(&[0.0, 0.0, 0.0], &pv(&[1.0, 0.0]), &cfg), Err(Error::Shape(_))));
        assert!(bitempered_loss(&[0.0, f64::NAN], &pv(&[1.0, 0.0]), &cfg).is_err());
        assert!(bitempered_loss_batch(&[vec![0.0, 0.0]], &[], &cfg).is_err());
        assert!(tsallis_loss(&[0.0, 0.0], &pv(&[0.5, 0.5]), TemperaturePair::logistic()).is_err());
    }

    #[test]
    fn batch_is_row_mean() {
        let cfg = LossConfig::new(0.5, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
        let labels: Vec<ProbabilityVector> = (0..8).map(|i| ProbabilityVector::one_hot(3, i % 3).unwrap()).collect();
        let batch = bitempered_loss_batch(&rows, &labels, &cfg).unwrap();
        let singles: Vec<LossOutput> = rows.iter().zip(&labels).map(|(a, y)| bitempered_loss(a, y, &cfg).unwrap()).collect();
        let mean = singles.iter().map(|o| o.value).sum::<f64>() / 8.0;
        assert!((batch.mean - mean).abs() < 1e-12);
        for (g, o) in batch.gradients.iter().zip(&singles) {
            for (x, y) in g.iter().zip(&o.gradient) {
                assert!((x - y / 8.0).abs() < 1e-15);
            }
        }
        let one = bitempered_loss_batch(&rows[..1], &labels[..1], &cfg).unwrap();
        assert_eq!(one.mean, singles[0].value);
        let twice = bitempered_loss_batch(&[rows[0].clone(), rows[0].clone()], &[labels[0].clone(), labels[0].clone()], &cfg).unwrap();
        assert!((twice.mean - singles[0].value).abs() < 1e-15);
    }

    #[test]
    fn tsallis_examples() {
        let y = pv(&[1.0, 0.0]);
        let a = [0.7, -0.4];
        let ts = tsallis_loss(&a, &y, TemperaturePair::logistic()).unwrap();
        let (ce, _) = softmax_ce(&a, &y);
        assert!((ts - ce).abs() < 1e-12);
        let v = tsallis_loss(&[0.0, 0.0], &y, TemperaturePair::new(0.5, 2.0).unwrap()).unwrap();
        assert!((v - 2.0 * (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        // yh_c = 1 exactly when every other class is clamped (t2 = 1 saturates in f64)
        let v = tsallis_loss(&[800.0, 0.0], &y, TemperaturePair::new(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn tsallis_gradient_matches_finite_differences() {
        let temps = TemperaturePair::new(0.5, 1.5).unwrap();
        let y = ProbabilityVector::one_hot(3, 1).unwrap();
        let a = [0.4, -0.3, 1.1];
        let out = tsallis_loss_output(&a, &y, temps).unwrap();
        let fd = fd_gradient(|x| tsallis_loss(x, &y, temps).unwrap(), &a, 1e-6);
        for (g, f) in out.gradient.iter().zip(fd) {
            assert!((g - f).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(t1, t2) in &[(0.2, 4.0), (0.5, 1.5), (0.8, 1.2), (1.0, 1.0)] {
            let cfg = LossConfig::new(t1, t2).unwrap();
            for case in 0..40 {
                let k = rng.gen_range(2..6);
                let a: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let y = if case % 2 == 0 {
                    ProbabilityVector::one_hot(k, rng.gen_range(0..k)).unwrap()
                } else {
                    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    pv(&raw.iter().map(|x| x / s).collect::<Vec<_>>())
                };
                let out = bitempered_loss(&a, &y, &cfg).unwrap();
                let fd = fd_gradient(|x| bitempered_loss(x, &y, &cfg).unwrap().value, &a, 1e-6);
                for (g, f) in out.gradient.iter().zip(&fd) {
                    assert!((g - f).abs() <= 1e-5 * g.abs().max(f.abs()) + 1e-8, "({t1},{t2}) {g} vs {f}");
                }
            }
        }
    }

    #[test]
    fn logistic_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let k = rng.gen_range(2..8);
            let a: Vec<f64> = (0..k).map(|_| rng.gen_range(-8.0..8.0)).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let y: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let out = bitempered_loss(&a, &pv(&y), &LossConfig::logistic()).unwrap();
            let (v, g) = softmax_ce(&a, &y);
            assert!((out.value - v).abs() < 1e-8);
            for (x, z) in out.gradient.iter().zip(g) {
                assert!((x - z).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn properness_uniform_eta() {
        let eta = ProbabilityVector::uniform(3).unwrap();
        let r = properness_gap(&eta, TemperaturePair::new(0.5, 1.5).unwrap(), &ProperConfig::default()).unwrap();
        assert!(r.bitempered.gap <= 1e-3);
        assert!(r.bitempered.activations.iter().all(|a| a.abs() < 1e-3));
        assert!(properness_gap(&pv(&[1.0, 0.0]), TemperaturePair::logistic(), &ProperConfig::default()).is_err());
    }

    #[test]
    fn properness_recovers_eta() {
        let eta = pv(&[0.7, 0.2, 0.1]);
        let r = properness_gap(&eta, TemperaturePair::new(0.5, 1.5).unwrap(), &ProperConfig::default()).unwrap();
        assert!(r.bitempered.gap <= 1e-3, "gap {}", r.bitempered.gap);
        assert_eq!(r.bitempered.predicted_class(), 0);

        let eta = pv(&[0.7, 0.3]);
        let r = properness_gap(&eta, TemperaturePair::new(0.5, 1.5).unwrap(), &ProperConfig::default()).unwrap();
        assert!(r.tsallis.gap > r.bitempered.gap);
        // the Tsallis risk is minimized at yh proportional to eta^(1/t1)
        let expected = 0.49 / 0.58;
        assert!((r.tsallis.probabilities[0] - expected).abs() < 1e-3);
    }

    #[test]
    fn bounded_over_many_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for &t1 in &[0.2, 0.5, 0.8] {
            let cfg = LossConfig::new(t1, 2.0).unwrap();
            for _ in 0..10_000 {
                let k = rng.gen_range(2..6);
                let a: Vec<f64> = (0..k).map(|_| rng.gen_range(-50.0..50.0)).collect();
                let y = ProbabilityVector::one_hot(k, rng.gen_range(0..k)).unwrap();
                let v = bitempered_loss(&a, &y, &cfg).unwrap().value;
                assert!((0.0..=1.0 / (1.0 - t1)).contains(&v));
            }
        }
    }

    #[test]
    fn bayes_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let temps = TemperaturePair::new(0.2, 4.0).unwrap();
        let cfg = ProperConfig { restarts: 2, iterations: 3000, ..ProperConfig::default() };
        for _ in 0..10 {
            let k = rng.gen_range(2..6);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let eta = pv(&raw.iter().map(|x| x / s).collect::<Vec<_>>());
            let r = properness_gap(&eta, temps, &cfg).unwrap();
            assert_eq!(r.bitempered.predicted_class(), argmax(&eta));
        }
    }

    #[test]
    fn matching_loss_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &t in &[0.5f64, 1.0, 1.5] {
            // t1 = t2 = t lies outside the robust range for t != 1, so the
            // matching loss is assembled from its parts
            let loss = |a: &[f64], y: &ProbabilityVector| -> Option<f64> {
                let p = tempered_softmax(a, t).unwrap();
                p.iter().all(|&v| v > 0.0).then(|| bregman_unchecked(y, &p, t))
            };
            let mut checked = 0;
            for _ in 0..300 {
                let k = rng.gen_range(2..5);
                let a1: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let a2: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let mid: Vec<f64> = a1.iter().zip(&a2).map(|(x, z)| 0.5 * (x + z)).collect();
                let y = ProbabilityVector::one_hot(k, rng.gen_range(0..k)).unwrap();
                // segments that touch the clamped region are outside the convex domain
                let (Some(l1), Some(l2), Some(lm)) = (loss(&a1, &y), loss(&a2, &y), loss(&mid, &y)) else {
                    continue;
                };
                checked += 1;
                assert!(lm <= 0.5 * (l1 + l2) + 1e-9, "t={t} {a1:?} {a2:?}");
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn robust_pair_is_not_convex() {
        // found by a grid search over two-class segments
        let cfg = LossConfig::new(0.2, 4.0).unwrap();
        let y = ProbabilityVector::one_hot(2, 0).unwrap();
        let l = |x: f64| bitempered_loss(&[x, 0.0], &y, &cfg).unwrap().value;
        let gap = l(-8.0) - 0.5 * (l(-20.0) + l(4.0));
        assert!(gap > 0.1, "midpoint gap {gap}");
    }

    proptest! {
        #[test]
        fn shift_invariance(
            a in prop::collection::vec(-5.0f64..5.0, 2..6),
            b in -20.0f64..20.0,
            ti in 0usize..4,
        ) {
            let (t1, t2) = [(0.2, 4.0), (0.5, 1.5), (0.8, 1.2), (1.0, 1.0)][ti];
            let cfg = LossConfig::new(t1, t2).unwrap();
            let y = ProbabilityVector::one_hot(a.len(), 0).unwrap();
            let shifted: Vec<f64> = a.iter().map(|x| x + b).collect();
            let l0 = bitempered_loss(&a, &y, &cfg).unwrap();
            let l1 = bitempered_loss(&shifted, &y, &cfg).unwrap();
            prop_assert!((l0.value - l1.value).abs() < 1e-9);
            prop_assert!(l0.gradient.iter().sum::<f64>().abs() < 1e-8);
        }

        #[test]
        fn bounded_below_unit_t1(
            a in prop::collection::vec(-100.0f64..100.0, 2..6),
            ti in 0usize..3,
            t2 in 1.0f64..4.0,
        ) {
            let t1 = [0.2, 0.5, 0.8][ti];
            let cfg = LossConfig::new(t1, t2).unwrap();
            let y = ProbabilityVector::one_hot(a.len(), a.len() - 1).unwrap();
            let v = bitempered_loss(&a, &y, &cfg).unwrap().value;
            prop_assert!(v >= 0.0 && v <= 1.0 / (1.0 - t1) + 1e-12);
        }
    }

    #[test]
    fn softmax_probabilities_agree() {
        let a = [0.2, 1.0, -0.7];
        let out = bitempered_loss(&a, &ProbabilityVector::one_hot(3, 0).unwrap(), &LossConfig::new(0.5, 2.0).unwrap()).unwrap();
        assert_eq!(out.probabilities, tempered_softmax(&a, 2.0).unwrap());
    }
}
