//! Seeded invariant suites run by `bitemp check`.
//!
//! Each check reports the largest error it observed and the tolerance it was
//! held to.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::{
    bregman_alternate, bregman_special, bregman_tempered, strong_convexity_bounds, SpecialCase,
};
use crate::error::{Error, Result};
use crate::loss::{bitempered_loss, properness_gap, LossConfig, ProperConfig};
use crate::network::{gradient_check, init_network, Architecture};
use crate::normalization::{
    argmax, escort_distribution, lambda_binary_search, lambda_fixed_point, normalize,
    tempered_softmax, ProbabilityVector, FIXED_POINT_MAX_ITERS, TOL_NORM,
};
use crate::tempered::TemperaturePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Normalization,
    Gradients,
    Divergences,
    Properness,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["normalization", "gradients", "divergences", "properness", "all"];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Normalization => "normalization",
            Suite::Gradients => "gradients",
            Suite::Divergences => "divergences",
            Suite::Properness => "properness",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalization" => Ok(Suite::Normalization),
            "gradients" => Ok(Suite::Gradients),
            "divergences" => Ok(Suite::Divergences),
            "properness" => Ok(Suite::Properness),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!(
                "unknown suite '{s}' (expected one of {})",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: max error {:e} (tolerance {:e}, {} cases)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.max_error,
            self.tolerance,
            self.cases
        )
    }
}

/// Activation gradient of the loss under test.
pub type GradientFn = fn(&[f64], &ProbabilityVector, &LossConfig) -> Result<Vec<f64>>;

pub fn analytic_gradient(a: &[f64], y: &ProbabilityVector, cfg: &LossConfig) -> Result<Vec<f64>> {
    bitempered_loss(a, y, cfg).map(|o| o.gradient)
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    /// Gradient checked by the `gradients` suite; swapped out in negative
    /// control tests.
    pub gradient: GradientFn,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient: analytic_gradient,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    match suite {
        Suite::Normalization => normalization_suite(opts),
        Suite::Gradients => gradients_suite(opts),
        Suite::Divergences => divergences_suite(opts),
        Suite::Properness => properness_suite(opts),
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Normalization, Suite::Gradients, Suite::Divergences, Suite::Properness] {
                all.extend(run_suite(s, opts)?);
            }
            Ok(all)
        }
    }
}

/// The robust and baseline temperature pairs of the 2-D experiment.
pub fn figure_temps() -> [TemperaturePair; 4] {
    [(0.2, 4.0), (1.0, 4.0), (0.2, 1.0), (1.0, 1.0)].map(|(a, b)| TemperaturePair::new(a, b).unwrap())
}

fn random_vec(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw = random_vec(rng, k, 0.01, 1.0);
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

struct Tracker {
    suite: &'static str,
    name: &'static str,
    tolerance: f64,
    max_error: f64,
    cases: usize,
}

impl Tracker {
    fn new(suite: &'static str, name: &'static str, tolerance: f64) -> Self {
        Self {
            suite,
            name,
            tolerance,
            max_error: 0.0,
            cases: 0,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN counts as a failure
        self.max_error = if err.is_nan() { f64::INFINITY } else { self.max_error.max(err) };
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            suite: self.suite,
            name: self.name,
            max_error: self.max_error,
            tolerance: self.tolerance,
            cases: self.cases,
        }
    }
}

fn normalization_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let s = "normalization";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut agree = Tracker::new(s, "solver_agreement", 1e-8);
    let mut resid = Tracker::new(s, "residual", 1e-8);
    for i in 0..1000 {
        let t = [1.05, 1.2, 1.5, 2.0, 4.0][i % 5];
        let k = rng.gen_range(2..=100);
        let a = random_vec(&mut rng, k, -10.0, 10.0);
        let fp = lambda_fixed_point(&a, t, FIXED_POINT_MAX_ITERS)?;
        let bs = lambda_binary_search(&a, t, TOL_NORM)?;
        agree.record((fp.lambda - bs.lambda).abs());
        resid.record(fp.residual.max(bs.residual));
    }

    let mut sums = Tracker::new(s, "sums_to_one", 1e-8);
    let mut shift = Tracker::new(s, "shift_covariance", 1e-10);
    for i in 0..300 {
        let t = [0.0, 0.5, 1.0, 1.3, 2.0, 4.0][i % 6];
        let k = rng.gen_range(2..=100);
        let a = random_vec(&mut rng, k, -10.0, 10.0);
        let p = tempered_softmax(&a, t)?;
        sums.record((p.iter().sum::<f64>() - 1.0).abs());
        let b = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + b).collect();
        let q = tempered_softmax(&shifted, t)?;
        shift.record(p.iter().zip(q.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())));
    }

    let mut grad = Tracker::new(s, "lambda_gradient_is_escort", 1e-5);
    let h = 1e-6;
    for i in 0..100 {
        let t = [0.5, 1.0, 1.5, 2.0, 4.0][i % 5];
        let k = rng.gen_range(2..8);
        let a = random_vec(&mut rng, k, -3.0, 3.0);
        let esc = escort_distribution(&tempered_softmax(&a, t)?, t)?;
        for j in 0..k {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += h;
            am[j] -= h;
            let fd = (normalize(&ap, t)?.lambda - normalize(&am, t)?.lambda) / (2.0 * h);
            grad.record((fd - esc[j]).abs());
        }
    }
    Ok(vec![agree.finish(), resid.finish(), sums.finish(), shift.finish(), grad.finish()])
}

fn gradients_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let s = "gradients";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut temps: Vec<TemperaturePair> = figure_temps().to_vec();
    temps.extend([(0.5, 1.5), (0.8, 1.2)].map(|(a, b)| TemperaturePair::new(a, b).unwrap()));

    // |g - fd| / (max(|g|, |fd|) + 1e-3) <= 1e-5 is a 1e-5 relative bound
    // with a 1e-8 absolute floor
    let mut loss_fd = Tracker::new(s, "loss_gradient_vs_finite_differences", 1e-5);
    let h = 1e-6;
    for i in 0..500 {
        let cfg = LossConfig::from_temps(temps[i % temps.len()]);
        let k = rng.gen_range(2..6);
        let a = random_vec(&mut rng, k, -5.0, 5.0);
        let y = if i % 2 == 0 {
            ProbabilityVector::one_hot(k, rng.gen_range(0..k))?
        } else {
            ProbabilityVector::new(random_simplex(&mut rng, k))?
        };
        let g = (opts.gradient)(&a, &y, &cfg)?;
        for j in 0..k {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += h;
            am[j] -= h;
            let fd = (bitempered_loss(&ap, &y, &cfg)?.value - bitempered_loss(&am, &y, &cfg)?.value) / (2.0 * h);
            loss_fd.record((g[j] - fd).abs() / (g[j].abs().max(fd.abs()) + 1e-3));
        }
    }

    let mut logistic = Tracker::new(s, "logistic_reduction", 1e-8);
    for _ in 0..100 {
        let k = rng.gen_range(2..8);
        let a = random_vec(&mut rng, k, -8.0, 8.0);
        let y = random_simplex(&mut rng, k);
        let m = a.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let ce: f64 = y.iter().zip(&a).map(|(yi, ai)| yi * (yi.ln() - (ai - lse))).sum();
        let yv = ProbabilityVector::new(y.clone())?;
        let out = bitempered_loss(&a, &yv, &LossConfig::logistic())?;
        let g = (opts.gradient)(&a, &yv, &LossConfig::logistic())?;
        logistic.record((out.value - ce).abs());
        for ((gi, ai), yi) in g.iter().zip(&a).zip(&y) {
            logistic.record((gi - ((ai - lse).exp() - yi)).abs());
        }
    }

    let mut net = Tracker::new(s, "network_gradient_vs_finite_differences", 1e-4);
    let arch = Architecture::two_layer_2d();
    for (i, t) in figure_temps().iter().enumerate() {
        for seed in 0..5u64 {
            let params = init_network(&arch, opts.seed.wrapping_add(seed * 4 + i as u64));
            let x = random_vec(&mut rng, 2, -2.0, 2.0);
            let y = ProbabilityVector::one_hot(2, rng.gen_range(0..2))?;
            let r = gradient_check(&params, &x, &y, &LossConfig::from_temps(*t), 1e-6)?;
            net.record(r.max_rel_error);
        }
    }
    Ok(vec![loss_fd.finish(), logistic.finish(), net.finish()])
}

fn divergences_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let s = "divergences";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));

    let mut special = Tracker::new(s, "special_cases", 1e-10);
    for case in SpecialCase::ALL {
        for _ in 0..100 {
            let k = rng.gen_range(1..6);
            let y = random_vec(&mut rng, k, 0.05, 3.0);
            let yh = random_vec(&mut rng, k, 0.05, 3.0);
            let closed = bregman_special(&y, &yh, case)?;
            let general = bregman_tempered(&y, &yh, case.temperature())?;
            special.record((closed - general).abs() / closed.abs().max(1.0));
        }
    }

    let mut shift = Tracker::new(s, "temperature_shift", 1e-10);
    for i in 0..300 {
        let t = [0.3, 0.5, 0.8, 1.5, 2.5][i % 5];
        let k = rng.gen_range(1..6);
        let y = random_vec(&mut rng, k, 0.05, 3.0);
        let yh = random_vec(&mut rng, k, 0.05, 3.0);
        let alt = bregman_alternate(&y, &yh, t)?;
        let next = bregman_tempered(&y, &yh, t + 1.0)?;
        shift.record((alt - next).abs() / alt.abs().max(1.0));
    }

    let mut nonneg = Tracker::new(s, "nonnegative_on_simplex", 1e-12);
    for i in 0..600 {
        let t = [0.0, 0.5, 0.8, 1.0, 1.5, 3.0][i % 6];
        let k = rng.gen_range(2..6);
        let y = random_simplex(&mut rng, k);
        let yh = random_simplex(&mut rng, k);
        nonneg.record((-bregman_tempered(&y, &yh, t)?).max(0.0));
        nonneg.record(bregman_tempered(&y, &y, t)?.abs());
    }

    let mut sandwich = Tracker::new(s, "strong_convexity_sandwich", 1e-12);
    let radius = 1.5;
    for i in 0..4000 {
        let t = [0.0, 0.3, 0.7, 0.9][i % 4];
        let k = rng.gen_range(1..6);
        let y = ball_point(&mut rng, k, t, radius);
        let yh = ball_point(&mut rng, k, t, radius);
        let d = bregman_tempered(&y, &yh, t)?;
        let (lo, hi) = strong_convexity_bounds(&y, &yh, t, radius)?;
        sandwich.record((lo - d).max(d - hi).max(0.0));
        let (p, q) = (random_simplex(&mut rng, k.max(2)), random_simplex(&mut rng, k.max(2)));
        let bound = 2.0 / ((1.0 - t) * (1.0 - t));
        sandwich.record((bregman_tempered(&p, &q, t)? - bound).max(0.0));
    }
    Ok(vec![special.finish(), shift.finish(), nonneg.finish(), sandwich.finish()])
}

/// Random nonnegative vector with `||v||_{2-t} <= radius`.
pub fn ball_point(rng: &mut ChaCha8Rng, k: usize, t: f64, radius: f64) -> Vec<f64> {
    let v = random_vec(rng, k, 0.0, 1.0);
    let p = 2.0 - t;
    let norm = v.iter().map(|x| x.powf(p)).sum::<f64>().powf(1.0 / p);
    let scale = radius * rng.gen_range(0.01..1.0) / norm.max(1e-300);
    v.iter().map(|x| x * scale).collect()
}

fn properness_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let s = "properness";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let temps = TemperaturePair::new(0.5, 1.5)?;
    let cfg = ProperConfig {
        seed: opts.seed,
        ..ProperConfig::default()
    };
    let mut gap = Tracker::new(s, "risk_minimizer_recovers_eta", 1e-3);
    let mut bayes = Tracker::new(s, "bayes_consistency", 0.0);
    let mut tsallis = Tracker::new(s, "tsallis_gap_exceeds_bitempered", 0.2);
    let mut worse = 0usize;
    let n = 10;
    for i in 0..n {
        let k = 2 + i % 3;
        let eta = unique_max_simplex(&mut rng, k);
        let r = properness_gap(&ProbabilityVector::new(eta.clone())?, temps, &cfg)?;
        gap.record(r.bitempered.gap);
        bayes.record(if r.bitempered.predicted_class() == argmax(&eta) { 0.0 } else { 1.0 });
        if r.tsallis.gap > r.bitempered.gap {
            worse += 1;
        }
    }
    // error = fraction of cases where the baseline is not worse
    tsallis.record(1.0 - worse as f64 / n as f64);
    tsallis.cases = n;
    Ok(vec![gap.finish(), bayes.finish(), tsallis.finish()])
}

/// Interior simplex point whose largest entry leads the runner-up by >= 0.05.
pub fn unique_max_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let p = random_simplex(rng, k);
        let mut sorted = p.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] >= 0.05 && sorted[k - 1] >= 0.02 {
            return p;
        }
    }
}
