//! Synthetic two-dimensional data, label noise, and the loss comparison.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{parse_flat, parse_list, parse_value};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::network::{
    accuracy, init_network, predict_logits, train_with, Architecture, EpochStats, NetworkParams,
    TrainConfig,
};
use crate::normalization::tempered_softmax;
use crate::tempered::TemperaturePair;

/// Radius of the true boundary of [`Shape::TwoArcs`].
pub const ARC_RADIUS: f64 = 1.0;
/// Radial width of each arc band.
pub const ARC_WIDTH: f64 = 0.5;
/// Blob centers sit at `(-BLOB_OFFSET, 0)` and `(BLOB_OFFSET, 0)`.
pub const BLOB_OFFSET: f64 = 2.0;
pub const BLOB_STD: f64 = 0.5;

/// Generating distribution of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Two isotropic Gaussians separated along the x axis; the true boundary
    /// is the y axis.
    TwoBlobs,
    /// Two nested half-ring bands over angles `[0, pi]`: class 0 inside the
    /// circle of radius [`ARC_RADIUS`], class 1 outside it.
    TwoArcs,
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::TwoBlobs => "two_blobs",
            Shape::TwoArcs => "two_arcs",
        }
    }

    /// Signed distance to the true boundary, positive on the class 1 side.
    pub fn margin(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::TwoBlobs => p[0],
            Shape::TwoArcs => p[0].hypot(p[1]) - ARC_RADIUS,
        }
    }

    fn sample(&self, class: usize, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            Shape::TwoBlobs => {
                let cx = if class == 0 { -BLOB_OFFSET } else { BLOB_OFFSET };
                [cx + BLOB_STD * gaussian(rng), BLOB_STD * gaussian(rng)]
            }
            Shape::TwoArcs => {
                let (r0, r1) = if class == 0 {
                    (ARC_RADIUS - ARC_WIDTH, ARC_RADIUS)
                } else {
                    (ARC_RADIUS, ARC_RADIUS + ARC_WIDTH)
                };
                // uniform over the band's area
                let r = (r0 * r0 + rng.gen::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
                let theta = rng.gen::<f64>() * std::f64::consts::PI;
                [r * theta.cos(), r * theta.sin()]
            }
        }
    }

    /// A rectangle that covers the support with some padding.
    pub fn default_bounds(&self) -> Bounds {
        match self {
            Shape::TwoBlobs => Bounds::new(-4.0, 4.0, -2.5, 2.5).unwrap(),
            Shape::TwoArcs => Bounds::new(-1.75, 1.75, -0.25, 1.75).unwrap(),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_blobs" => Ok(Shape::TwoBlobs),
            "two_arcs" => Ok(Shape::TwoArcs),
            _ => Err(Error::Config(format!("unknown dataset shape '{s}'"))),
        }
    }
}

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Labelled points in the plane with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.to_vec()).collect()
    }

    pub fn margins(&self, shape: Shape) -> Vec<f64> {
        self.points.iter().map(|&p| shape.margin(p)).collect()
    }

    /// Positions where the labels of two datasets over the same points differ.
    pub fn label_mismatches(&self, other: &Dataset2D) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// `n` points with alternating classes (so the counts differ by at most one),
/// deterministic in `seed`.
pub fn generate_dataset(n: usize, seed: u64, shape: Shape) -> Result<Dataset2D> {
    generate_split(n, seed, shape, Split::Train)
}

pub fn generate_split(n: usize, seed: u64, shape: Shape, split: Split) -> Result<Dataset2D> {
    if n < 4 {
        return Err(Error::Config(format!("dataset needs at least 4 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let points = labels.iter().map(|&c| shape.sample(c, &mut rng)).collect();
    Ok(Dataset2D {
        points,
        labels,
        split,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    /// Flip the points closest to the true boundary.
    SmallMargin,
    /// Flip the points farthest from the true boundary.
    LargeMargin,
    Random,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::SmallMargin => "small_margin",
            NoiseKind::LargeMargin => "large_margin",
            NoiseKind::Random => "random",
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "small_margin" => Ok(NoiseKind::SmallMargin),
            "large_margin" => Ok(NoiseKind::LargeMargin),
            "random" => Ok(NoiseKind::Random),
            _ => Err(Error::Config(format!("unknown noise kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "noise fraction must lie in [0, 1], got {fraction}"
            )));
        }
        Ok(Self { kind, fraction, seed })
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            fraction: 0.0,
            seed: 0,
        }
    }
}

/// `round(fraction * n)` with halves rounded away from zero.
pub fn flip_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Returns a copy of `d` with exactly `flip_count(fraction, N)` labels
/// flipped. Margin-based kinds rank points by `|margin|` and break ties by
/// ascending index.
pub fn inject_noise(d: &Dataset2D, spec: &NoiseSpec, margins: Option<&[f64]>) -> Result<Dataset2D> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::Config(format!(
            "noise fraction must lie in [0, 1], got {}",
            spec.fraction
        )));
    }
    let n = d.len();
    let m = if spec.kind == NoiseKind::None {
        0
    } else {
        flip_count(spec.fraction, n)
    };
    let chosen: Vec<usize> = match spec.kind {
        NoiseKind::None => Vec::new(),
        NoiseKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            sample(&mut rng, n, m).into_vec()
        }
        NoiseKind::SmallMargin | NoiseKind::LargeMargin => {
            let margins = margins.ok_or_else(|| {
                Error::Config(format!("{} noise needs a margin oracle", spec.kind.name()))
            })?;
            if margins.len() != n {
                return Err(Error::Shape(format!(
                    "{} margins for {n} points",
                    margins.len()
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            let small = spec.kind == NoiseKind::SmallMargin;
            // stable sort keeps ascending index among equal margins
            order.sort_by(|&a, &b| {
                let (x, y) = (margins[a].abs(), margins[b].abs());
                if small {
                    x.total_cmp(&y)
                } else {
                    y.total_cmp(&x)
                }
            });
            order.truncate(m);
            order
        }
    };
    let mut noisy = d.clone();
    for i in chosen {
        noisy.labels[i] = 1 - noisy.labels[i];
    }
    Ok(noisy)
}

/// An axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let ok = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite())
            && x_min < x_max
            && y_min < y_max;
        if !ok {
            return Err(Error::Config(format!(
                "degenerate rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }
}

/// Class-1 probabilities on a uniform `resolution x resolution` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bounds: Bounds,
    pub resolution: usize,
    /// Row-major: row `j` is `y_j`, column `i` is `x_i`.
    pub values: Vec<f64>,
}

impl Grid {
    fn coord(lo: f64, hi: f64, i: usize, r: usize) -> f64 {
        lo + (hi - lo) * i as f64 / (r - 1) as f64
    }

    /// `(x, y, p1)` for every cell in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let r = self.resolution;
        let b = self.bounds;
        self.values.iter().enumerate().map(move |(idx, &p)| {
            let (j, i) = (idx / r, idx % r);
            (
                Self::coord(b.x_min, b.x_max, i, r),
                Self::coord(b.y_min, b.y_max, j, r),
                p,
            )
        })
    }
}

pub fn boundary_grid(
    params: &NetworkParams,
    cfg: &LossConfig,
    bounds: Bounds,
    resolution: usize,
) -> Result<Grid> {
    if resolution < 2 {
        return Err(Error::Config(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let bounds = Bounds::new(bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max)?;
    let r = resolution;
    let mut values = Vec::with_capacity(r * r);
    for j in 0..r {
        let y = Grid::coord(bounds.y_min, bounds.y_max, j, r);
        for i in 0..r {
            let x = Grid::coord(bounds.x_min, bounds.x_max, i, r);
            let logits = predict_logits(params, &[x, y])?;
            values.push(tempered_softmax(&logits, cfg.t2())?[1]);
        }
    }
    Ok(Grid {
        bounds,
        resolution,
        values,
    })
}

/// Full description of a comparison run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub shape: Shape,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_kind: NoiseKind,
    pub noise_fraction: f64,
    pub temps: Vec<TemperaturePair>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
    /// Validation accuracy is checked every this many epochs for model selection.
    pub eval_every: usize,
    pub label_smoothing: f64,
    pub seeds: usize,
    pub master_seed: u64,
    pub grid_resolution: usize,
    /// `None` uses the shape's default rectangle.
    pub grid_bounds: Option<Bounds>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            shape: Shape::TwoArcs,
            n_train: 1000,
            n_val: 200,
            n_test: 1000,
            noise_kind: NoiseKind::None,
            noise_fraction: 0.0,
            temps: default_temps(),
            hidden: vec![10, 5],
            epochs: 1000,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: Some(50),
            eval_every: 10,
            label_smoothing: 0.0,
            seeds: 10,
            master_seed: 0,
            grid_resolution: 50,
            grid_bounds: None,
        }
    }
}

/// `(0.2, 4)`, `(1, 4)`, `(0.2, 1)` and the logistic baseline `(1, 1)`.
pub fn default_temps() -> Vec<TemperaturePair> {
    [(0.2, 4.0), (1.0, 4.0), (0.2, 1.0), (1.0, 1.0)]
        .iter()
        .map(|&(a, b)| TemperaturePair::new(a, b).unwrap())
        .collect()
}

/// Identifier of an arm in file names and reports, e.g. `t0.2-4`.
pub fn arm_id(t: &TemperaturePair) -> String {
    format!("t{}-{}", t.t1(), t.t2())
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses flat `key = value` text on top of the defaults.
    ///
    /// Keys: `dataset.shape`, `dataset.n_train`, `dataset.n_val`,
    /// `dataset.n_test`, `noise.kind`, `noise.fraction`, `temps` (a list of
    /// `t1:t2` pairs), `network.hidden`, `train.epochs`,
    /// `train.learning_rate`, `train.momentum`, `train.batch_size` (0 for
    /// full batch), `train.eval_every`, `train.label_smoothing`,
    /// `experiment.seeds`, `experiment.master_seed`, `grid.resolution`,
    /// `grid.bounds` (`x_min,x_max,y_min,y_max` or `auto`).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_flat(text)? {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            match k {
                "dataset.shape" => cfg.shape = v.parse()?,
                "dataset.n_train" => cfg.n_train = parse_value(k, v)?,
                "dataset.n_val" => cfg.n_val = parse_value(k, v)?,
                "dataset.n_test" => cfg.n_test = parse_value(k, v)?,
                "noise.kind" => cfg.noise_kind = v.parse()?,
                "noise.fraction" => cfg.noise_fraction = parse_value(k, v)?,
                "temps" => cfg.temps = parse_temps(k, v)?,
                "network.hidden" => {
                    cfg.hidden = if v.is_empty() { Vec::new() } else { parse_list(k, v)? }
                }
                "train.epochs" => cfg.epochs = parse_value(k, v)?,
                "train.learning_rate" => cfg.learning_rate = parse_value(k, v)?,
                "train.momentum" => cfg.momentum = parse_value(k, v)?,
                "train.batch_size" => {
                    let b: usize = parse_value(k, v)?;
                    cfg.batch_size = (b > 0).then_some(b);
                }
                "train.eval_every" => cfg.eval_every = parse_value(k, v)?,
                "train.label_smoothing" => cfg.label_smoothing = parse_value(k, v)?,
                "experiment.seeds" => cfg.seeds = parse_value(k, v)?,
                "experiment.master_seed" => cfg.master_seed = parse_value(k, v)?,
                "grid.resolution" => cfg.grid_resolution = parse_value(k, v)?,
                "grid.bounds" => {
                    cfg.grid_bounds = if v == "auto" {
                        None
                    } else {
                        let b: Vec<f64> = parse_list(k, v)?;
                        if b.len() != 4 {
                            return Err(Error::Config(format!(
                                "key 'grid.bounds' needs 4 values, got {}",
                                b.len()
                            )));
                        }
                        Some(Bounds::new(b[0], b[1], b[2], b[3]).map_err(|e| {
                            Error::Config(format!("key 'grid.bounds': {e}"))
                        })?)
                    }
                }
                _ => return Err(Error::Config(format!("unknown key '{k}' on line {}", e.line))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("key '{key}': {msg}")));
        for (key, n) in [
            ("dataset.n_train", self.n_train),
            ("dataset.n_val", self.n_val),
            ("dataset.n_test", self.n_test),
        ] {
            if n < 4 {
                return fail(key, format!("needs at least 4 points, got {n}"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return fail("noise.fraction", format!("must lie in [0, 1], got {}", self.noise_fraction));
        }
        if self.temps.is_empty() {
            return fail("temps", "needs at least one pair".into());
        }
        if self.hidden.contains(&0) {
            return fail("network.hidden", "layer widths must be positive".into());
        }
        if self.seeds == 0 {
            return fail("experiment.seeds", "must be positive".into());
        }
        if self.eval_every == 0 {
            return fail("train.eval_every", "must be positive".into());
        }
        if self.grid_resolution < 2 {
            return fail("grid.resolution", "must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("train.label_smoothing", format!("must lie in [0, 1), got {}", self.label_smoothing));
        }
        let probe = TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: 0,
            loss: LossConfig::logistic(),
        };
        probe.validate().or_else(|e| {
            let key = if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                "train.learning_rate"
            } else if !(0.0..1.0).contains(&self.momentum) {
                "train.momentum"
            } else {
                "train.batch_size"
            };
            fail(key, e.to_string())
        })
    }

    /// Every effective setting, one `key = value` per line, in a form
    /// [`ExperimentConfig::from_text`] reads back.
    pub fn to_resolved_string(&self) -> String {
        let temps: Vec<String> = self
            .temps
            .iter()
            .map(|t| format!("{}:{}", t.t1(), t.t2()))
            .collect();
        let bounds = self.bounds();
        let lines = [
            ("dataset.shape", self.shape.name().to_string()),
            ("dataset.n_train", self.n_train.to_string()),
            ("dataset.n_val", self.n_val.to_string()),
            ("dataset.n_test", self.n_test.to_string()),
            ("noise.kind", self.noise_kind.name().to_string()),
            ("noise.fraction", self.noise_fraction.to_string()),
            ("temps", temps.join(",")),
            ("network.hidden", fmt_list(&self.hidden)),
            ("train.epochs", self.epochs.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.momentum", self.momentum.to_string()),
            ("train.batch_size", self.batch_size.unwrap_or(0).to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.label_smoothing", self.label_smoothing.to_string()),
            ("experiment.seeds", self.seeds.to_string()),
            ("experiment.master_seed", self.master_seed.to_string()),
            ("grid.resolution", self.grid_resolution.to_string()),
            (
                "grid.bounds",
                fmt_list(&[bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max]),
            ),
        ];
        lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn bounds(&self) -> Bounds {
        self.grid_bounds.unwrap_or_else(|| self.shape.default_bounds())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(2, &self.hidden, 2)
    }
}

fn parse_temps(key: &str, value: &str) -> Result<Vec<TemperaturePair>> {
    value
        .split(',')
        .map(|item| {
            let (a, b) = item.trim().split_once(':').ok_or_else(|| {
                Error::Config(format!("key '{key}': expected t1:t2 pairs, got '{item}'"))
            })?;
            let (t1, t2) = (parse_value(key, a.trim())?, parse_value(key, b.trim())?);
            TemperaturePair::new(t1, t2).map_err(|e| Error::Config(format!("key '{key}': {e}")))
        })
        .collect()
}

/// Mixes two integers into a seed (SplitMix64 finalizer).
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Datasets of one seed, shared by every arm.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub train_clean: Dataset2D,
    pub train_noisy: Dataset2D,
    pub val_noisy: Dataset2D,
    pub test: Dataset2D,
    pub init: NetworkParams,
}

/// Builds the splits and the shared initialization for seed `seed`.
///
/// Training and validation labels are corrupted by the same noise model;
/// the test set stays clean.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let shape = cfg.shape;
    let train_clean = generate_split(cfg.n_train, derive_seed(seed, 0), shape, Split::Train)?;
    let val_clean = generate_split(cfg.n_val, derive_seed(seed, 1), shape, Split::Validation)?;
    let test = generate_split(cfg.n_test, derive_seed(seed, 2), shape, Split::Test)?;
    let noise = |d: &Dataset2D, stream: u64| {
        let spec = NoiseSpec::new(cfg.noise_kind, cfg.noise_fraction, derive_seed(seed, stream))?;
        inject_noise(d, &spec, Some(&d.margins(shape)))
    };
    Ok(SeedData {
        seed,
        train_noisy: noise(&train_clean, 3)?,
        val_noisy: noise(&val_clean, 4)?,
        train_clean,
        test,
        init: init_network(&cfg.architecture()?, derive_seed(seed, 5)),
    })
}

/// Accuracies of the selected model of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMetrics {
    pub acc_train_clean: f64,
    pub acc_train_noisy: f64,
    pub acc_val_noisy: f64,
    pub acc_test: f64,
    /// Number of epochs the selected parameters were trained for.
    pub selected_epoch: usize,
    pub history: Vec<EpochStats>,
    pub params: NetworkParams,
}

/// One (temperature pair, seed) cell of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub arm: usize,
    pub temps: TemperaturePair,
    pub seed: u64,
    /// `Err` holds the diagnostic of a diverged run.
    pub outcome: std::result::Result<ArmMetrics, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Ordered by seed, then by arm.
    pub runs: Vec<ArmRun>,
    pub runtime: Duration,
}

impl ExperimentReport {
    pub fn run(&self, arm: usize, seed: u64) -> Option<&ArmRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }

    /// Clean-test accuracy of `arm` for each seed (NaN for diverged runs).
    pub fn test_accuracies(&self, arm: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.outcome.as_ref().map_or(f64::NAN, |m| m.acc_test))
            .collect()
    }
}

/// Trains one arm from the seed's shared initialization and keeps the
/// parameters with the best noisy-validation accuracy (checked every
/// `eval_every` epochs and after the last one; earliest wins ties).
pub fn run_arm(cfg: &ExperimentConfig, data: &SeedData, arm: usize) -> Result<ArmMetrics> {
    let temps = cfg.temps[arm];
    let loss = LossConfig::from_temps(temps).with_label_smoothing(cfg.label_smoothing)?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: derive_seed(derive_seed(data.seed, 6), arm as u64),
        loss,
    };
    let train_x = data.train_noisy.inputs();
    let val_x = data.val_noisy.inputs();
    let val_y = &data.val_noisy.labels;

    let mut best = (accuracy(&data.init, &val_x, val_y)?, 0usize, data.init.clone());
    let mut eval_error = None;
    let outcome = train_with(&data.init, &train_x, &data.train_noisy.labels, &train_cfg, |stats, params| {
        let done = stats.epoch;
        if done % cfg.eval_every != 0 && done != cfg.epochs {
            return;
        }
        match accuracy(params, &val_x, val_y) {
            Ok(acc) if acc > best.0 => best = (acc, done, params.clone()),
            Ok(_) => {}
            Err(e) => eval_error = Some(e),
        }
    })?;
    if let Some(e) = eval_error {
        return Err(e);
    }
    let (acc_val_noisy, selected_epoch, params) = best;
    Ok(ArmMetrics {
        acc_train_clean: accuracy(&params, &data.train_clean.inputs(), &data.train_clean.labels)?,
        acc_train_noisy: accuracy(&params, &train_x, &data.train_noisy.labels)?,
        acc_val_noisy,
        acc_test: accuracy(&params, &data.test.inputs(), &data.test.labels)?,
        selected_epoch,
        history: outcome.history,
        params,
    })
}

/// Thread cap from `BITEMP_THREADS`; `None` when unset or invalid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("BITEMP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Trains every temperature arm for every seed on the same noisy data.
///
/// Arms run in parallel (capped by `BITEMP_THREADS`); a diverged arm is
/// recorded in its [`ArmRun`] and does not stop the others. Results do not
/// depend on the thread count.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let seeds: Vec<u64> = (0..cfg.seeds as u64)
        .map(|s| cfg.master_seed.wrapping_add(s))
        .collect();
    let data: Vec<SeedData> = seeds
        .iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..data.len())
        .flat_map(|d| (0..cfg.temps.len()).map(move |a| (d, a)))
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let runs: Vec<ArmRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, arm)| ArmRun {
                arm,
                temps: cfg.temps[arm],
                seed: data[d].seed,
                outcome: run_arm(cfg, &data[d], arm).map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(ExperimentReport {
        runs,
        runtime: start.elapsed(),
    })
}
