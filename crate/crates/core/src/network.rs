//! A small fully connected network trained by hand-written backpropagation.
//!
//! Hidden layers use ReLU; the output layer is linear and feeds the
//! bi-tempered loss. Parameters live in one flat buffer laid out layer by
//! layer as `[W_0 (row-major, out x in), b_0, W_1, b_1, ...]`, which keeps the
//! optimizer, the finite-difference checker and the checkpoint format simple.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{bitempered_loss, LossConfig};
use crate::normalization::{argmax, ProbabilityVector};

const CHECKPOINT_MAGIC: &str = "bitemp-checkpoint v1";

/// Layer widths of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::from_sizes(sizes)
    }

    /// `sizes[0]` is the input dimension and the last entry the class count.
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("need at least an input and an output layer".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Shape(format!("layer {i} has zero width")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::Shape("need at least two output classes".into()));
        }
        Ok(Self { sizes })
    }

    /// The 2 -> 10 -> 5 -> 2 network used for the two-dimensional experiments.
    pub fn two_layer_2d() -> Self {
        Self { sizes: vec![2, 10, 5, 2] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offsets of `(weights, bias)` of layer `l` in the flat buffer.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        (start, start + self.sizes[l + 1] * self.sizes[l])
    }
}

/// Weights and biases of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.num_params();
        Self { arch, data: vec![0.0; n] }
    }

    /// Builds parameters from a flat buffer in the documented layout.
    pub fn from_flat(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(Self { arch, data })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major `out x in` weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b) = self.arch.offsets(l);
        &self.data[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.arch.offsets(l);
        &self.data[b..b + self.arch.sizes[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.arch.offsets(l);
        &mut self.data[w..b]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.arch.offsets(l);
        let n = self.arch.sizes[l + 1];
        &mut self.data[b..b + n]
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_network(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(arch.clone());
    for l in 0..arch.num_layers() {
        let (fan_in, fan_out) = (arch.sizes[l], arch.sizes[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in params.weights_mut(l) {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    params
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `activations[0]` is the input, `activations[l]` the output of layer `l`
    /// after its nonlinearity.
    pub activations: Vec<Vec<f64>>,
    /// Pre-nonlinearity values of every layer; the last entry is the logits.
    pub pre_activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().unwrap()
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * x.len()..(r + 1) * x.len()];
            bias + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        })
        .collect()
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardPass> {
    let arch = &params.arch;
    if x.len() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.len(),
            arch.input_dim()
        )));
    }
    let n = arch.num_layers();
    let mut activations = Vec::with_capacity(n + 1);
    let mut pre_activations = Vec::with_capacity(n);
    activations.push(x.to_vec());
    for l in 0..n {
        let z = affine(params.weights(l), params.bias(l), &activations[l]);
        if l + 1 < n {
            activations.push(z.iter().map(|&v| v.max(0.0)).collect());
        }
        pre_activations.push(z);
    }
    Ok(ForwardPass {
        activations,
        pre_activations,
    })
}

/// Logits only.
pub fn predict_logits(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    forward(params, x).map(|f| f.pre_activations.into_iter().last().unwrap())
}

/// Loss of one example and its gradient with respect to every parameter
/// (flat layout, see the module docs).
pub fn backward(
    params: &NetworkParams,
    x: &[f64],
    y: &ProbabilityVector,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.data.len()];
    let value = accumulate_gradient(params, x, y, cfg, 1.0, &mut grad)?.0;
    Ok((value, grad))
}

/// Adds `scale * dL/dtheta` into `grad`; returns the loss and the logits.
fn accumulate_gradient(
    params: &NetworkParams,
    x: &[f64],
    y: &ProbabilityVector,
    cfg: &LossConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, Vec<f64>)> {
    let arch = &params.arch;
    let pass = forward(params, x)?;
    let out = bitempered_loss(pass.logits(), y, cfg)?;
    let mut delta: Vec<f64> = out.gradient.iter().map(|g| g * scale).collect();
    for l in (0..arch.num_layers()).rev() {
        let input = &pass.activations[l];
        let (w_off, b_off) = arch.offsets(l);
        let n_in = input.len();
        for (r, &d) in delta.iter().enumerate() {
            grad[b_off + r] += d;
            let row = &mut grad[w_off + r * n_in..w_off + (r + 1) * n_in];
            for (g, &xi) in row.iter_mut().zip(input) {
                *g += d * xi;
            }
        }
        if l == 0 {
            break;
        }
        let w = params.weights(l);
        let below = &pass.pre_activations[l - 1];
        delta = (0..n_in)
            .map(|c| {
                if below[c] <= 0.0 {
                    return 0.0;
                }
                delta
                    .iter()
                    .enumerate()
                    .map(|(r, d)| d * w[r * n_in + c])
                    .sum()
            })
            .collect();
    }
    let logits = pass.pre_activations.into_iter().last().unwrap();
    Ok((out.value, logits))
}

/// Result of comparing [`backward`] with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Largest `|g - fd| / max(|g|, |fd|, 1e-6)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation moves a hidden unit across the ReLU kink.
    pub skipped: usize,
}

fn relu_pattern(params: &NetworkParams, x: &[f64]) -> Result<Vec<bool>> {
    let pass = forward(params, x)?;
    let n = pass.pre_activations.len();
    Ok(pass.pre_activations[..n - 1]
        .iter()
        .flatten()
        .map(|&z| z > 0.0)
        .collect())
}

fn near_kink(params: &NetworkParams, x: &[f64], tol: f64) -> Result<bool> {
    let pass = forward(params, x)?;
    let n = pass.pre_activations.len();
    Ok(pass.pre_activations[..n - 1]
        .iter()
        .flatten()
        .any(|z| z.abs() < tol))
}

/// Central finite-difference check of [`backward`] with step `h`.
///
/// Coordinates whose `+h` or `-h` perturbation changes which hidden units are
/// active, or leaves a unit within `1e-8` of zero, straddle a kink where the
/// loss is not differentiable, and are skipped.
pub fn gradient_check(
    params: &NetworkParams,
    x: &[f64],
    y: &ProbabilityVector,
    cfg: &LossConfig,
    h: f64,
) -> Result<GradientCheck> {
    let (_, grad) = backward(params, x, y, cfg)?;
    let base = relu_pattern(params, x)?;
    let mut report = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    for i in 0..params.data.len() {
        let orig = params.data[i];
        probe.data[i] = orig + h;
        let plus_ok = relu_pattern(&probe, x)? == base && !near_kink(&probe, x, 1e-8)?;
        let lp = bitempered_loss(&predict_logits(&probe, x)?, y, cfg)?.value;
        probe.data[i] = orig - h;
        let minus_ok = relu_pattern(&probe, x)? == base && !near_kink(&probe, x, 1e-8)?;
        let lm = bitempered_loss(&predict_logits(&probe, x)?, y, cfg)?.value;
        probe.data[i] = orig;
        if !(plus_ok && minus_ok) {
            report.skipped += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Optimizer and loss settings for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// `None` means full-batch gradient descent.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub loss: LossConfig,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 200,
            batch_size: None,
            seed: 0,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean loss and accuracy over one epoch's forward passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
}

fn check_dataset(params: &NetworkParams, inputs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Shape("empty dataset".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let k = params.arch.classes();
    if let Some(i) = labels.iter().position(|&c| c >= k) {
        return Err(Error::Shape(format!("label {} at row {i} is not below {k}", labels[i])));
    }
    Ok(())
}

fn one_hots(labels: &[usize], k: usize) -> Vec<ProbabilityVector> {
    labels
        .iter()
        .map(|&c| ProbabilityVector::one_hot(k, c).expect("label checked"))
        .collect()
}

/// Mean loss and accuracy of `params` on a labelled set.
pub fn evaluate(
    params: &NetworkParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    check_dataset(params, inputs, labels)?;
    let k = params.arch.classes();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &c) in inputs.iter().zip(labels) {
        let logits = predict_logits(params, x)?;
        if argmax(&logits) == c {
            correct += 1;
        }
        loss += bitempered_loss(&logits, &ProbabilityVector::one_hot(k, c)?, cfg)?.value;
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Fraction of rows whose highest logit is the label; ties go to the lowest
/// class index.
pub fn accuracy(params: &NetworkParams, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_dataset(params, inputs, labels)?;
    let mut correct = 0usize;
    for (x, &c) in inputs.iter().zip(labels) {
        if argmax(&predict_logits(params, x)?) == c {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Trains with SGD and momentum; see [`train_with`].
pub fn train(
    params: &NetworkParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(params, inputs, labels, cfg, |_, _| {})
}

/// Trains with SGD and momentum, calling `on_epoch` after each epoch's updates.
///
/// The history records the mean loss and accuracy of the forward passes made
/// during each epoch. Mini-batches are drawn from a shuffle seeded by
/// `cfg.seed`, so identical inputs give bitwise-identical results.
pub fn train_with(
    params: &NetworkParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &NetworkParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(params, inputs, labels)?;
    let n = inputs.len();
    let targets = one_hots(labels, params.arch.classes());
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();

    let mut current = params.clone();
    let mut velocity = vec![0.0; current.data.len()];
    let mut grad = vec![0.0; current.data.len()];
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (value, logits) =
                    accumulate_gradient(&current, &inputs[i], &targets[i], &cfg.loss, scale, &mut grad)?;
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        message: format!("loss of example {i} is {value}"),
                    });
                }
                loss_sum += value;
                if argmax(&logits) == labels[i] {
                    correct += 1;
                }
            }
            for ((p, v), g) in current.data.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
            if current.data.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    message: "parameters became non-finite".into(),
                });
            }
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        };
        on_epoch(&stats, &current);
        history.push(stats);
    }
    Ok(TrainOutcome {
        params: current,
        history,
    })
}

/// Serializes parameters in the text checkpoint format:
///
/// ```text
/// bitemp-checkpoint v1
/// sizes 2 10 5 2
/// weights 0 10 2
/// <one line per row, space separated>
/// bias 0 10
/// <one line>
/// ...
/// ```
///
/// Values use the shortest decimal form that parses back to the same `f64`.
pub fn to_checkpoint_string(params: &NetworkParams) -> String {
    let arch = &params.arch;
    let mut out = String::new();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    let sizes: Vec<String> = arch.sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
    for l in 0..arch.num_layers() {
        let (n_in, n_out) = (arch.sizes[l], arch.sizes[l + 1]);
        writeln!(out, "weights {l} {n_out} {n_in}").unwrap();
        for row in params.weights(l).chunks(n_in) {
            writeln!(out, "{}", join(row)).unwrap();
        }
        writeln!(out, "bias {l} {n_out}").unwrap();
        writeln!(out, "{}", join(params.bias(l))).unwrap();
    }
    out
}

pub fn from_checkpoint_str(text: &str) -> Result<NetworkParams> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, &str)> {
        lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Parse(format!("checkpoint ends before {what}")))
    };
    let (_, magic) = next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse(format!("unknown checkpoint header '{magic}'")));
    }
    let parse_usize = |line: usize, s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Parse(format!("line {line}: '{s}' is not a count")))
    };
    let parse_floats = |line: usize, s: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {line}: '{t}' is not a number")))
            })
            .collect::<Result<_>>()?;
        if v.len() != n {
            return Err(Error::Parse(format!("line {line}: expected {n} values, found {}", v.len())));
        }
        Ok(v)
    };

    let (ln, sizes_line) = next("sizes")?;
    let mut fields = sizes_line.split_whitespace();
    if fields.next() != Some("sizes") {
        return Err(Error::Parse(format!("line {ln}: expected 'sizes'")));
    }
    let sizes = fields.map(|s| parse_usize(ln, s)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::from_sizes(sizes)?;
    let mut data = Vec::with_capacity(arch.num_params());
    for l in 0..arch.num_layers() {
        let (n_in, n_out) = (arch.sizes[l], arch.sizes[l + 1]);
        let (ln, head) = next("weights")?;
        if head != format!("weights {l} {n_out} {n_in}") {
            return Err(Error::Parse(format!("line {ln}: expected 'weights {l} {n_out} {n_in}'")));
        }
        for _ in 0..n_out {
            let (ln, row) = next("a weight row")?;
            data.extend(parse_floats(ln, row, n_in)?);
        }
        let (ln, head) = next("bias")?;
        if head != format!("bias {l} {n_out}") {
            return Err(Error::Parse(format!("line {ln}: expected 'bias {l} {n_out}'")));
        }
        let (ln, row) = next("a bias row")?;
        data.extend(parse_floats(ln, row, n_out)?);
    }
    NetworkParams::from_flat(arch, data)
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_checkpoint_string(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    from_checkpoint_str(&std::fs::read_to_string(path)?)
}
