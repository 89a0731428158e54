//! Bi-tempered logistic loss.
//!
//! A two-temperature generalization of softmax cross-entropy: `t1 < 1` makes
//! the loss bounded (robust to mislabelled points far from the boundary) and
//! `t2 > 1` gives the softmax a heavy tail (robust to noise near the
//! boundary). `(t1, t2) = (1, 1)` is the ordinary logistic loss.
//!
//! ```
//! use bitemp_core::{bitempered_loss, LossConfig, ProbabilityVector};
//!
//! let cfg = LossConfig::new(0.2, 4.0).unwrap();
//! let y = ProbabilityVector::one_hot(3, 0).unwrap();
//! let out = bitempered_loss(&[2.0, -1.0, 0.5], &y, &cfg).unwrap();
//! assert!(out.value <= 1.0 / (1.0 - 0.2));
//! assert!(out.gradient.iter().sum::<f64>().abs() < 1e-12);
//! ```

pub mod checks;
pub mod config;
pub mod divergence;
pub mod error;
pub mod experiments;
pub mod loss;
pub mod network;
pub mod normalization;
pub mod report;
pub mod tempered;

pub use divergence::{
    bregman_alternate, bregman_special, bregman_tempered, convex_generator, dual_generator,
    strong_convexity_bounds, tsallis_divergence, SpecialCase,
};
pub use error::{Error, Result};
pub use experiments::{
    boundary_grid, generate_dataset, inject_noise, run_comparison, Bounds, Dataset2D,
    ExperimentConfig, ExperimentReport, Grid, NoiseKind, NoiseSpec, Shape,
};
pub use loss::{
    bitempered_loss, bitempered_loss_batch, properness_gap, tsallis_loss, LossConfig, LossOutput,
    ProperConfig, ProperReport,
};
pub use network::{
    backward, forward, init_network, train, Architecture, NetworkParams, TrainConfig,
};
pub use normalization::{
    escort_distribution, lambda_binary_search, lambda_fixed_point, normalize, tempered_softmax,
    NormalizationResult, ProbabilityVector,
};
pub use tempered::{exp_t, exp_t_vec, log_t, log_t_vec, TemperaturePair};
