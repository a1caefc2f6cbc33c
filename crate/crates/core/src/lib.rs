//! Decision-theoretic control toolkit for shadow-filter echo cancelers.
//!
//! The crate is organised around the four operating states of an echo
//! canceler with a continuously adapting shadow filter and a static main
//! filter:
//!
//! * [`signal`] builds echo paths, AR(1) inputs, the per-hypothesis covariance
//!   of the stacked error vector, and synthetic scenario signals.
//! * [`classifier`] computes the windowed energy statistic and applies the
//!   minimum-error four-way rule.
//! * [`gamma`] evaluates the exact law of the statistic (a bivariate gamma
//!   distribution), the resulting error probabilities, and Monte Carlo
//!   confusion matrices.
//! * [`control`] runs the NLMS shadow filter, the copy logic and the
//!   step-size schedule sample by sample.

pub mod classifier;
pub mod control;
mod error;
pub mod gamma;
pub mod rng;
pub mod signal;

pub use classifier::{
    classify, classify_loglik, compute_statistic, threshold, DecisionThreshold, SufficientStatistic,
};
pub use control::{
    run_canceler, run_canceler_signals, AdaptiveFilter, CancelerRun, ControlConfig, EchoCanceler,
    GuardMode, TestDecision, TraceRecord,
};
pub use error::{Error, Result};
pub use gamma::{
    confusion_mc, confusion_theory, curve_sweep, error_probability, BivariateGammaParams,
    ConfusionMatrix, McModel,
};
pub use signal::{Ar1Input, Channel, CovarianceModel, Hypothesis, NoisePowers};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
