//! Minimum-error four-way classification of the windowed error energies.
//!
//! With equiprobable hypotheses the Gaussian likelihood ratio tests between
//! the four error covariances collapse to two comparisons: which of
//! `‖z0‖²`, `‖z1‖²` is smaller, and whether the smaller one exceeds the
//! threshold `T_p = p·T`, with
//!
//! ```text
//! T = σ0²(σ0² + σ1²)/σ1² · ln(1 + σ1²/σ0²)
//! ```
//!
//! The `H_x` term common to all four covariances cancels from every pairwise
//! comparison, so the rule holds for any window length and input colouring.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::signal::{CovarianceModel, Hypothesis, NoisePowers};
use crate::{Error, Result};

/// `[‖z0‖², ‖z1‖²]` over a window of `p` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStatistic {
    pub t0: f64,
    pub t1: f64,
    pub p: usize,
}

impl SufficientStatistic {
    pub fn new(t0: f64, t1: f64, p: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t1 >= 0.0) {
            return Err(Error::param(
                "statistic",
                format!("energies must be non-negative, got ({t0}, {t1})"),
            ));
        }
        if p == 0 {
            return Err(Error::param("p", "window length must be at least 1"));
        }
        Ok(Self { t0, t1, p })
    }

    /// `‖z0‖² / ‖z1‖²` (infinite when `t1 = 0 < t0`, NaN when both vanish).
    pub fn ratio(&self) -> f64 {
        self.t0 / self.t1
    }
}

/// Squared norms of the shadow- and main-filter error windows.
pub fn compute_statistic(z0_window: &[f64], z1_window: &[f64]) -> Result<SufficientStatistic> {
    if z0_window.is_empty() {
        return Err(Error::param("window", "empty error window"));
    }
    if z0_window.len() != z1_window.len() {
        return Err(Error::DimensionMismatch(format!(
            "error windows of length {} and {}",
            z0_window.len(),
            z1_window.len()
        )));
    }
    let sq = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
    Ok(SufficientStatistic {
        t0: sq(z0_window),
        t1: sq(z1_window),
        p: z0_window.len(),
    })
}

/// Decision threshold `T` and its window-scaled value `T_p = p·T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionThreshold {
    pub base: f64,
    pub scaled: f64,
    pub p: usize,
}

impl DecisionThreshold {
    /// Uses an externally chosen `T_p` (e.g. tuned on non-stationary data).
    pub fn from_scaled(scaled: f64, p: usize) -> Result<Self> {
        if !(scaled > 0.0 && scaled.is_finite()) {
            return Err(Error::param(
                "threshold",
                format!("{scaled} must be positive"),
            ));
        }
        if p == 0 {
            return Err(Error::param("p", "window length must be at least 1"));
        }
        Ok(Self {
            base: scaled / p as f64,
            scaled,
            p,
        })
    }
}

/// Closed-form minimum-error threshold for `p`-sample windows.
pub fn threshold(noise: &NoisePowers, p: usize) -> Result<DecisionThreshold> {
    if p == 0 {
        return Err(Error::param("p", "window length must be at least 1"));
    }
    let s0 = noise.sigma0_sq();
    let s1 = noise.sigma1_sq();
    let u = s1 / s0;
    // (1 + u)/u · ln(1 + u), written to stay accurate as u → 0.
    let base = s0 * (1.0 + u) * (u.ln_1p() / u);
    Ok(DecisionThreshold {
        base,
        scaled: p as f64 * base,
        p,
    })
}

/// Applies the four-way rule.
///
/// Boundary cases are resolved toward the calmer class: `t0 = t1` (or
/// `|t0 − t1| ≤ tie_epsilon·max(t0, t1)`) counts as "no channel change", and
/// a norm exactly equal to `T_p` counts as "no double-talk".
pub fn classify(
    stat: &SufficientStatistic,
    thr: &DecisionThreshold,
    tie_epsilon: f64,
) -> Result<Hypothesis> {
    if stat.p != thr.p {
        return Err(Error::DimensionMismatch(format!(
            "statistic window {} vs threshold window {}",
            stat.p, thr.p
        )));
    }
    if !(tie_epsilon >= 0.0) {
        return Err(Error::param("tie_epsilon", "must be non-negative"));
    }
    let (t0, t1) = (stat.t0, stat.t1);
    let tied = (t0 - t1).abs() <= tie_epsilon * t0.max(t1);
    let h = if t1 <= t0 || tied {
        if t1 <= thr.scaled {
            Hypothesis::H0
        } else {
            Hypothesis::H2
        }
    } else if t0 <= thr.scaled {
        Hypothesis::H1
    } else {
        Hypothesis::H3
    };
    Ok(h)
}

/// Gaussian log-likelihoods of the stacked error vector under four
/// covariance models. Reference implementation of the rule behind
/// [`classify`]; slow, intended for verification.
pub struct LogLikelihoodOracle {
    factors: Vec<(Cholesky<f64, Dyn>, f64)>,
    dim: usize,
}

impl LogLikelihoodOracle {
    pub fn new(models: &[CovarianceModel; 4]) -> Result<Self> {
        let dim = models[0].matrix().nrows();
        let mut factors = Vec::with_capacity(4);
        for m in models {
            if m.matrix().nrows() != dim {
                return Err(Error::DimensionMismatch("models do not share p".into()));
            }
            let chol = factor(m.matrix())?;
            let logdet = 2.0
                * chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|d| d.ln())
                    .sum::<f64>();
            factors.push((chol, logdet));
        }
        Ok(Self { factors, dim })
    }

    /// Log-densities up to the common `−(2p/2)·ln 2π` constant, indexed by hypothesis.
    pub fn log_likelihoods(&self, z: &DVector<f64>) -> Result<[f64; 4]> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "z has length {}, models {}",
                z.len(),
                self.dim
            )));
        }
        let mut out = [0.0; 4];
        for (o, (chol, logdet)) in out.iter_mut().zip(&self.factors) {
            let w = chol
                .l_dirty()
                .solve_lower_triangular(z)
                .expect("Cholesky factor is non-singular");
            *o = -0.5 * (w.norm_squared() + logdet);
        }
        Ok(out)
    }

    /// Index of the largest log-likelihood; ties go to the lower index.
    pub fn classify(&self, z: &DVector<f64>) -> Result<Hypothesis> {
        let ll = self.log_likelihoods(z)?;
        let mut best = 0;
        for i in 1..4 {
            if ll[i] > ll[best] {
                best = i;
            }
        }
        Ok(Hypothesis::ALL[best])
    }
}

fn factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let mut j = m.clone();
    for i in 0..j.nrows() {
        j[(i, i)] += 1e-12;
    }
    j.cholesky().ok_or_else(|| {
        Error::DegenerateCovariance("singular covariance in likelihood oracle".into())
    })
}

/// Argmax over the exact Gaussian log-densities of `z` under `models`
/// (ordered H0..H3).
pub fn classify_loglik(z: &DVector<f64>, models: &[CovarianceModel; 4]) -> Result<Hypothesis> {
    LogLikelihoodOracle::new(models)?.classify(z)
}
