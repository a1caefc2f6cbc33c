use std::cell::RefCell;

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::quadrature::{integrate, Tolerance};
use crate::signal::CovarianceModel;
use crate::{Error, Result};

const SERIES_CAP: usize = 100_000;
const SERIES_REL: f64 = 1e-18;
/// Tail mass left out when semi-infinite ranges are truncated.
pub const TRUNCATION_TAIL: f64 = 1e-10;
const BREAK_PROBS: [f64; 10] = [1e-8, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.9999];

/// Bivariate gamma law `G(q, P)` of the diagonal of a 2×2 Wishart matrix
/// with `2q` degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateGammaParams {
    q: f64,
    p1: f64,
    p2: f64,
    p12: f64,
    c: f64,
    /// `2 / (√(p1·p2) + √(p1·p2 − p12))`, the residual exponent rate on `√(t0·t1)`.
    ridge: f64,
    ln_norm: f64,
    upper: [f64; 2],
    breaks: [Vec<f64>; 2],
}

impl BivariateGammaParams {
    pub fn new(q: f64, p1: f64, p2: f64, p12: f64) -> Result<Self> {
        let excess = p1 * p2 - p12;
        Self::with_excess(q, p1, p2, p12, excess)
    }

    /// Parameters of `diag(Σ_k z_k z_kᵀ)` for `p` iid `N(0, sigma)` pairs.
    pub fn from_pair_covariance(sigma: [[f64; 2]; 2], p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::param("p", "window length must be at least 1"));
        }
        let (s00, s11, s01) = (sigma[0][0], sigma[1][1], sigma[0][1]);
        if (s01 - sigma[1][0]).abs() > 1e-12 * s00.abs().max(s11.abs()) {
            return Err(Error::param("sigma", "pair covariance must be symmetric"));
        }
        let p12 = 4.0 * det2(s00, s01, s01, s11);
        if !(p12 > 0.0) {
            return Err(Error::DegenerateCovariance(format!(
                "pair covariance has determinant {}",
                p12 / 4.0
            )));
        }
        Self::with_excess(p as f64 / 2.0, 2.0 * s00, 2.0 * s11, p12, 4.0 * s01 * s01)
    }

    /// Uses the per-pair block of `model` and its window length.
    pub fn from_covariance(model: &CovarianceModel) -> Result<Self> {
        Self::from_pair_covariance(model.pair_covariance(), model.samples())
    }

    fn with_excess(q: f64, p1: f64, p2: f64, p12: f64, excess: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::param(
                "q",
                format!("shape must be positive, got {q}"),
            ));
        }
        if !(p1 > 0.0 && p2 > 0.0 && p1.is_finite() && p2.is_finite()) {
            return Err(Error::param(
                "p1/p2",
                format!("scales must be positive, got {p1}, {p2}"),
            ));
        }
        if !(p12 > 0.0) {
            return Err(Error::DegenerateCovariance(format!("p12 = {p12}")));
        }
        if excess < -1e-12 * p1 * p2 {
            return Err(Error::param(
                "p12",
                format!("p1·p2 = {} is below p12 = {p12}", p1 * p2),
            ));
        }
        let c = excess.max(0.0) / (p12 * p12);
        let ridge = 2.0 / ((p1 * p2).sqrt() + excess.max(0.0).sqrt());
        let ln_norm = -q * p12.ln() - ln_gamma(q);
        let upper = [
            upper_quantile(q, p1, TRUNCATION_TAIL),
            upper_quantile(q, p2, TRUNCATION_TAIL),
        ];
        let breaks = [
            BREAK_PROBS
                .iter()
                .map(|&u| lower_quantile(q, p1, u))
                .collect(),
            BREAK_PROBS
                .iter()
                .map(|&u| lower_quantile(q, p2, u))
                .collect(),
        ];
        Ok(Self {
            q,
            p1,
            p2,
            p12,
            c,
            ridge,
            ln_norm,
            upper,
            breaks,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn p12(&self) -> f64 {
        self.p12
    }

    /// `c = (p1·p2 − p12)/p12²`, the coupling constant of the series.
    pub fn coupling(&self) -> f64 {
        self.c
    }

    /// Law of `(t1, t0)`.
    pub fn swapped(&self) -> Self {
        Self {
            q: self.q,
            p1: self.p2,
            p2: self.p1,
            p12: self.p12,
            c: self.c,
            ridge: self.ridge,
            ln_norm: self.ln_norm,
            upper: [self.upper[1], self.upper[0]],
            breaks: [self.breaks[1].clone(), self.breaks[0].clone()],
        }
    }

    /// Closed-form `E[exp(−s1·t0 − s2·t1)]`.
    pub fn laplace_transform(&self, s1: f64, s2: f64) -> f64 {
        (1.0 + self.p1 * s1 + self.p2 * s2 + self.p12 * s1 * s2).powf(-self.q)
    }

    /// Upper `1 − 1e−10` quantile of the `t0` (axis 0) or `t1` (axis 1) marginal.
    pub fn truncation(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    /// Quantile of a marginal, which is `Gamma(q, scale p1)` or `Gamma(q, scale p2)`.
    pub fn marginal_quantile(&self, axis: usize, prob: f64) -> f64 {
        let scale = if axis == 0 { self.p1 } else { self.p2 };
        lower_quantile(self.q, scale, prob)
    }

    pub fn ln_density(&self, t0: f64, t1: f64) -> Result<f64> {
        if !(t0 >= 0.0 && t1 >= 0.0) {
            return Err(Error::param(
                "t",
                format!("density arguments must be non-negative, got ({t0}, {t1})"),
            ));
        }
        let prod = t0 * t1;
        let power = if self.q == 1.0 {
            0.0
        } else {
            (self.q - 1.0) * prod.ln()
        };
        // −(p2·t0 + p1·t1)/p12 + 2√z regrouped so that nearly singular laws
        // keep their sharp ridge at √(p2·t0) = √(p1·t1)
        let gap = (self.p2 * t0).sqrt() - (self.p1 * t1).sqrt();
        let expo = -gap * gap / self.p12 - self.ridge * prod.sqrt();
        Ok(self.ln_norm + expo + power + ln_series_scaled(self.q, self.c * prod)?)
    }

    pub fn density(&self, t0: f64, t1: f64) -> Result<f64> {
        self.ln_density(t0, t1).map(f64::exp)
    }

    /// `∫∫ g(t0, t1)·f(t0, t1)` over the truncated support.
    pub fn expectation<G: Fn(f64, f64) -> f64>(&self, g: G, abs_tol: f64) -> Result<f64> {
        self.rectangle(&g, self.upper[0], self.upper[1], abs_tol)
    }

    /// `P(t0 ≤ x0, t1 ≤ x1)`.
    pub fn cdf(&self, x0: f64, x1: f64, abs_tol: f64) -> Result<f64> {
        if x0 <= 0.0 || x1 <= 0.0 {
            return Ok(0.0);
        }
        let v = self.rectangle(
            &|_, _| 1.0,
            x0.min(self.upper[0]),
            x1.min(self.upper[1]),
            abs_tol,
        )?;
        Ok(v.clamp(0.0, 1.0))
    }

    fn rectangle<G: Fn(f64, f64) -> f64>(
        &self,
        g: &G,
        x0: f64,
        x1: f64,
        abs_tol: f64,
    ) -> Result<f64> {
        let failure = RefCell::new(None);
        let inner_tol = inner_tolerance(abs_tol, x1);
        let outer = |t1: f64| {
            let inner = |t0: f64| self.eval(t0, t1, &failure) * g(t0, t1);
            match self.integrate_axis(inner, x0, &self.breaks[0], inner_tol) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let v = self.integrate_axis(outer, x1, &self.breaks[1], outer_tolerance(abs_tol))?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// `∫_{lo}^{hi} dt1 ∫_0^{U0 − t1} f(u + t1, t1) du`: mass of
    /// `{t1 < t0, lo < t1 < hi}`.
    pub(crate) fn lower_wedge(&self, lo: f64, hi: f64, abs_tol: f64) -> Result<f64> {
        let hi = hi.min(self.upper[1]);
        if !(hi > lo) {
            return Ok(0.0);
        }
        let u0 = self.upper[0];
        let spread = self.difference_spread();
        let failure = RefCell::new(None);
        let inner_tol = inner_tolerance(abs_tol, hi - lo);
        let outer = |t1: f64| {
            let width = u0 - t1;
            if !(width > 0.0) || failure.borrow().is_some() {
                return 0.0;
            }
            let mut breaks: Vec<f64> = self.breaks[0]
                .iter()
                .map(|b| b - t1)
                .filter(|&b| b > 0.0)
                .collect();
            breaks.extend(
                [1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0]
                    .iter()
                    .map(|k| k * spread),
            );
            breaks.extend([1e-4, 1e-2, 0.1, 1.0].iter().map(|k| k * t1));
            let inner = |u: f64| self.eval(u + t1, t1, &failure);
            match self.integrate_axis(inner, width, &breaks, inner_tol) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let mut breaks = self.breaks[1].clone();
        breaks.push(lo);
        let v = if lo == 0.0 {
            self.integrate_axis(outer, hi, &breaks, outer_tolerance(abs_tol))?
        } else {
            integrate(outer, lo, hi, &breaks, outer_tolerance(abs_tol))?.value
        };
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    fn difference_spread(&self) -> f64 {
        // standard deviation of t0 − t1
        let (s00, s11) = (self.p1 / 2.0, self.p2 / 2.0);
        let s01_sq = self.c * self.p12 * self.p12 / 4.0;
        (2.0 * 2.0 * self.q * (s00 * s00 + s11 * s11 - 2.0 * s01_sq))
            .max(0.0)
            .sqrt()
            .max(1e-300)
    }

    fn eval(&self, t0: f64, t1: f64, failure: &RefCell<Option<Error>>) -> f64 {
        match self.density(t0, t1) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    }

    /// Integrates over `[0, b]`, substituting `t = s²` when `q < 1` so the
    /// `t^(q−1)` endpoint singularity becomes integrable smoothly.
    fn integrate_axis<F: Fn(f64) -> f64>(
        &self,
        f: F,
        b: f64,
        breaks: &[f64],
        tol: Tolerance,
    ) -> Result<f64> {
        if !(b > 0.0) {
            return Ok(0.0);
        }
        if self.q < 1.0 {
            let sb: Vec<f64> = breaks
                .iter()
                .filter(|&&x| x > 0.0)
                .map(|x| x.sqrt())
                .collect();
            Ok(integrate(|s| 2.0 * s * f(s * s), 0.0, b.sqrt(), &sb, tol)?.value)
        } else {
            Ok(integrate(f, 0.0, b, breaks, tol)?.value)
        }
    }
}

/// `a·d − b·c` via Kahan's fused form, accurate for nearly singular blocks.
fn det2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let w = b * c;
    let e = (-b).mul_add(c, w);
    let f = a.mul_add(d, -w);
    f + e
}

fn outer_tolerance(abs: f64) -> Tolerance {
    Tolerance {
        abs,
        rel: 1e-10,
        max_intervals: 4000,
    }
}

fn inner_tolerance(abs: f64, outer_len: f64) -> Tolerance {
    Tolerance {
        abs: 0.1 * abs / outer_len.max(1e-300),
        rel: 1e-10,
        max_intervals: 4000,
    }
}

/// `ln f_q(z)` with `f_q(z) = Σ_k z^k / (k!·Γ(q + k))`.
///
/// Sums outward from the largest term. Very large arguments switch to the
/// asymptotic expansion of `I_{q−1}(2√z)`.
pub fn ln_series(q: f64, z: f64) -> Result<f64> {
    Ok(ln_series_scaled(q, z)? + 2.0 * z.sqrt())
}

/// `ln f_q(z) − 2√z`.
fn ln_series_scaled(q: f64, z: f64) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(Error::param(
            "z",
            format!("series argument must be non-negative, got {z}"),
        ));
    }
    if z == 0.0 {
        return Ok(-ln_gamma(q));
    }
    if z.is_infinite() {
        return Err(Error::SeriesNonConvergence { terms: 0, z });
    }
    let nu = q - 1.0;
    let x = 2.0 * z.sqrt();
    if x > 1e4 && x > 40.0 * (nu * nu + 1.0) {
        if let Some(v) = ln_bessel_i_scaled_asymptotic(nu, x) {
            return Ok(v - 0.5 * nu * z.ln());
        }
    }
    let b = q + 1.0;
    let root = 0.5 * (-b + (b * b - 4.0 * (q - z)).max(0.0).sqrt());
    let peak = root.max(0.0).floor();
    let ln_z = z.ln();
    let ln_peak = peak * ln_z - ln_gamma(peak + 1.0) - ln_gamma(q + peak);

    let mut sum = 1.0;
    let mut terms = 1usize;
    let mut term = 1.0;
    let mut k = peak;
    loop {
        term *= z / ((k + 1.0) * (q + k));
        k += 1.0;
        sum += term;
        terms += 1;
        if term < SERIES_REL * sum {
            break;
        }
        if terms > SERIES_CAP {
            return Err(Error::SeriesNonConvergence { terms, z });
        }
    }
    term = 1.0;
    k = peak;
    while k > 0.0 {
        term *= k * (q + k - 1.0) / z;
        k -= 1.0;
        sum += term;
        terms += 1;
        if term < SERIES_REL * sum {
            break;
        }
        if terms > SERIES_CAP {
            return Err(Error::SeriesNonConvergence { terms, z });
        }
    }
    Ok(ln_peak + sum.ln() - x)
}

/// `ln(I_ν(x)·e^(−x))` for large `x`.
fn ln_bessel_i_scaled_asymptotic(nu: f64, x: f64) -> Option<f64> {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next.abs() > term.abs() {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            return Some(-0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln());
        }
    }
    None
}

fn lower_quantile(shape: f64, scale: f64, prob: f64) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    if prob >= 0.5 {
        return upper_quantile(shape, scale, 1.0 - prob);
    }
    bisect(|x| gamma_lr(shape, x) - prob, shape) * scale
}

fn upper_quantile(shape: f64, scale: f64, tail: f64) -> f64 {
    bisect(|x| tail - gamma_ur(shape, x), shape) * scale
}

/// Root of an increasing function on `(0, ∞)`.
fn bisect<F: Fn(f64) -> f64>(g: F, start: f64) -> f64 {
    let mut hi = start.max(1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
