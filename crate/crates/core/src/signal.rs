//! Echo paths, AR(1) inputs, per-hypothesis error covariances and synthetic
//! scenario signals.
//!
//! The true echo paths used to synthesise `y(n)` are called *channels* (`g`)
//! throughout, to keep them apart from the shadow (`ĥ0`) and main (`ĥ1`)
//! adaptive filters of [`crate::control`].

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{self, SimRng};
use crate::{Error, Result};

/// Relative tolerance used when checking symmetry / semi-definiteness.
const PSD_TOL: f64 = 1e-10;

/// One of the four operating states of the canceler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hypothesis {
    /// No double-talk, no channel change.
    H0,
    /// No double-talk, channel change.
    H1,
    /// Double-talk, no channel change.
    H2,
    /// Double-talk and channel change.
    H3,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 4] = [
        Hypothesis::H0,
        Hypothesis::H1,
        Hypothesis::H2,
        Hypothesis::H3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn double_talk(self) -> bool {
        matches!(self, Hypothesis::H2 | Hypothesis::H3)
    }

    pub fn channel_change(self) -> bool {
        matches!(self, Hypothesis::H1 | Hypothesis::H3)
    }

    pub fn from_flags(double_talk: bool, channel_change: bool) -> Self {
        match (double_talk, channel_change) {
            (false, false) => Hypothesis::H0,
            (false, true) => Hypothesis::H1,
            (true, false) => Hypothesis::H2,
            (true, true) => Hypothesis::H3,
        }
    }

    /// The class separated from this one only by the `‖z0‖² = ‖z1‖²` line
    /// (H0 ↔ H1, H2 ↔ H3).
    pub fn partner(self) -> Self {
        match self {
            Hypothesis::H0 => Hypothesis::H1,
            Hypothesis::H1 => Hypothesis::H0,
            Hypothesis::H2 => Hypothesis::H3,
            Hypothesis::H3 => Hypothesis::H2,
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H{}", self.index())
    }
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H0" | "h0" | "0" => Ok(Hypothesis::H0),
            "H1" | "h1" | "1" => Ok(Hypothesis::H1),
            "H2" | "h2" | "2" => Ok(Hypothesis::H2),
            "H3" | "h3" | "3" => Ok(Hypothesis::H3),
            other => Err(Error::param(
                "hypothesis",
                format!("unknown label {other:?}"),
            )),
        }
    }
}

/// Echo path impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    taps: Vec<f64>,
    delay: usize,
    gain_db: f64,
}

impl Channel {
    /// One-sided exponential response `c·decay^(k−delay)` for `k ≥ delay`,
    /// scaled so that the energy `hᵀh` equals `10^(gain_db/10)`.
    pub fn exponential(gain_db: f64, delay: usize, length: usize, decay: f64) -> Result<Self> {
        if length == 0 {
            return Err(Error::param("length", "must be positive"));
        }
        if delay >= length {
            return Err(Error::param(
                "delay",
                format!("{delay} must be smaller than the length {length}"),
            ));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::param("decay", format!("{decay} outside (0, 1)")));
        }
        if !gain_db.is_finite() {
            return Err(Error::param("gain_db", "must be finite"));
        }
        let active = length - delay;
        let r2 = decay * decay;
        // Σ_{j<active} decay^{2j}
        let geometric = (1.0 - r2.powi(active as i32)) / (1.0 - r2);
        let gain = 10f64.powf(gain_db / 10.0);
        let c = (gain / geometric).sqrt();
        let mut taps = vec![0.0; length];
        let mut v = c;
        for tap in &mut taps[delay..] {
            *tap = v;
            v *= decay;
        }
        Ok(Self {
            taps,
            delay,
            gain_db,
        })
    }

    /// Wraps an arbitrary impulse response (e.g. a measured echo path).
    pub fn from_taps(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::param("taps", "empty impulse response"));
        }
        let delay = taps
            .iter()
            .position(|&t| t != 0.0)
            .unwrap_or(taps.len() - 1);
        let energy: f64 = taps.iter().map(|t| t * t).sum();
        Ok(Self {
            taps,
            delay,
            gain_db: 10.0 * energy.log10(),
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn gain_db(&self) -> f64 {
        self.gain_db
    }

    /// `hᵀh`.
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

/// Stationary first-order autoregressive input process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Input {
    variance: f64,
    rho: f64,
    length: usize,
}

impl Ar1Input {
    pub fn new(variance: f64, rho: f64, length: usize) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::param(
                "variance",
                format!("{variance} must be non-negative"),
            ));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::param("rho", format!("{rho} outside [0, 1)")));
        }
        if length == 0 {
            return Err(Error::param("length", "must be positive"));
        }
        Ok(Self {
            variance,
            rho,
            length,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Autocovariance of the scalar process at lag `m`.
    pub fn autocovariance(&self, lag: i64) -> f64 {
        self.variance * self.rho.powi(lag.unsigned_abs() as i32)
    }

    /// `R_k = E[x(n) x(n−k)ᵀ]` for the length-`N` regressor, entries `σ²ρ^|i−j−k|`.
    pub fn cross_covariance(&self, lag: i64) -> DMatrix<f64> {
        let n = self.length;
        DMatrix::from_fn(n, n, |i, j| self.autocovariance(i as i64 - j as i64 - lag))
    }

    /// `Σ_x`, the Toeplitz regressor covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.cross_covariance(0)
    }
}

/// `R_k` for `input` (free-function form).
pub fn ar1_cross_covariance(input: &Ar1Input, lag: i64) -> DMatrix<f64> {
    input.cross_covariance(lag)
}

/// Powers of the channel noise `n0` and the double-talk signal `n1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePowers {
    sigma0_sq: f64,
    sigma1_sq: f64,
}

impl NoisePowers {
    pub fn new(sigma0_sq: f64, sigma1_sq: f64) -> Result<Self> {
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::param(
                "sigma0_sq",
                format!("{sigma0_sq} must be strictly positive"),
            ));
        }
        if !(sigma1_sq > 0.0 && sigma1_sq.is_finite()) {
            return Err(Error::param(
                "sigma1_sq",
                format!("{sigma1_sq} must be strictly positive"),
            ));
        }
        Ok(Self {
            sigma0_sq,
            sigma1_sq,
        })
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma1_sq
    }

    /// White-noise power seen by both errors under `h`.
    pub fn white_power(&self, h: Hypothesis) -> f64 {
        if h.double_talk() {
            self.sigma0_sq + self.sigma1_sq
        } else {
            self.sigma0_sq
        }
    }
}

fn difference(h0: &Channel, h1: &Channel) -> Result<Vec<f64>> {
    if h0.len() != h1.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel lengths {} and {}",
            h0.len(),
            h1.len()
        )));
    }
    Ok(h0.taps.iter().zip(&h1.taps).map(|(a, b)| a - b).collect())
}

/// Sum over `m` of `a(m)·ρ^|m − lag|`, where `a` is the deterministic
/// autocorrelation of `d`. Equals `dᵀ R_lag d / σ²`.
fn lagged_quadratic_form(d: &[f64], rho: f64, lags: usize) -> Vec<f64> {
    let n = d.len();
    // a[m + n - 1] = Σ_i d_i d_{i-m}, m ∈ (−n, n)
    let nz: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0).collect();
    let mut a = vec![0.0; 2 * n - 1];
    for &i in &nz {
        for &j in &nz {
            a[i + n - 1 - j] += d[i] * d[j];
        }
    }
    (0..lags)
        .map(|lag| {
            a.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(idx, v)| {
                    let m = idx as i64 - (n as i64 - 1);
                    v * rho.powi((m - lag as i64).unsigned_abs() as i32)
                })
                .sum()
        })
        .collect()
}

/// `c_x² = (h0 − h1)ᵀ Σ_x (h0 − h1)`: output power of the difference filter.
pub fn difference_power(h0: &Channel, h1: &Channel, input: &Ar1Input) -> Result<f64> {
    let d = difference(h0, h1)?;
    if input.length() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs channel length {}",
            input.length(),
            d.len()
        )));
    }
    Ok(input.variance() * lagged_quadratic_form(&d, input.rho(), 1)[0])
}

/// Input variance `σ_x²` that makes the difference-filter power equal `target_cx2`.
pub fn solve_input_variance(target_cx2: f64, rho: f64, h0: &Channel, h1: &Channel) -> Result<f64> {
    if !(target_cx2 >= 0.0 && target_cx2.is_finite()) {
        return Err(Error::param(
            "target_cx2",
            format!("{target_cx2} must be non-negative"),
        ));
    }
    let unit = difference_power(h0, h1, &Ar1Input::new(1.0, rho, h0.len())?)?;
    if unit <= 0.0 {
        return Err(Error::param(
            "channels",
            "identical channels give zero difference power",
        ));
    }
    Ok(target_cx2 / unit)
}

/// `H_x`: the `p×p` autocovariance of the difference-filter output,
/// entry `(k, l) = (h0−h1)ᵀ R_{l−k} (h0−h1)`.
pub fn build_hx(
    h0: &Channel,
    h1: &Channel,
    input: &Ar1Input,
    samples: usize,
) -> Result<DMatrix<f64>> {
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let d = difference(h0, h1)?;
    if input.length() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs channel length {}",
            input.length(),
            d.len()
        )));
    }
    let acf = lagged_quadratic_form(&d, input.rho(), samples);
    let s2 = input.variance();
    Ok(DMatrix::from_fn(samples, samples, |k, l| {
        s2 * acf[k.abs_diff(l)]
    }))
}

/// Covariance of the stacked error vector `[z0(n), …, z0(n−p+1), z1(n), …, z1(n−p+1)]`
/// under one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    hypothesis: Hypothesis,
    samples: usize,
    matrix: DMatrix<f64>,
    hx: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn hypothesis(&self) -> Hypothesis {
        self.hypothesis
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn hx(&self) -> &DMatrix<f64> {
        &self.hx
    }

    /// The per-sample 2×2 covariance of `[z0(n), z1(n)]`.
    pub fn pair_covariance(&self) -> [[f64; 2]; 2] {
        let p = self.samples;
        [
            [self.matrix[(0, 0)], self.matrix[(0, p)]],
            [self.matrix[(p, 0)], self.matrix[(p, p)]],
        ]
    }

    /// Factorises the covariance for repeated sampling.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::new(&self.matrix)
    }
}

fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > PSD_TOL * scale {
                return Err(Error::param(name, "matrix is not symmetric"));
            }
        }
    }
    let eig = m.clone().symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * scale {
        return Err(Error::param(
            name,
            format!("matrix is not positive semidefinite (eigenvalue {min:e})"),
        ));
    }
    Ok(())
}

/// Assembles `Σ_ip` for `hypothesis` from `H_x` and the noise powers.
///
/// H0: `[[σ²I + H_x, σ²I], [σ²I, σ²I]]`; H1 swaps the diagonal blocks; H2/H3
/// are the same with `σ² = σ0² + σ1²`.
pub fn build_covariance(
    hypothesis: Hypothesis,
    hx: &DMatrix<f64>,
    noise: &NoisePowers,
    samples: usize,
) -> Result<CovarianceModel> {
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    if hx.nrows() != samples || hx.ncols() != samples {
        return Err(Error::DimensionMismatch(format!(
            "H_x is {}x{} but p = {samples}",
            hx.nrows(),
            hx.ncols()
        )));
    }
    check_psd(hx, "hx")?;
    let p = samples;
    let s = noise.white_power(hypothesis);
    let mut m = DMatrix::zeros(2 * p, 2 * p);
    for k in 0..p {
        m[(k, k)] = s;
        m[(p + k, p + k)] = s;
        m[(k, p + k)] = s;
        m[(p + k, k)] = s;
    }
    let offset = if hypothesis.channel_change() { p } else { 0 };
    for k in 0..p {
        for l in 0..p {
            m[(offset + k, offset + l)] += hx[(k, l)];
        }
    }
    Ok(CovarianceModel {
        hypothesis,
        samples,
        matrix: m,
        hx: hx.clone(),
    })
}

/// One-sample covariance `Σ_i1` with `H_x = c_x²`.
pub fn pair_model(
    hypothesis: Hypothesis,
    cx2: f64,
    noise: &NoisePowers,
) -> Result<CovarianceModel> {
    if !(cx2 >= 0.0 && cx2.is_finite()) {
        return Err(Error::param("cx2", format!("{cx2} must be non-negative")));
    }
    build_covariance(hypothesis, &DMatrix::from_element(1, 1, cx2), noise, 1)
}

/// Zero-mean Gaussian sampler backed by a Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    dim: usize,
    // row-major lower triangle, packed
    lower: Vec<f64>,
}

impl GaussianSampler {
    /// Factorises `cov`. A singular matrix is retried once with a diagonal
    /// jitter of `1e−12·trace/dim`.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let dim = cov.nrows();
        let chol = match cov.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-12 * cov.trace() / dim as f64;
                let mut jittered = cov.clone();
                for i in 0..dim {
                    jittered[(i, i)] += jitter;
                }
                jittered.cholesky().ok_or_else(|| {
                    Error::DegenerateCovariance(format!("Cholesky failed after jitter {jitter:e}"))
                })?
            }
        };
        let l = chol.l();
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                lower.push(l[(i, j)]);
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Draws into `out` (length `dim`), using `scratch` (length `dim`) for
    /// the standard normals.
    pub fn sample_into(&self, rng: &mut SimRng, scratch: &mut [f64], out: &mut [f64]) {
        debug_assert!(scratch.len() == self.dim && out.len() == self.dim);
        for w in scratch.iter_mut() {
            *w = rng.sample(StandardNormal);
        }
        let mut row = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let l = &self.lower[row..row + i + 1];
            *o = l.iter().zip(&scratch[..=i]).map(|(a, b)| a * b).sum();
            row += i + 1;
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> DVector<f64> {
        let mut scratch = vec![0.0; self.dim];
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut scratch, &mut out);
        DVector::from_vec(out)
    }
}

/// A single draw of the stacked error vector, deterministic in `seed`.
pub fn sample_error_vector(model: &CovarianceModel, seed: u64) -> Result<DVector<f64>> {
    let sampler = model.sampler()?;
    Ok(sampler.sample(&mut rng::stream(seed, 0)))
}

/// One piece of the piecewise scenario: samples up to and including `end`
/// use channel `channel`, with double-talk if `double_talk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub end: usize,
    pub channel: usize,
    pub double_talk: bool,
}

/// Synthetic echo scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub input_variance: f64,
    pub rho: f64,
    /// Channel noise power σ0².
    pub noise_power: f64,
    /// Double-talk power σ1²; zero disables double-talk entirely.
    pub double_talk_power: f64,
    pub channels: Vec<Channel>,
    pub segments: Vec<Segment>,
}

impl ScenarioConfig {
    /// The five-interval synthetic run: channel changes at samples 20 001 and
    /// 100 001, double-talk on samples 80 001–120 000, 140 000 samples total.
    pub fn standard(gain_db: f64, delays: [usize; 3], length: usize, decay: f64) -> Result<Self> {
        let channels = delays
            .iter()
            .map(|&d| Channel::exponential(gain_db, d, length, decay))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_variance: 1.0,
            rho: 0.5,
            noise_power: 0.001,
            double_talk_power: 1.0,
            channels,
            segments: vec![
                Segment {
                    end: 20_000,
                    channel: 0,
                    double_talk: false,
                },
                Segment {
                    end: 80_000,
                    channel: 1,
                    double_talk: false,
                },
                Segment {
                    end: 100_000,
                    channel: 1,
                    double_talk: true,
                },
                Segment {
                    end: 120_000,
                    channel: 2,
                    double_talk: true,
                },
                Segment {
                    end: 139_999,
                    channel: 2,
                    double_talk: false,
                },
            ],
        })
    }

    pub fn total_samples(&self) -> usize {
        self.segments.last().map(|s| s.end + 1).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::param("segments", "no segments"));
        }
        if self.channels.is_empty() {
            return Err(Error::param("channels", "no channels"));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::param("channels", "channels must share one length"));
        }
        let mut prev: Option<usize> = None;
        for seg in &self.segments {
            if let Some(p) = prev {
                if seg.end <= p {
                    return Err(Error::param(
                        "segments",
                        "segment ends must be strictly increasing",
                    ));
                }
            }
            if seg.channel >= self.channels.len() {
                return Err(Error::param(
                    "segments",
                    format!(
                        "segment references channel {} but only {} exist",
                        seg.channel,
                        self.channels.len()
                    ),
                ));
            }
            prev = Some(seg.end);
        }
        if !(self.input_variance > 0.0) {
            return Err(Error::param("input_variance", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::param("rho", "outside [0, 1)"));
        }
        if !(self.noise_power >= 0.0) || !(self.double_talk_power >= 0.0) {
            return Err(Error::param("noise", "powers must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ChannelChange,
    DoubleTalkStart,
    DoubleTalkEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub sample: usize,
    pub kind: EventKind,
}

/// Generated signals plus the ground truth they were built from.
#[derive(Debug, Clone)]
pub struct SignalBundle {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub n0: Vec<f64>,
    pub double_talk: Vec<bool>,
    /// Nominal label of each sample's segment: double-talk flag of the
    /// segment, channel-change flag if the segment's channel differs from the
    /// previous segment's.
    pub true_class: Vec<Hypothesis>,
    pub events: Vec<ScenarioEvent>,
}

impl SignalBundle {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with columns `n,x,y,n0,true_class`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,x,y,n0,true_class")?;
        for n in 0..self.len() {
            writeln!(
                w,
                "{n},{},{},{},{}",
                self.x[n], self.y[n], self.n0[n], self.true_class[n]
            )?;
        }
        Ok(())
    }
}

/// Samples `len` values of a stationary AR(1) process.
pub fn ar1_path(variance: f64, rho: f64, len: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut x = Vec::with_capacity(len);
    if len == 0 {
        return x;
    }
    let innov = (variance * (1.0 - rho * rho)).sqrt();
    let mut prev = variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
    x.push(prev);
    for _ in 1..len {
        prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
        x.push(prev);
    }
    x
}

/// Synthesises `x`, `y` and the noise streams for a piecewise scenario.
/// Input samples before `n = 0` are taken as zero.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<SignalBundle> {
    config.validate()?;
    let len = config.total_samples();
    let x = ar1_path(
        config.input_variance,
        config.rho,
        len,
        &mut rng::stream(seed, 0),
    );
    let mut noise_rng = rng::stream(seed, 1);
    let s0 = config.noise_power.sqrt();
    let n0: Vec<f64> = (0..len)
        .map(|_| s0 * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut dt_rng = rng::stream(seed, 2);
    let s1 = config.double_talk_power.sqrt();
    let dt_enabled = config.double_talk_power > 0.0;

    let mut y = vec![0.0; len];
    let mut double_talk = vec![false; len];
    let mut true_class = vec![Hypothesis::H0; len];
    let mut events = Vec::new();
    let mut start = 0usize;
    let mut prev_seg: Option<&Segment> = None;
    for seg in &config.segments {
        let g = config.channels[seg.channel].taps();
        let dt = seg.double_talk && dt_enabled;
        let cc = prev_seg.is_some_and(|p| p.channel != seg.channel);
        if cc {
            events.push(ScenarioEvent {
                sample: start,
                kind: EventKind::ChannelChange,
            });
        }
        let was_dt = prev_seg.is_some_and(|p| p.double_talk && dt_enabled);
        if dt && !was_dt {
            events.push(ScenarioEvent {
                sample: start,
                kind: EventKind::DoubleTalkStart,
            });
        } else if !dt && was_dt {
            events.push(ScenarioEvent {
                sample: start,
                kind: EventKind::DoubleTalkEnd,
            });
        }
        let label = Hypothesis::from_flags(dt, cc);
        let first_tap = g.iter().position(|&t| t != 0.0).unwrap_or(g.len());
        for n in start..=seg.end {
            let hi = g.len().min(n + 1);
            let echo: f64 = (first_tap..hi).map(|k| g[k] * x[n - k]).sum();
            let mut v = echo + n0[n];
            if dt {
                v += s1 * dt_rng.sample::<f64, _>(StandardNormal);
            }
            y[n] = v;
            double_talk[n] = dt;
            true_class[n] = label;
        }
        start = seg.end + 1;
        prev_seg = Some(seg);
    }
    Ok(SignalBundle {
        x,
        y,
        n0,
        double_talk,
        true_class,
        events,
    })
}
