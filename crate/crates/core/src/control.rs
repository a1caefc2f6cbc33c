//! Shadow-filter echo canceler driven by the four-way classifier.
//!
//! The shadow filter `ĥ0` adapts at every sample with the step size of the
//! current class. Every `N_t` samples the last `p` errors of both filters
//! are classified; the decision sets the step size and may schedule a copy
//! of `ĥ0` into the main filter `ĥ1` after `N_c` samples.

use std::io::Write;

use crate::classifier::{classify, threshold, DecisionThreshold, SufficientStatistic};
use crate::gamma::format_number;
use crate::signal::{Hypothesis, NoisePowers, SignalBundle};
use crate::{Error, Result};

const REGULARIZATION_SCALE: f64 = 1e-8;

/// NLMS filter `h ← h + μ·e·x / (xᵀx + δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveFilter {
    coefficients: Vec<f64>,
    step_size: f64,
    regularization: f64,
}

impl AdaptiveFilter {
    pub fn new(coefficients: Vec<f64>, step_size: f64, regularization: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::param("filter_length", "must be at least 1"));
        }
        check_step(step_size)?;
        if !(regularization > 0.0 && regularization.is_finite()) {
            return Err(Error::param(
                "regularization",
                format!("{regularization} must be positive"),
            ));
        }
        Ok(Self {
            coefficients,
            step_size,
            regularization,
        })
    }

    pub fn zeros(length: usize, step_size: f64, regularization: f64) -> Result<Self> {
        Self::new(vec![0.0; length], step_size, regularization)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn set_step_size(&mut self, mu: f64) -> Result<()> {
        check_step(mu)?;
        self.step_size = mu;
        Ok(())
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// `hᵀx`, with `x[k]` the input `k` samples ago.
    pub fn output(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }

    /// One NLMS update, returning the new filter.
    pub fn nlms_step(&self, x: &[f64], error: f64) -> Result<Self> {
        if x.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "regressor of length {} for a {}-tap filter",
                x.len(),
                self.coefficients.len()
            )));
        }
        let mut next = self.clone();
        next.update(x, error, dot(x, x), self.regularization);
        Ok(next)
    }

    fn update(&mut self, x: &[f64], error: f64, energy: f64, delta: f64) {
        let g = self.step_size * error / (energy + delta);
        for (h, xv) in self.coefficients.iter_mut().zip(x) {
            *h += g * xv;
        }
    }

    fn copy_from(&mut self, other: &AdaptiveFilter) {
        self.coefficients.copy_from_slice(&other.coefficients);
    }
}

fn check_step(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 2.0) {
        return Err(Error::param(
            "mu",
            format!("{mu} is outside the NLMS range (0, 2)"),
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// How the `ε` band around `‖z0‖² = ‖z1‖²` gates changes between paired
/// classes (H0↔H1, H2↔H3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuardMode {
    /// Keep the current class while the norm ratio is inside the band.
    #[default]
    Hysteresis,
    /// Allow a paired change only while the norm ratio is inside the band.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    /// Step size for each class, indexed by hypothesis.
    pub mu: [f64; 4],
    pub test_interval: usize,
    pub copy_delay: usize,
    pub guard_epsilon: f64,
    pub guard_mode: GuardMode,
    pub window: usize,
    pub threshold_override: Option<f64>,
    pub noise: NoisePowers,
    pub filter_length: usize,
}

/// A rejected configuration field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl ControlConfig {
    pub fn standard(noise: NoisePowers) -> Self {
        Self {
            mu: [0.1, 1.0, 0.1, 0.3],
            test_interval: 1024,
            copy_delay: 512,
            guard_epsilon: 0.25,
            guard_mode: GuardMode::Hysteresis,
            window: 32,
            threshold_override: None,
            noise,
            filter_length: 1024,
        }
    }

    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut push = |field, message: String| out.push(ConfigViolation { field, message });
        for (i, &m) in self.mu.iter().enumerate() {
            if !(m > 0.0 && m < 2.0) {
                push(
                    "mu",
                    format!("mu{i} = {m} is outside the NLMS stability range (0, 2)"),
                );
            }
        }
        if self.test_interval == 0 {
            push("test_interval", "must be at least 1".into());
        }
        if self.copy_delay == 0 || self.copy_delay >= self.test_interval {
            push(
                "copy_delay",
                format!(
                    "copy delay must satisfy 0 < N_c < N_t (got N_c = {}, N_t = {})",
                    self.copy_delay, self.test_interval
                ),
            );
        }
        if !(self.guard_epsilon >= 0.0 && self.guard_epsilon < 1.0) {
            push(
                "guard_epsilon",
                format!("{} is outside [0, 1)", self.guard_epsilon),
            );
        }
        if self.window == 0 || self.window > self.test_interval {
            push(
                "window",
                format!(
                    "window p = {} must satisfy 1 ≤ p ≤ N_t = {}",
                    self.window, self.test_interval
                ),
            );
        }
        if let Some(t) = self.threshold_override {
            if !(t > 0.0 && t.is_finite()) {
                push("threshold_override", format!("{t} must be positive"));
            }
        }
        if self.filter_length == 0 {
            push("filter_length", "must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidParameter {
                name: v.field,
                reason: v.message,
            }),
        }
    }

    pub fn decision_threshold(&self) -> Result<DecisionThreshold> {
        match self.threshold_override {
            Some(t) => DecisionThreshold::from_scaled(t, self.window),
            None => threshold(&self.noise, self.window),
        }
    }
}

/// Fixed-length history of the most recent values.
#[derive(Debug, Clone)]
struct Ring {
    data: Vec<f64>,
    head: usize,
}

impl Ring {
    fn new(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
            head: 0,
        }
    }

    fn push(&mut self, v: f64) {
        self.data[self.head] = v;
        self.head = (self.head + 1) % self.data.len();
    }

    fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Input regressor `[x(n), x(n−1), …, x(n−N+1)]` kept contiguous by
/// writing each sample twice into a buffer of length `2N`.
#[derive(Debug, Clone)]
struct Regressor {
    buf: Vec<f64>,
    pos: usize,
    len: usize,
    energy: f64,
    since_refresh: usize,
}

impl Regressor {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; 2 * len],
            pos: 0,
            len,
            energy: 0.0,
            since_refresh: 0,
        }
    }

    fn push(&mut self, x: f64) {
        self.pos = (self.pos + self.len - 1) % self.len;
        let old = self.buf[self.pos];
        self.buf[self.pos] = x;
        self.buf[self.pos + self.len] = x;
        self.since_refresh += 1;
        if self.since_refresh >= self.len {
            self.energy = dot(self.slice(), self.slice());
            self.since_refresh = 0;
        } else {
            self.energy = (self.energy + x * x - old * old).max(0.0);
        }
    }

    fn slice(&self) -> &[f64] {
        &self.buf[self.pos..self.pos + self.len]
    }
}

/// Decision bookkeeping of the control loop.
#[derive(Debug, Clone)]
pub struct ControlState {
    pub current_class: Hypothesis,
    pub pending_copy: Option<usize>,
    pub last_test: Option<usize>,
    z0_window: Ring,
    z1_window: Ring,
}

impl ControlState {
    fn new(window: usize) -> Self {
        Self {
            current_class: Hypothesis::H1,
            pending_copy: None,
            last_test: None,
            z0_window: Ring::new(window),
            z1_window: Ring::new(window),
        }
    }

    /// `[‖z0‖², ‖z1‖²]` over the current window.
    pub fn statistic(&self) -> SufficientStatistic {
        SufficientStatistic {
            t0: self.z0_window.energy(),
            t1: self.z1_window.energy(),
            p: self.z0_window.data.len(),
        }
    }
}

/// Outcome of a test instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestDecision {
    pub n: usize,
    pub statistic: SufficientStatistic,
    /// Output of the decision rule before the guard band.
    pub raw: Hypothesis,
    /// Class adopted after the guard band.
    pub class: Hypothesis,
    pub copy_scheduled: bool,
}

/// Per-sample output of the canceler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutput {
    pub z0: f64,
    pub z1: f64,
    pub copied: bool,
    pub test: Option<TestDecision>,
}

/// One row of the trace. SE values are absent when the noise reference is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub n: usize,
    pub class: Hypothesis,
    pub mu: f64,
    pub se0: Option<f64>,
    pub se1: Option<f64>,
    pub copied: bool,
}

#[derive(Debug, Clone)]
pub struct EchoCanceler {
    config: ControlConfig,
    threshold: DecisionThreshold,
    shadow: AdaptiveFilter,
    main: AdaptiveFilter,
    state: ControlState,
    regressor: Regressor,
    n: usize,
}

impl EchoCanceler {
    /// Starts from zero filters in class H1 with step size `μ1`.
    pub fn new(config: ControlConfig) -> Result<Self> {
        let n = config.filter_length;
        Self::with_filters(config, vec![0.0; n], vec![0.0; n])
    }

    pub fn with_filters(config: ControlConfig, shadow: Vec<f64>, main: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if shadow.len() != config.filter_length || main.len() != config.filter_length {
            return Err(Error::DimensionMismatch(format!(
                "initial filters of length {} and {} for N = {}",
                shadow.len(),
                main.len(),
                config.filter_length
            )));
        }
        let threshold = config.decision_threshold()?;
        let mu = config.mu[Hypothesis::H1.index()];
        let delta = REGULARIZATION_SCALE * config.filter_length as f64;
        Ok(Self {
            threshold,
            shadow: AdaptiveFilter::new(shadow, mu, delta)?,
            main: AdaptiveFilter::new(main, mu, delta)?,
            state: ControlState::new(config.window),
            regressor: Regressor::new(config.filter_length),
            n: 0,
            config,
        })
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn state(&self) -> &ControlState {
        &self.state
    }

    pub fn shadow(&self) -> &AdaptiveFilter {
        &self.shadow
    }

    pub fn main(&self) -> &AdaptiveFilter {
        &self.main
    }

    pub fn threshold(&self) -> &DecisionThreshold {
        &self.threshold
    }

    pub fn step_size(&self) -> f64 {
        self.shadow.step_size()
    }

    /// Index of the next sample to be processed.
    pub fn sample_index(&self) -> usize {
        self.n
    }

    pub fn process_sample(&mut self, x: f64, y: f64) -> SampleOutput {
        let n = self.n;
        self.regressor.push(x);
        let xs = self.regressor.slice();
        let z0 = y - self.shadow.output(xs);
        let z1 = y - self.main.output(xs);
        self.state.z0_window.push(z0);
        self.state.z1_window.push(z1);

        let mut copied = false;
        if self.state.pending_copy == Some(n) {
            self.state.pending_copy = None;
            let stat = self.state.statistic();
            if stat.t0 < stat.t1 {
                self.main.copy_from(&self.shadow);
                copied = true;
            }
        }

        let energy = self.regressor.energy;
        let n_taps = self.config.filter_length as f64;
        let delta = REGULARIZATION_SCALE * n_taps * (energy / n_taps).max(f64::EPSILON);
        self.shadow
            .update(self.regressor.slice(), z0, energy, delta);

        let mut test = None;
        if (n + 1).is_multiple_of(self.config.test_interval) {
            test = Some(self.run_test(n));
        }
        self.n += 1;
        SampleOutput {
            z0,
            z1,
            copied,
            test,
        }
    }

    fn run_test(&mut self, n: usize) -> TestDecision {
        let stat = self.state.statistic();
        let raw = classify(&stat, &self.threshold, 0.0).expect("window matches threshold");
        let current = self.state.current_class;
        let ratio = stat.t0 / stat.t1;
        let eps = self.config.guard_epsilon;
        let in_band = ratio >= 1.0 - eps && ratio <= 1.0 + eps;
        let class = if raw == current.partner() {
            match self.config.guard_mode {
                GuardMode::Hysteresis if in_band => current,
                GuardMode::Literal if !in_band => current,
                _ => raw,
            }
        } else {
            raw
        };
        self.state.current_class = class;
        self.state.last_test = Some(n);
        let mu = self.config.mu[class.index()];
        self.shadow.step_size = mu;
        self.main.step_size = mu;
        let copy_scheduled = !class.double_talk() && stat.t0 < stat.t1;
        if copy_scheduled {
            self.state.pending_copy = Some(n + self.config.copy_delay);
        }
        TestDecision {
            n,
            statistic: stat,
            raw,
            class,
            copy_scheduled,
        }
    }
}

/// Full pass over a signal: per-sample trace plus the test decisions.
#[derive(Debug, Clone)]
pub struct CancelerRun {
    pub records: Vec<TraceRecord>,
    pub tests: Vec<TestDecision>,
    pub shadow: Vec<f64>,
    pub main: Vec<f64>,
}

/// Runs the canceler over a generated scenario, starting from zero filters.
pub fn run_canceler(bundle: &SignalBundle, config: &ControlConfig) -> Result<CancelerRun> {
    run_canceler_signals(&bundle.x, &bundle.y, Some(&bundle.n0), config, None)
}

/// Runs the canceler over raw signals. `n0` enables the SE columns;
/// `initial` gives the starting `(ĥ0, ĥ1)`.
pub fn run_canceler_signals(
    x: &[f64],
    y: &[f64],
    n0: Option<&[f64]>,
    config: &ControlConfig,
    initial: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<CancelerRun> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} samples, y has {}",
            x.len(),
            y.len()
        )));
    }
    if let Some(n0) = n0 {
        if n0.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "n0 has {} samples, x has {}",
                n0.len(),
                x.len()
            )));
        }
    }
    let mut canceler = match initial {
        Some((h0, h1)) => EchoCanceler::with_filters(config.clone(), h0, h1)?,
        None => EchoCanceler::new(config.clone())?,
    };
    let mut records = Vec::with_capacity(x.len());
    let mut tests = Vec::new();
    for n in 0..x.len() {
        let out = canceler.process_sample(x[n], y[n]);
        let noise = n0.map(|v| v[n]);
        records.push(TraceRecord {
            n,
            class: canceler.state.current_class,
            mu: canceler.step_size(),
            se0: noise.map(|v| (out.z0 - v).powi(2)),
            se1: noise.map(|v| (out.z1 - v).powi(2)),
            copied: out.copied,
        });
        if let Some(t) = out.test {
            tests.push(t);
        }
    }
    Ok(CancelerRun {
        records,
        tests,
        shadow: canceler.shadow.coefficients.clone(),
        main: canceler.main.coefficients.clone(),
    })
}

/// Length of the trailing moving average applied to SE before conversion to dB.
pub const SE_SMOOTHING: usize = 1024;
const SE_FLOOR: f64 = 1e-12;

/// Trailing moving average over `window` samples (fewer at the start),
/// floored and converted to dB.
pub fn smooth_db(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (n, v) in values.iter().enumerate() {
        acc += v;
        if n >= window {
            acc -= values[n - window];
        }
        if n % window == window - 1 {
            // recompute to stop drift
            acc = values[n + 1 - window..=n].iter().sum();
        }
        let count = (n + 1).min(window) as f64;
        out.push(10.0 * (acc / count).max(SE_FLOOR).log10());
    }
    out
}

/// Writes `n,class,mu,se0_db,se1_db,copied`; SE columns are empty without a
/// noise reference.
pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut w: W) -> std::io::Result<()> {
    let smooth = |pick: fn(&TraceRecord) -> Option<f64>| -> Option<Vec<f64>> {
        let v: Option<Vec<f64>> = records.iter().map(pick).collect();
        v.map(|v| smooth_db(&v, SE_SMOOTHING))
    };
    let se0 = smooth(|r| r.se0);
    let se1 = smooth(|r| r.se1);
    writeln!(w, "n,class,mu,se0_db,se1_db,copied")?;
    for (k, r) in records.iter().enumerate() {
        let cell =
            |s: &Option<Vec<f64>>| s.as_ref().map_or_else(String::new, |v| format_number(v[k]));
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            r.class,
            format_number(r.mu),
            cell(&se0),
            cell(&se1),
            u8::from(r.copied)
        )?;
    }
    Ok(())
}
