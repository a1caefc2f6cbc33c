//! Experiment configuration files.
//!
//! A config is a TOML document with a top-level `kind` and optional sections
//! `[noise]`, `[curves]`, `[monte_carlo]`, `[channels]`, `[control]`,
//! `[scenario]` and `[classify]`. Unknown keys are rejected. Parsing and
//! validation report problems as [`Diagnostic`]s carrying the offending line
//! where it can be located.

use std::fmt;
use std::path::PathBuf;

use eclab_core::control::ConfigViolation;
use eclab_core::gamma::CorrelatedSetup;
use eclab_core::signal::{Channel, ScenarioConfig, Segment};
use eclab_core::{ControlConfig, GuardMode, NoisePowers};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    TheoryCurves,
    McCurves,
    Simulate,
    ClassifyStream,
}

impl Kind {
    /// Name of the CLI subcommand that runs this kind.
    pub fn subcommand(self) -> &'static str {
        match self {
            Kind::TheoryCurves => "theory-curves",
            Kind::McCurves => "mc-curves",
            Kind::Simulate => "simulate",
            Kind::ClassifyStream => "classify",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::TheoryCurves => "theory_curves",
            Kind::McCurves => "mc_curves",
            Kind::Simulate => "simulate",
            Kind::ClassifyStream => "classify_stream",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Kind::McCurves | Kind::Simulate)
    }
}

/// A scalar or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma0_sq: OneOrMany,
    pub sigma1_sq: OneOrMany,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSection {
    pub cx2: Vec<f64>,
    pub p: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McModeName {
    IidPairs,
    Correlated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub runs: usize,
    pub mode: McModeName,
    /// Also emit theory rows next to the Monte Carlo rows.
    #[serde(default = "yes")]
    pub theory: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub gain_db: f64,
    pub delays: Vec<usize>,
    pub length: usize,
    pub decay: f64,
    /// AR-1 correlation of the far-end input.
    pub rho: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            gain_db: -10.0,
            delays: vec![0, 10, 20],
            length: 1024,
            decay: 0.95,
            rho: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardModeName {
    Hysteresis,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub mu: [f64; 4],
    pub test_interval: usize,
    pub copy_delay: usize,
    pub guard_epsilon: f64,
    pub guard_mode: GuardModeName,
    pub window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<f64>,
    pub filter_length: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            mu: [0.1, 1.0, 0.1, 0.3],
            test_interval: 1024,
            copy_delay: 512,
            guard_epsilon: 0.25,
            guard_mode: GuardModeName::Hysteresis,
            window: 32,
            threshold_override: None,
            filter_length: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    #[default]
    Synthetic,
    Csv,
    Pcm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    /// Last sample (inclusive) of the segment.
    pub end: usize,
    pub channel: usize,
    pub double_talk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub source: SignalSource,
    pub input_variance: f64,
    /// Defaults to the five-interval layout with channel changes at 20 001
    /// and 100 001 and double-talk on 80 001–120 000.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentSpec>>,
    /// CSV with columns `x`, `y` and optionally `n0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// 16-bit little-endian mono PCM streams.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    /// Also write the generated signals (synthetic source only).
    pub export_signals: bool,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            source: SignalSource::Synthetic,
            input_variance: 1.0,
            segments: None,
            path: None,
            x_path: None,
            y_path: None,
            n0_path: None,
            sample_rate: None,
            export_signals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    /// CSV with columns `t0` and `t1`; `-` reads standard input.
    pub input: PathBuf,
    pub window: usize,
    #[serde(default)]
    pub tie_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub noise: NoiseSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CurvesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McSection>,
    #[serde(default)]
    pub channels: ChannelSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifySection>,
}

/// A problem with a config, located at `line` (1-based) when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Parses a config document.
pub fn parse(text: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let field = line
            .and_then(|l| text.lines().nth(l - 1))
            .map(|l| l.split('=').next().unwrap_or("").trim().to_string())
            .filter(|f| !f.is_empty())
            .unwrap_or_else(|| "config".into());
        vec![Diagnostic {
            field,
            line,
            message: e.message().trim().to_string(),
        }]
    })
}

/// Line of `section.key` (or of the section header when the key is absent).
/// Top-level keys have no section.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let (section, key) = match path.split_once('.') {
        Some((s, k)) => (s, k),
        None => ("", path),
    };
    let mut current = "";
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[') {
            current = name
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Collector<'a> {
    text: Option<&'a str>,
    out: Vec<Diagnostic>,
}

impl Collector<'_> {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        let field = field.into();
        let line = self.text.and_then(|t| locate(t, &field));
        self.out.push(Diagnostic {
            field,
            line,
            message: message.into(),
        });
    }
}

impl ExperimentConfig {
    /// Every invariant violation, without running anything. `text` is the
    /// source document, used to attach line numbers.
    pub fn validate(&self, text: Option<&str>) -> Vec<Diagnostic> {
        let mut c = Collector {
            text,
            out: Vec::new(),
        };
        self.check_noise(&mut c);
        if self.kind.stochastic() && self.seed.is_none() {
            let needs = match self.kind {
                Kind::Simulate => self.scenario_section().source == SignalSource::Synthetic,
                _ => true,
            };
            if needs {
                c.push(
                    "seed",
                    format!("kind {} is stochastic and needs a seed", self.kind.name()),
                );
            }
        }
        match self.kind {
            Kind::TheoryCurves => self.check_curves(&mut c),
            Kind::McCurves => {
                self.check_curves(&mut c);
                match &self.monte_carlo {
                    None => c.push(
                        "monte_carlo",
                        "section [monte_carlo] is required for mc_curves",
                    ),
                    Some(mc) => {
                        if mc.runs == 0 {
                            c.push("monte_carlo.runs", "must be at least 1");
                        }
                        if mc.mode == McModeName::Correlated {
                            self.check_channels(&mut c, 2);
                        }
                    }
                }
            }
            Kind::Simulate => {
                self.check_single_noise(&mut c);
                self.check_control(&mut c);
                self.check_scenario(&mut c);
            }
            Kind::ClassifyStream => {
                self.check_single_noise(&mut c);
                match &self.classify {
                    None => c.push(
                        "classify",
                        "section [classify] is required for classify_stream",
                    ),
                    Some(cl) => {
                        if cl.window == 0 {
                            c.push("classify.window", "window p must be at least 1");
                        }
                        if !(cl.tie_epsilon >= 0.0) {
                            c.push("classify.tie_epsilon", "must be non-negative");
                        }
                        if let Some(t) = cl.threshold_override {
                            if !(t > 0.0 && t.is_finite()) {
                                c.push(
                                    "classify.threshold_override",
                                    format!("{t} must be positive"),
                                );
                            }
                        }
                        if cl.input.as_os_str().is_empty() {
                            c.push("classify.input", "path must not be empty");
                        }
                    }
                }
            }
        }
        c.out
    }

    fn check_noise(&self, c: &mut Collector) {
        for (field, v) in [
            ("noise.sigma0_sq", &self.noise.sigma0_sq),
            ("noise.sigma1_sq", &self.noise.sigma1_sq),
        ] {
            let vals = v.values();
            if vals.is_empty() {
                c.push(field, "must not be empty");
            }
            if let Some(bad) = vals.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                c.push(field, format!("noise powers must be positive, got {bad}"));
            }
        }
    }

    fn check_single_noise(&self, c: &mut Collector) {
        for (field, v) in [
            ("noise.sigma0_sq", &self.noise.sigma0_sq),
            ("noise.sigma1_sq", &self.noise.sigma1_sq),
        ] {
            if v.values().len() > 1 {
                c.push(
                    field,
                    format!("kind {} takes a single value", self.kind.name()),
                );
            }
        }
    }

    fn check_curves(&self, c: &mut Collector) {
        let Some(cu) = &self.curves else {
            c.push(
                "curves",
                format!("section [curves] is required for {}", self.kind.name()),
            );
            return;
        };
        if cu.cx2.is_empty() {
            c.push("curves.cx2", "c_x² grid must not be empty");
        }
        if let Some(bad) = cu.cx2.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            c.push(
                "curves.cx2",
                format!("c_x² values must be non-negative, got {bad}"),
            );
        }
        if cu.p.is_empty() {
            c.push("curves.p", "window list must not be empty");
        }
        if cu.p.contains(&0) {
            c.push("curves.p", "window lengths must be at least 1");
        }
    }

    fn check_channels(&self, c: &mut Collector, needed: usize) {
        let ch = &self.channels;
        if ch.delays.len() < needed {
            c.push(
                "channels.delays",
                format!("needs at least {needed} delays, got {}", ch.delays.len()),
            );
        }
        if needed == 2 && ch.delays.len() >= 2 && ch.delays[0] == ch.delays[1] {
            c.push("channels.delays", "the two channels must differ");
        }
        if let Some(&d) = ch.delays.iter().max() {
            if d >= ch.length {
                c.push(
                    "channels.length",
                    format!("length {} must exceed every delay (max {d})", ch.length),
                );
            }
        }
        if !(ch.decay > 0.0 && ch.decay < 1.0) {
            c.push("channels.decay", format!("{} is outside (0, 1)", ch.decay));
        }
        if !ch.gain_db.is_finite() {
            c.push("channels.gain_db", "must be finite");
        }
        if !(0.0..1.0).contains(&ch.rho) {
            c.push("channels.rho", format!("{} is outside [0, 1)", ch.rho));
        }
    }

    fn check_control(&self, c: &mut Collector) {
        let Some(noise) = self.noise_settings().into_iter().next() else {
            return;
        };
        for ConfigViolation { field, message } in self.control_config(noise).violations() {
            c.push(format!("control.{field}"), message);
        }
    }

    fn check_scenario(&self, c: &mut Collector) {
        let sc = self.scenario_section();
        match sc.source {
            SignalSource::Synthetic => {
                self.check_channels(c, 1);
                if !(sc.input_variance > 0.0 && sc.input_variance.is_finite()) {
                    c.push("scenario.input_variance", "must be positive");
                }
                if let Some(segs) = &sc.segments {
                    if segs.is_empty() {
                        c.push("scenario.segments", "must not be empty");
                    }
                    if segs.windows(2).any(|w| w[1].end <= w[0].end) {
                        c.push(
                            "scenario.segments",
                            "segment ends must be strictly increasing",
                        );
                    }
                    if let Some(s) = segs
                        .iter()
                        .find(|s| s.channel >= self.channels.delays.len())
                    {
                        c.push(
                            "scenario.segments",
                            format!(
                                "segment references channel {} but only {} are defined",
                                s.channel,
                                self.channels.delays.len()
                            ),
                        );
                    }
                } else if self.channels.delays.len() < 3 {
                    c.push(
                        "channels.delays",
                        "the default scenario needs three channels",
                    );
                }
            }
            SignalSource::Csv => {
                if sc.path.is_none() {
                    c.push("scenario.path", "CSV source needs a path");
                }
            }
            SignalSource::Pcm => {
                if sc.x_path.is_none() {
                    c.push("scenario.x_path", "PCM source needs x_path");
                }
                if sc.y_path.is_none() {
                    c.push("scenario.y_path", "PCM source needs y_path");
                }
                if !sc.sample_rate.is_some_and(|r| r > 0) {
                    c.push(
                        "scenario.sample_rate",
                        "PCM source needs a positive sample_rate",
                    );
                }
            }
        }
    }

    /// Cartesian product of the configured noise powers.
    pub fn noise_settings(&self) -> Vec<NoisePowers> {
        let s1 = self.noise.sigma1_sq.values();
        self.noise
            .sigma0_sq
            .values()
            .into_iter()
            .flat_map(|a| s1.iter().filter_map(move |&b| NoisePowers::new(a, b).ok()))
            .collect()
    }

    pub fn control_config(&self, noise: NoisePowers) -> ControlConfig {
        let s = &self.control;
        ControlConfig {
            mu: s.mu,
            test_interval: s.test_interval,
            copy_delay: s.copy_delay,
            guard_epsilon: s.guard_epsilon,
            guard_mode: match s.guard_mode {
                GuardModeName::Hysteresis => GuardMode::Hysteresis,
                GuardModeName::Literal => GuardMode::Literal,
            },
            window: s.window,
            threshold_override: s.threshold_override,
            noise,
            filter_length: s.filter_length,
        }
    }

    pub fn scenario_section(&self) -> ScenarioSection {
        self.scenario.clone().unwrap_or_default()
    }

    pub fn correlated_setup(&self) -> CorrelatedSetup {
        let ch = &self.channels;
        CorrelatedSetup {
            gain_db: ch.gain_db,
            delays: [ch.delays[0], ch.delays[1]],
            length: ch.length,
            decay: ch.decay,
            rho: ch.rho,
        }
    }

    /// Synthetic scenario with the configured channels and noise.
    pub fn scenario_config(&self, noise: &NoisePowers) -> eclab_core::Result<ScenarioConfig> {
        let ch = &self.channels;
        let sc = self.scenario_section();
        let channels = ch
            .delays
            .iter()
            .map(|&d| Channel::exponential(ch.gain_db, d, ch.length, ch.decay))
            .collect::<Result<_, _>>()?;
        let mut cfg = ScenarioConfig::standard(ch.gain_db, [0, 0, 0], ch.length, ch.decay)?;
        cfg.channels = channels;
        cfg.rho = ch.rho;
        cfg.input_variance = sc.input_variance;
        cfg.noise_power = noise.sigma0_sq();
        cfg.double_talk_power = noise.sigma1_sq();
        if let Some(segs) = &sc.segments {
            cfg.segments = segs
                .iter()
                .map(|s| Segment {
                    end: s.end,
                    channel: s.channel,
                    double_talk: s.double_talk,
                })
                .collect();
        }
        Ok(cfg)
    }
}
