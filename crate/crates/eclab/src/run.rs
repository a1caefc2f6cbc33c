//! Dispatch of a validated config to the library, and output writing.
//!
//! Every output is produced in memory first, so a failing run leaves no files
//! behind. Each successful run writes `manifest.json` next to its CSVs.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use eclab_core::control::write_trace_csv;
use eclab_core::gamma::{format_number, write_sweep_csv, McMode, McSweep, SweepOptions};
use eclab_core::signal::generate_scenario;
use eclab_core::{
    classify, curve_sweep, rng, run_canceler_signals, threshold, DecisionThreshold, Hypothesis,
    NoisePowers, SufficientStatistic,
};
use serde::Serialize;

use crate::config::{Diagnostic, ExperimentConfig, Kind, McModeName, SignalSource};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration")]
    Config(Vec<Diagnostic>),
    #[error("numerical failure: {0}")]
    Numerical(eclab_core::Error),
    #[error("{0}")]
    Input(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Input(_) | RunError::Io { .. } => 1,
        }
    }
}

impl From<eclab_core::Error> for RunError {
    fn from(e: eclab_core::Error) -> Self {
        match e {
            e if e.is_numerical() => RunError::Numerical(e),
            eclab_core::Error::InvalidParameter { name, reason } => {
                RunError::Config(vec![Diagnostic {
                    field: name.to_string(),
                    line: None,
                    message: reason,
                }])
            }
            e => RunError::Input(e.to_string()),
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    /// Directory that relative input paths are resolved against.
    pub base_dir: PathBuf,
    /// Name of the config file, echoed in the manifest.
    pub config_name: String,
}

/// Files written by a run, plus human-readable summary lines.
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Output {
    name: &'static str,
    bytes: Vec<u8>,
}

pub fn run(
    cfg: &ExperimentConfig,
    text: Option<&str>,
    opts: &RunOptions,
) -> Result<RunReport, RunError> {
    let diagnostics = cfg.validate(text);
    if !diagnostics.is_empty() {
        return Err(RunError::Config(diagnostics));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| RunError::Input(format!("cannot start worker pool: {e}")))?;
    let (outputs, summary) = pool.install(|| match cfg.kind {
        Kind::TheoryCurves | Kind::McCurves => sweep(cfg),
        Kind::Simulate => simulate(cfg, &opts.base_dir),
        Kind::ClassifyStream => classify_stream(cfg, &opts.base_dir),
    })?;

    let manifest = manifest(cfg, opts, &outputs)?;
    fs::create_dir_all(&opts.out_dir)
        .map_err(io_err(format!("creating {}", opts.out_dir.display())))?;
    let mut files = Vec::new();
    for o in outputs.iter().chain(std::iter::once(&Output {
        name: "manifest.json",
        bytes: manifest,
    })) {
        let path = opts.out_dir.join(o.name);
        fs::write(&path, &o.bytes).map_err(io_err(format!("writing {}", path.display())))?;
        files.push(path);
    }
    Ok(RunReport { files, summary })
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> io::Result<()>>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn sweep(cfg: &ExperimentConfig) -> Result<(Vec<Output>, Vec<String>), RunError> {
    let curves = cfg.curves.as_ref().expect("validated");
    let mut rows = Vec::new();
    for (k, noise) in cfg.noise_settings().iter().enumerate() {
        let options = match (cfg.kind, &cfg.monte_carlo) {
            (Kind::McCurves, Some(mc)) => SweepOptions {
                theory: mc.theory,
                monte_carlo: Some(McSweep {
                    runs: mc.runs,
                    // later noise settings get their own streams
                    seed: match k {
                        0 => cfg.seed.expect("validated"),
                        _ => rng::stream_id(&[cfg.seed.expect("validated"), k as u64]),
                    },
                    mode: match mc.mode {
                        McModeName::IidPairs => McMode::IidPairs,
                        McModeName::Correlated => McMode::Correlated(cfg.correlated_setup()),
                    },
                }),
            },
            _ => SweepOptions {
                theory: true,
                monte_carlo: None,
            },
        };
        rows.extend(curve_sweep(noise, &curves.cx2, &curves.p, &options)?);
    }
    let summary = vec![format!(
        "{} rows over {} c_x² values, {} window lengths, {} noise settings",
        rows.len(),
        curves.cx2.len(),
        curves.p.len(),
        cfg.noise_settings().len()
    )];
    let bytes = csv_bytes(|w| write_sweep_csv(&rows, w));
    Ok((
        vec![Output {
            name: "curves.csv",
            bytes,
        }],
        summary,
    ))
}

struct Signals {
    x: Vec<f64>,
    y: Vec<f64>,
    n0: Option<Vec<f64>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_pcm(path: &Path) -> Result<Vec<f64>, RunError> {
    let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    if bytes.len() % 2 != 0 {
        return Err(RunError::Input(format!(
            "{}: odd byte count for 16-bit PCM",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect())
}

fn open_csv(path: &Path) -> Result<csv::Reader<Box<dyn Read>>, RunError> {
    let src: Box<dyn Read> = if path.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(fs::File::open(path).map_err(io_err(format!("opening {}", path.display())))?)
    };
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(src))
}

/// Reads the named columns (the last ones may be optional) as numbers.
fn read_columns(
    path: &Path,
    names: &[&str],
    required: usize,
) -> Result<Vec<Option<Vec<f64>>>, RunError> {
    let mut rdr = open_csv(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let idx: Vec<Option<usize>> = names
        .iter()
        .map(|n| headers.iter().position(|h| h == *n))
        .collect();
    if let Some(k) = idx[..required].iter().position(Option::is_none) {
        return Err(RunError::Input(format!(
            "{}: missing column `{}`",
            path.display(),
            names[k]
        )));
    }
    let mut cols: Vec<Option<Vec<f64>>> = idx.iter().map(|i| i.map(|_| Vec::new())).collect();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
        for (c, i) in cols.iter_mut().zip(&idx) {
            if let (Some(c), Some(i)) = (c, i) {
                let cell = rec.get(*i).unwrap_or("");
                let v = cell.parse::<f64>().map_err(|_| {
                    RunError::Input(format!(
                        "{}: data row {}: `{cell}` is not a number",
                        path.display(),
                        row + 1
                    ))
                })?;
                c.push(v);
            }
        }
    }
    Ok(cols)
}

fn load_signals(
    cfg: &ExperimentConfig,
    noise: &NoisePowers,
    base: &Path,
) -> Result<(Signals, Option<Vec<u8>>), RunError> {
    let sc = cfg.scenario_section();
    match sc.source {
        SignalSource::Synthetic => {
            let bundle =
                generate_scenario(&cfg.scenario_config(noise)?, cfg.seed.expect("validated"))?;
            let export = sc
                .export_signals
                .then(|| csv_bytes(|w| bundle.write_csv(w)));
            Ok((
                Signals {
                    x: bundle.x,
                    y: bundle.y,
                    n0: Some(bundle.n0),
                },
                export,
            ))
        }
        SignalSource::Csv => {
            let path = resolve(base, sc.path.as_deref().expect("validated"));
            let mut cols = read_columns(&path, &["x", "y", "n0"], 2)?.into_iter();
            let (x, y, n0) = (
                cols.next().flatten(),
                cols.next().flatten(),
                cols.next().flatten(),
            );
            Ok((
                Signals {
                    x: x.expect("required"),
                    y: y.expect("required"),
                    n0,
                },
                None,
            ))
        }
        SignalSource::Pcm => {
            let x = read_pcm(&resolve(base, sc.x_path.as_deref().expect("validated")))?;
            let y = read_pcm(&resolve(base, sc.y_path.as_deref().expect("validated")))?;
            let n0 = sc
                .n0_path
                .as_deref()
                .map(|p| read_pcm(&resolve(base, p)))
                .transpose()?;
            Ok((Signals { x, y, n0 }, None))
        }
    }
}

fn simulate(cfg: &ExperimentConfig, base: &Path) -> Result<(Vec<Output>, Vec<String>), RunError> {
    let noise = cfg.noise_settings()[0];
    let control = cfg.control_config(noise);
    let (signals, export) = load_signals(cfg, &noise, base)?;
    let run = run_canceler_signals(
        &signals.x,
        &signals.y,
        signals.n0.as_deref(),
        &control,
        None,
    )?;

    let trace = csv_bytes(|w| write_trace_csv(&run.records, w));
    let tests = csv_bytes(|w| {
        use std::io::Write;
        writeln!(w, "n,t0,t1,raw,class,copy_scheduled")?;
        for t in &run.tests {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.n,
                format_number(t.statistic.t0),
                format_number(t.statistic.t1),
                t.raw,
                t.class,
                u8::from(t.copy_scheduled)
            )?;
        }
        Ok(())
    });
    let mut counts = [0usize; 4];
    for t in &run.tests {
        counts[t.class.index()] += 1;
    }
    let copies = run.records.iter().filter(|r| r.copied).count();
    let summary = vec![
        format!(
            "{} samples, {} tests, {} copies",
            run.records.len(),
            run.tests.len(),
            copies
        ),
        format!(
            "decisions: H0 {}, H1 {}, H2 {}, H3 {}",
            counts[0], counts[1], counts[2], counts[3]
        ),
    ];
    let mut outputs = vec![
        Output {
            name: "trace.csv",
            bytes: trace,
        },
        Output {
            name: "tests.csv",
            bytes: tests,
        },
    ];
    if let Some(bytes) = export {
        outputs.push(Output {
            name: "signals.csv",
            bytes,
        });
    }
    Ok((outputs, summary))
}

fn classify_stream(
    cfg: &ExperimentConfig,
    base: &Path,
) -> Result<(Vec<Output>, Vec<String>), RunError> {
    let cl = cfg.classify.as_ref().expect("validated");
    let thr = match cl.threshold_override {
        Some(t) => DecisionThreshold::from_scaled(t, cl.window)?,
        None => threshold(&cfg.noise_settings()[0], cl.window)?,
    };
    let path = if cl.input.as_os_str() == "-" {
        cl.input.clone()
    } else {
        resolve(base, &cl.input)
    };
    let mut rdr = open_csv(&path)?;
    let headers = rdr
        .headers()
        .map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RunError::Input(format!("{}: missing column `{name}`", path.display())))
    };
    let (i0, i1) = (col("t0")?, col("t1")?);
    let mut counts = [0usize; 4];
    let mut out = b"n,t0,t1,class\n".to_vec();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> Result<f64, RunError> {
            let cell = rec.get(i).unwrap_or("");
            cell.parse().map_err(|_| {
                RunError::Input(format!(
                    "{}: data row {}: `{cell}` is not a number",
                    path.display(),
                    n + 1
                ))
            })
        };
        let (t0, t1) = (num(i0)?, num(i1)?);
        let stat = SufficientStatistic::new(t0, t1, cl.window)
            .map_err(|e| RunError::Input(format!("{}: data row {}: {e}", path.display(), n + 1)))?;
        let h: Hypothesis = classify(&stat, &thr, cl.tie_epsilon)?;
        counts[h.index()] += 1;
        out.extend_from_slice(
            format!("{n},{},{},{h}\n", format_number(t0), format_number(t1)).as_bytes(),
        );
    }
    let total: usize = counts.iter().sum();
    let summary = vec![format!(
        "{total} statistics classified with T_p = {}: H0 {}, H1 {}, H2 {}, H3 {}",
        format_number(thr.scaled),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    )];
    Ok((
        vec![Output {
            name: "decisions.csv",
            bytes: out,
        }],
        summary,
    ))
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    file: &'a str,
    bytes: usize,
    lines: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    subcommand: &'static str,
    config_file: &'a str,
    seed: Option<u64>,
    rerun: String,
    /// Resolved configuration, loadable as a config file on its own.
    config_toml: String,
    config: &'a ExperimentConfig,
    outputs: Vec<ManifestFile<'a>>,
}

fn manifest(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    outputs: &[Output],
) -> Result<Vec<u8>, RunError> {
    let config_toml = toml::to_string(cfg)
        .map_err(|e| RunError::Input(format!("cannot serialise the configuration: {e}")))?;
    let mut rerun = format!(
        "eclab {} --config {}",
        cfg.kind.subcommand(),
        opts.config_name
    );
    if let Some(s) = cfg.seed {
        rerun.push_str(&format!(" --seed {s}"));
    }
    let m = Manifest {
        tool: "eclab",
        version: env!("CARGO_PKG_VERSION"),
        core_version: eclab_core::VERSION,
        subcommand: cfg.kind.subcommand(),
        config_file: &opts.config_name,
        seed: cfg.seed,
        rerun,
        config_toml,
        config: cfg,
        outputs: outputs
            .iter()
            .map(|o| ManifestFile {
                file: o.name,
                bytes: o.bytes.len(),
                lines: o.bytes.iter().filter(|&&b| b == b'\n').count(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&m).expect("manifest serialises");
    bytes.push(b'\n');
    Ok(bytes)
}
