use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::bivariate::BivariateGammaParams;
use crate::classifier::{classify, threshold, SufficientStatistic};
use crate::rng;
use crate::signal::{
    build_covariance, build_hx, pair_model, solve_input_variance, Ar1Input, Channel, Hypothesis,
    NoisePowers,
};
use crate::{Error, Result};

/// Absolute quadrature tolerance used for each confusion entry.
pub const ENTRY_TOLERANCE: f64 = 1e-7;

const MC_CHUNK: usize = 8192;

/// `P(H_i | H_j)` for one hypothesis pair.
///
/// The wedge `{t1 < t0}` is split at `T_p` into the H0 and H2 regions; the
/// mirrored wedge gives H1 and H3 by exchanging the roles of `t0` and `t1`.
pub fn error_probability(
    decided: Hypothesis,
    params: &BivariateGammaParams,
    t_p: f64,
) -> Result<f64> {
    error_probability_tol(decided, params, t_p, ENTRY_TOLERANCE)
}

pub fn error_probability_tol(
    decided: Hypothesis,
    params: &BivariateGammaParams,
    t_p: f64,
    tol: f64,
) -> Result<f64> {
    if !(t_p > 0.0 && t_p.is_finite()) {
        return Err(Error::param("threshold", format!("{t_p} must be positive")));
    }
    let v = match decided {
        Hypothesis::H0 => params.lower_wedge(0.0, t_p, tol)?,
        Hypothesis::H2 => params.lower_wedge(t_p, f64::INFINITY, tol)?,
        Hypothesis::H1 => params.swapped().lower_wedge(0.0, t_p, tol)?,
        Hypothesis::H3 => params.swapped().lower_wedge(t_p, f64::INFINITY, tol)?,
    };
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Theory,
    MonteCarlo,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Theory => "theory",
            Source::MonteCarlo => "monte_carlo",
        })
    }
}

/// `entries[i][j] = P(H_i | H_j)`; columns index the true hypothesis.
///
/// A column whose law is degenerate (`c_x² = 0` in theory) is marked
/// undefined and holds NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub entries: [[f64; 4]; 4],
    pub source: Source,
    pub stderr: Option<[[f64; 4]; 4]>,
    pub defined: [bool; 4],
}

impl ConfusionMatrix {
    pub fn get(&self, decided: Hypothesis, truth: Hypothesis) -> f64 {
        self.entries[decided.index()][truth.index()]
    }

    pub fn column_sum(&self, truth: Hypothesis) -> f64 {
        (0..4).map(|i| self.entries[i][truth.index()]).sum()
    }

    pub fn diagonal(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.entries[i][i])
    }
}

/// Quadrature confusion matrix for `p`-sample windows under the
/// independent-pairs law.
pub fn confusion_theory(noise: &NoisePowers, cx2: f64, p: usize) -> Result<ConfusionMatrix> {
    let t_p = threshold(noise, p)?.scaled;
    let mut params = Vec::with_capacity(4);
    for h in Hypothesis::ALL {
        let model = pair_model(h, cx2, noise)?;
        params.push(
            match BivariateGammaParams::from_pair_covariance(model.pair_covariance(), p) {
                Ok(v) => Some(v),
                Err(Error::DegenerateCovariance(_)) => None,
                Err(e) => return Err(e),
            },
        );
    }
    let values: Vec<f64> = (0..16)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / 4, k % 4);
            match &params[j] {
                Some(pj) => error_probability(Hypothesis::ALL[i], pj, t_p),
                None => Ok(f64::NAN),
            }
        })
        .collect::<Result<_>>()?;
    let mut entries = [[0.0; 4]; 4];
    for (k, v) in values.into_iter().enumerate() {
        entries[k / 4][k % 4] = v;
    }
    let defined = [0, 1, 2, 3].map(|j| params[j].is_some());
    Ok(ConfusionMatrix {
        entries,
        source: Source::Theory,
        stderr: None,
        defined,
    })
}

/// How the stacked error vectors are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum McModel {
    /// `p` independent pairs from `Σ_j1` with `H_x = c_x²`.
    IidPairs { cx2: f64 },
    /// One draw of the full `2p`-dimensional `Σ_jp` built from this `H_x`.
    Correlated { hx: DMatrix<f64> },
}

/// Monte Carlo confusion matrix with binomial standard errors.
pub fn confusion_mc(
    noise: &NoisePowers,
    model: &McModel,
    p: usize,
    runs: usize,
    seed: u64,
) -> Result<ConfusionMatrix> {
    if runs == 0 {
        return Err(Error::param("runs", "must be at least 1"));
    }
    let thr = threshold(noise, p)?;
    let hx = match model {
        McModel::IidPairs { cx2 } => DMatrix::from_element(1, 1, *cx2),
        McModel::Correlated { hx } => {
            if hx.nrows() != p {
                return Err(Error::DimensionMismatch(format!(
                    "H_x is {}x{} but p = {p}",
                    hx.nrows(),
                    hx.ncols()
                )));
            }
            hx.clone()
        }
    };
    let block = hx.nrows();
    let samplers = Hypothesis::ALL
        .iter()
        .map(|&h| build_covariance(h, &hx, noise, block)?.sampler())
        .collect::<Result<Vec<_>>>()?;
    let draws_per_run = p / block;

    let chunks = runs.div_ceil(MC_CHUNK);
    let jobs: Vec<(usize, usize)> = (0..4)
        .flat_map(|j| (0..chunks).map(move |c| (j, c)))
        .collect();
    let counts: Vec<(usize, [u64; 4])> = jobs
        .par_iter()
        .map(|&(j, c)| {
            let mut rng = rng::stream(seed, rng::stream_id(&[j as u64, c as u64]));
            let sampler = &samplers[j];
            let mut scratch = vec![0.0; 2 * block];
            let mut out = vec![0.0; 2 * block];
            let mut tally = [0u64; 4];
            let n = MC_CHUNK.min(runs - c * MC_CHUNK);
            for _ in 0..n {
                let (mut t0, mut t1) = (0.0, 0.0);
                for _ in 0..draws_per_run {
                    sampler.sample_into(&mut rng, &mut scratch, &mut out);
                    t0 += out[..block].iter().map(|v| v * v).sum::<f64>();
                    t1 += out[block..].iter().map(|v| v * v).sum::<f64>();
                }
                let stat = SufficientStatistic { t0, t1, p };
                let h = classify(&stat, &thr, 0.0).expect("window lengths agree");
                tally[h.index()] += 1;
            }
            (j, tally)
        })
        .collect();

    let mut tallies = [[0u64; 4]; 4];
    for (j, t) in counts {
        for i in 0..4 {
            tallies[i][j] += t[i];
        }
    }
    let n = runs as f64;
    let mut entries = [[0.0; 4]; 4];
    let mut stderr = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let f = tallies[i][j] as f64 / n;
            entries[i][j] = f;
            stderr[i][j] = (f * (1.0 - f) / n).sqrt();
        }
    }
    Ok(ConfusionMatrix {
        entries,
        source: Source::MonteCarlo,
        stderr: Some(stderr),
        defined: [true; 4],
    })
}

/// Exponential channel pair used to give `H_x` a realistic lag structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatedSetup {
    pub gain_db: f64,
    pub delays: [usize; 2],
    pub length: usize,
    pub decay: f64,
    pub rho: f64,
}

impl CorrelatedSetup {
    pub fn standard(gain_db: f64) -> Self {
        Self {
            gain_db,
            delays: [0, 10],
            length: 1024,
            decay: 0.95,
            rho: 0.5,
        }
    }
}

/// `H_x` for the channel pair, with the AR-1 input power chosen so that the
/// difference-filter output power equals `cx2`.
pub fn correlated_hx(setup: &CorrelatedSetup, cx2: f64, p: usize) -> Result<DMatrix<f64>> {
    if !(cx2 >= 0.0 && cx2.is_finite()) {
        return Err(Error::param("cx2", format!("{cx2} must be non-negative")));
    }
    if cx2 == 0.0 {
        return Ok(DMatrix::zeros(p, p));
    }
    let g0 = Channel::exponential(setup.gain_db, setup.delays[0], setup.length, setup.decay)?;
    let g1 = Channel::exponential(setup.gain_db, setup.delays[1], setup.length, setup.decay)?;
    let variance = solve_input_variance(cx2, setup.rho, &g0, &g1)?;
    let input = Ar1Input::new(variance, setup.rho, setup.length)?;
    build_hx(&g0, &g1, &input, p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McMode {
    IidPairs,
    Correlated(CorrelatedSetup),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSweep {
    pub runs: usize,
    pub seed: u64,
    pub mode: McMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOptions {
    pub theory: bool,
    pub monte_carlo: Option<McSweep>,
}

/// One cell of a sweep table. `value` is `None` for undefined entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cx2: f64,
    pub p: usize,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub source: Source,
    pub decided: Hypothesis,
    pub truth: Hypothesis,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
}

/// Confusion entries over the `(c_x², p)` grid, ordered by `c_x²`, then
/// `p`, then source (theory first), then `(i, j)`.
pub fn curve_sweep(
    noise: &NoisePowers,
    grid: &[f64],
    p_list: &[usize],
    options: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::param("cx2_grid", "must not be empty"));
    }
    if p_list.is_empty() {
        return Err(Error::param("p_list", "must not be empty"));
    }
    if !options.theory && options.monte_carlo.is_none() {
        return Err(Error::param(
            "sweep",
            "neither theory nor Monte Carlo requested",
        ));
    }
    let points: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..p_list.len()).map(move |k| (g, k)))
        .collect();
    let blocks: Vec<Vec<ConfusionMatrix>> = points
        .par_iter()
        .map(|&(g, k)| {
            let (cx2, p) = (grid[g], p_list[k]);
            let mut out = Vec::new();
            if options.theory {
                out.push(confusion_theory(noise, cx2, p)?);
            }
            if let Some(mc) = &options.monte_carlo {
                let model = match mc.mode {
                    McMode::IidPairs => McModel::IidPairs { cx2 },
                    McMode::Correlated(setup) => McModel::Correlated {
                        hx: correlated_hx(&setup, cx2, p)?,
                    },
                };
                let seed = rng::stream_id(&[mc.seed, g as u64, k as u64]);
                out.push(confusion_mc(noise, &model, p, mc.runs, seed)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(points.len() * 32);
    for (&(g, k), mats) in points.iter().zip(&blocks) {
        for m in mats {
            for i in Hypothesis::ALL {
                for j in Hypothesis::ALL {
                    let defined = m.defined[j.index()];
                    rows.push(SweepRow {
                        cx2: grid[g],
                        p: p_list[k],
                        sigma0_sq: noise.sigma0_sq(),
                        sigma1_sq: noise.sigma1_sq(),
                        source: m.source,
                        decided: i,
                        truth: j,
                        value: defined.then(|| m.get(i, j)),
                        stderr: m
                            .stderr
                            .filter(|_| defined)
                            .map(|s| s[i.index()][j.index()]),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Decimal rendering with 12 significant digits.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return "undefined".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    let exponent = rounded.abs().log10().floor() as i32;
    let decimals = (11 - exponent).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "cx2,p,sigma0_sq,sigma1_sq,source,i,j,value,stderr")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            format_number(r.cx2),
            r.p,
            format_number(r.sigma0_sq),
            format_number(r.sigma1_sq),
            r.source,
            r.decided.index(),
            r.truth.index(),
            r.value
                .map_or_else(|| "undefined".to_string(), format_number),
            r.stderr.map_or_else(String::new, format_number),
        )?;
    }
    Ok(())
}
