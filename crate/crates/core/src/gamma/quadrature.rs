//! Globally adaptive 21-point Gauss–Kronrod quadrature.

#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_024_866_391,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * h;
    resabs *= h.abs();
    resasc *= h.abs();
    let mut error = ((resk - resg) * h).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Piece { a, b, value, error }
}

/// Integrates `f` over `[a, b]`, starting from the given interior breakpoints.
///
/// Intervals too narrow to split further are retired with their current
/// error; the call fails only if the interval budget runs out.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if !(b > a) {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let mut pts = Vec::with_capacity(breaks.len() + 2);
    pts.push(a);
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let mut heap = BinaryHeap::new();
    let (mut value, mut error) = (0.0, 0.0);
    let (mut retired_value, mut retired_error) = (0.0, 0.0);
    for w in pts.windows(2) {
        let p = kronrod(&mut f, w[0], w[1]);
        value += p.value;
        error += p.error;
        heap.push(p);
    }
    let mut count = heap.len();
    loop {
        let target = tol.abs.max(tol.rel * value.abs());
        if error <= target || !value.is_finite() {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b)
            || (worst.b - worst.a) <= 1e-13 * worst.a.abs().max(worst.b.abs())
        {
            retired_value += worst.value;
            retired_error += worst.error;
            continue;
        }
        if count >= tol.max_intervals {
            heap.push(worst);
            return Err(Error::Quadrature {
                estimate: value,
                error,
                intervals: count,
            });
        }
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        count += 1;
        if count % 64 == 0 {
            // refresh the running sums to stop drift
            value = retired_value + heap.iter().map(|p| p.value).sum::<f64>();
            error = retired_error + heap.iter().map(|p| p.error).sum::<f64>();
        }
    }
    if !value.is_finite() {
        return Err(Error::Quadrature {
            estimate: value,
            error,
            intervals: count,
        });
    }
    value = retired_value + heap.iter().map(|p| p.value).sum::<f64>();
    error = retired_error + heap.iter().map(|p| p.error).sum::<f64>();
    Ok(Estimate {
        value,
        error,
        intervals: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: Tolerance = Tolerance {
        abs: 1e-12,
        rel: 1e-12,
        max_intervals: 1000,
    };

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| x.powi(7) - 3.0 * x * x, 0.0, 2.0, &[], TOL).unwrap();
        assert!((r.value - (32.0 - 8.0)).abs() < 1e-12);
        assert_eq!(r.intervals, 1);
    }

    #[test]
    fn endpoint_singularity() {
        let r = integrate(
            |x| 1.0 / x.sqrt(),
            0.0,
            1.0,
            &[],
            Tolerance {
                abs: 1e-10,
                rel: 1e-10,
                max_intervals: 1000,
            },
        )
        .unwrap();
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn oscillatory_and_peaked() {
        let r = integrate(|x| (50.0 * x).sin(), 0.0, std::f64::consts::PI, &[], TOL).unwrap();
        assert!(r.value.abs() < 1e-11);
        let r = integrate(|x| (-1e6 * (x - 0.3).powi(2)).exp(), 0.0, 1.0, &[0.3], TOL).unwrap();
        assert!((r.value - (std::f64::consts::PI / 1e6).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_and_budget() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, &[], TOL).unwrap().value, 0.0);
        let tight = Tolerance {
            abs: 0.0,
            rel: 0.0,
            max_intervals: 3,
        };
        assert!(matches!(
            integrate(|x| x.abs().sqrt(), -1.0, 1.0, &[], tight),
            Err(Error::Quadrature { .. })
        ));
    }
}
