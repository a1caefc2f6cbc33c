//! Exact and Monte Carlo performance analysis of the four-way classifier.
//!
//! Under the independent-pairs approximation `[‖z0‖², ‖z1‖²]` is the
//! diagonal of a 2×2 Wishart matrix, whose law is the bivariate gamma
//! distribution `G(q, P)` with Laplace transform
//! `(1 + p1·s1 + p2·s2 + p12·s1·s2)^(−q)`. Confusion entries are integrals of
//! its density over the four decision regions.

mod bivariate;
mod confusion;
pub mod quadrature;

pub use bivariate::{ln_series, BivariateGammaParams, TRUNCATION_TAIL};
pub use confusion::{
    confusion_mc, confusion_theory, correlated_hx, curve_sweep, error_probability,
    error_probability_tol, format_number, write_sweep_csv, ConfusionMatrix, CorrelatedSetup,
    McMode, McModel, McSweep, Source, SweepOptions, SweepRow, ENTRY_TOLERANCE,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{pair_model, Hypothesis, NoisePowers};
    use crate::Error;
    use approx::assert_relative_eq;
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn params_examples() {
        let p = BivariateGammaParams::from_pair_covariance([[3.0, 1.0], [1.0, 1.0]], 1).unwrap();
        assert_eq!((p.q(), p.p1(), p.p2(), p.p12()), (0.5, 6.0, 2.0, 8.0));
        let p = BivariateGammaParams::from_pair_covariance([[1.0, 0.0], [0.0, 1.0]], 2).unwrap();
        assert_eq!(
            (p.q(), p.p1(), p.p2(), p.p12(), p.coupling()),
            (1.0, 2.0, 2.0, 4.0, 0.0)
        );
        assert!(matches!(
            BivariateGammaParams::from_pair_covariance([[1.0, 1.0], [1.0, 1.0]], 1),
            Err(Error::DegenerateCovariance(_))
        ));
        assert!(BivariateGammaParams::new(1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn from_model_uses_pair_block() {
        let noise = NoisePowers::new(0.5, 1.0).unwrap();
        let m = pair_model(Hypothesis::H0, 2.0, &noise).unwrap();
        let p = BivariateGammaParams::from_covariance(&m).unwrap();
        assert_eq!(p.q(), 0.5);
        assert_relative_eq!(p.p1(), 5.0);
        assert_relative_eq!(p.p2(), 1.0);
        assert_relative_eq!(p.p12(), 4.0 * (2.5 * 0.5 - 0.25));
    }

    #[test]
    fn independent_case_factorises() {
        let p = BivariateGammaParams::new(0.5, 2.0, 2.0, 4.0).unwrap();
        let f = p.density(1.0, 1.0).unwrap();
        assert_relative_eq!(
            f,
            (-1.0f64).exp() / (2.0 * std::f64::consts::PI),
            max_relative = 1e-12
        );
        assert!((f - 0.058550).abs() < 1e-6);
    }

    // I_ν(x) = (x/2)^ν / (√π Γ(ν + 1/2)) ∫_0^π exp(x cos θ) sin^{2ν} θ dθ, for ν > −1/2
    fn bessel_i_integral(nu: f64, x: f64) -> f64 {
        let n = 20_000;
        let h = std::f64::consts::PI / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let th = (k as f64 + 0.5) * h;
            s += (x * th.cos() - x).exp() * th.sin().powf(2.0 * nu);
        }
        s * h * (x / 2.0).powf(nu) / (std::f64::consts::PI.sqrt() * ln_gamma(nu + 0.5).exp())
            * x.exp()
    }

    #[test]
    fn series_matches_bessel_form() {
        for q in [1.0, 1.5, 2.0, 4.5, 16.0] {
            for z in [1e-3f64, 0.5, 3.0, 40.0, 300.0] {
                let nu = q - 1.0;
                let bessel = z.powf(-nu / 2.0) * bessel_i_integral(nu, 2.0 * z.sqrt());
                assert_relative_eq!(
                    ln_series(q, z).unwrap(),
                    bessel.ln(),
                    max_relative = 1e-7,
                    epsilon = 1e-9
                );
            }
        }
        // I_{-1/2}(x) = sqrt(2/(πx)) cosh x
        for z in [0.1f64, 2.0, 50.0, 1e5] {
            let x = 2.0 * z.sqrt();
            let expected =
                0.25 * z.ln() + (2.0 / (std::f64::consts::PI * x)).sqrt().ln() + x.cosh().ln();
            assert_relative_eq!(ln_series(0.5, z).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn asymptotic_branch_is_continuous() {
        // I_{1/2}(x) = sqrt(2/(πx)) sinh x, reached by q = 1.5
        for z in [2.4e7f64, 2.6e7, 1e10, 1e14] {
            let x = 2.0 * z.sqrt();
            let ln_sinh = x - std::f64::consts::LN_2 + (-(-2.0 * x).exp_m1()).ln();
            let expected =
                -0.25 * z.ln() + (2.0 / (std::f64::consts::PI * x)).sqrt().ln() + ln_sinh;
            assert_relative_eq!(ln_series(1.5, z).unwrap(), expected, max_relative = 1e-12);
        }
        // direct log-sum-exp of the terms around the peak
        for z in [2.49e7f64, 2.51e7, 1e9] {
            let q = 16.0;
            let peak = z.sqrt().round();
            let ln_term = |k: f64| k * z.ln() - ln_gamma(k + 1.0) - ln_gamma(q + k);
            let m = ln_term(peak);
            let width = 40.0 * z.powf(0.25);
            let lo = (peak - width).max(0.0) as u64;
            let hi = (peak + width) as u64;
            let s: f64 = (lo..=hi).map(|k| (ln_term(k as f64) - m).exp()).sum();
            assert_relative_eq!(ln_series(q, z).unwrap(), m + s.ln(), max_relative = 1e-11);
        }
    }

    #[test]
    fn series_edge_cases() {
        assert_relative_eq!(ln_series(2.5, 0.0).unwrap(), -ln_gamma(2.5));
        assert!(ln_series(1.0, -1.0).is_err());
        assert!(matches!(
            ln_series(1.0, f64::INFINITY),
            Err(Error::SeriesNonConvergence { .. })
        ));
    }

    #[test]
    fn negative_arguments_rejected() {
        let p = BivariateGammaParams::new(1.0, 2.0, 2.0, 3.0).unwrap();
        assert!(p.density(-1.0, 1.0).is_err());
    }

    #[test]
    fn quantiles_bracket_mass() {
        let p = BivariateGammaParams::new(16.0, 2.0, 0.002, 0.003).unwrap();
        assert_relative_eq!(
            p.marginal_quantile(0, 0.5),
            2.0 * 15.667_916_7,
            max_relative = 1e-6
        );
        assert!(p.truncation(1) > p.marginal_quantile(1, 0.9999));
    }

    #[test]
    fn symmetric_entries_agree() {
        let noise = NoisePowers::new(0.001, 1.0).unwrap();
        let m = confusion_theory(&noise, 2.0, 4).unwrap();
        for j in Hypothesis::ALL {
            assert!(
                (m.column_sum(j) - 1.0).abs() < 1e-4,
                "column {j}: {}",
                m.column_sum(j)
            );
        }
        assert!(
            (m.get(Hypothesis::H0, Hypothesis::H0) - m.get(Hypothesis::H1, Hypothesis::H1)).abs()
                < 1e-12
        );
        assert!(
            (m.get(Hypothesis::H2, Hypothesis::H2) - m.get(Hypothesis::H3, Hypothesis::H3)).abs()
                < 1e-12
        );
    }

    #[test]
    fn zero_separation_is_undefined() {
        let noise = NoisePowers::new(0.001, 1.0).unwrap();
        let m = confusion_theory(&noise, 0.0, 4).unwrap();
        assert!(!m.defined[0] && !m.defined[1]);
        assert!(m.entries[0][0].is_nan());
    }

    #[test]
    fn single_run_is_one_hot() {
        let noise = NoisePowers::new(0.001, 1.0).unwrap();
        let m = confusion_mc(&noise, &McModel::IidPairs { cx2: 1.0 }, 4, 1, 5).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..4).map(|i| m.entries[i][j]).collect();
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(10.0), "10");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(2.0 / 3.0 * 1e-5), "0.00000666666666667");
        assert_eq!(format_number(123456.789), "123456.789");
        assert_eq!(format_number(f64::NAN), "undefined");
    }
}
