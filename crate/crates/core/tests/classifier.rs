use eclab_core::classifier::LogLikelihoodOracle;
use eclab_core::signal::{build_covariance, build_hx, Ar1Input, Channel};
use eclab_core::{
    classify, compute_statistic, threshold, DecisionThreshold, Hypothesis, NoisePowers,
    SufficientStatistic,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

// false on draws that sit on a decision boundary to rounding accuracy
fn decisive(lls: [f64; 4]) -> bool {
    let mut sorted = lls;
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[0] - sorted[1] >= 1e-9 * sorted[0].abs().max(1.0)
}

fn stat(t0: f64, t1: f64, p: usize) -> SufficientStatistic {
    SufficientStatistic::new(t0, t1, p).unwrap()
}

#[test]
fn unit_power_quadrants() {
    let thr = threshold(&NoisePowers::new(1.0, 1.0).unwrap(), 1).unwrap();
    assert!((thr.base - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let cases = [
        ((2.0, 0.5), Hypothesis::H0),
        ((0.5, 2.0), Hypothesis::H1),
        ((3.0, 2.0), Hypothesis::H2),
        ((2.0, 3.0), Hypothesis::H3),
    ];
    for ((t0, t1), want) in cases {
        assert_eq!(
            classify(&stat(t0, t1, 1), &thr, 0.0).unwrap(),
            want,
            "({t0}, {t1})"
        );
    }
}

#[test]
fn boundaries_resolve_to_calmer_class() {
    let thr = threshold(&NoisePowers::new(0.001, 1.0).unwrap(), 32).unwrap();
    let t = thr.scaled;
    assert_eq!(
        classify(&stat(t / 2.0, t / 2.0, 32), &thr, 0.0).unwrap(),
        Hypothesis::H0
    );
    assert_eq!(
        classify(&stat(2.0 * t, t, 32), &thr, 0.0).unwrap(),
        Hypothesis::H0
    );
    assert_eq!(
        classify(&stat(t, 2.0 * t, 32), &thr, 0.0).unwrap(),
        Hypothesis::H1
    );
    assert_eq!(
        classify(&stat(3.0 * t, 3.0 * t, 32), &thr, 0.0).unwrap(),
        Hypothesis::H2
    );
}

#[test]
fn threshold_override_keeps_scaling() {
    let thr = DecisionThreshold::from_scaled(0.5, 8).unwrap();
    assert_eq!(thr.scaled, 8.0 * thr.base);
    assert!(DecisionThreshold::from_scaled(0.0, 8).is_err());
    assert!(DecisionThreshold::from_scaled(1.0, 0).is_err());
}

#[test]
fn statistic_rejects_bad_windows() {
    assert!(compute_statistic(&[], &[]).is_err());
    assert!(compute_statistic(&[1.0], &[1.0, 2.0]).is_err());
    assert!(SufficientStatistic::new(-1.0, 0.0, 1).is_err());
}

#[test]
fn correlated_windows_follow_the_rule() {
    // coloured input with real channels gives a full H_x that must cancel
    let h0 = Channel::exponential(-10.0, 0, 64, 0.95).unwrap();
    let h1 = Channel::exponential(-10.0, 10, 64, 0.95).unwrap();
    let input = Ar1Input::new(1.0, 0.5, 64).unwrap();
    let p = 4;
    let hx = build_hx(&h0, &h1, &input, p).unwrap();
    let noise = NoisePowers::new(0.05, 0.4).unwrap();
    let models = Hypothesis::ALL.map(|h| build_covariance(h, &hx, &noise, p).unwrap());
    let oracle = LogLikelihoodOracle::new(&models).unwrap();
    let thr = threshold(&noise, p).unwrap();
    let mut rng = eclab_core::rng::stream(3, 0);
    let mut agree = 0;
    let total = 4000;
    for k in 0..total {
        let sampler = models[k % 4].sampler().unwrap();
        let z = sampler.sample(&mut rng);
        let s = compute_statistic(&z.as_slice()[..p], &z.as_slice()[p..]).unwrap();
        if !decisive(oracle.log_likelihoods(&z).unwrap())
            || classify(&s, &thr, 0.0).unwrap() == oracle.classify(&z).unwrap()
        {
            agree += 1;
        }
    }
    assert_eq!(agree, total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn swapping_norms_swaps_partners(s0 in 1e-3f64..2.0, s1 in 1e-3f64..5.0, t0 in 0.0f64..50.0, t1 in 0.0f64..50.0,
                                     p in 1usize..40) {
        prop_assume!(t0 != t1);
        let thr = threshold(&NoisePowers::new(s0, s1).unwrap(), p).unwrap();
        prop_assume!(t0 != thr.scaled && t1 != thr.scaled);
        let a = classify(&stat(t0, t1, p), &thr, 0.0).unwrap();
        let b = classify(&stat(t1, t0, p), &thr, 0.0).unwrap();
        prop_assert_eq!(a.partner(), b);
    }

    #[test]
    fn common_scaling_keeps_decision(s0 in 1e-3f64..2.0, s1 in 1e-3f64..5.0, t0 in 0.0f64..50.0, t1 in 0.0f64..50.0,
                                     lambda in 0.01f64..100.0, p in 1usize..40) {
        let thr = threshold(&NoisePowers::new(s0, s1).unwrap(), p).unwrap();
        let thr_l = threshold(&NoisePowers::new(lambda * s0, lambda * s1).unwrap(), p).unwrap();
        let margin = 1e-9 * thr.scaled;
        prop_assume!((t0 - t1).abs() > margin && (t0.min(t1) - thr.scaled).abs() > margin);
        let a = classify(&stat(t0, t1, p), &thr, 0.0).unwrap();
        let b = classify(&stat(lambda * t0, lambda * t1, p), &thr_l, 0.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn threshold_grows_with_window(s0 in 1e-4f64..2.0, s1 in 1e-4f64..5.0, p in 1usize..200) {
        let noise = NoisePowers::new(s0, s1).unwrap();
        let a = threshold(&noise, p).unwrap();
        let b = threshold(&noise, p + 1).unwrap();
        prop_assert!(b.scaled > a.scaled);
        prop_assert_eq!(a.scaled, p as f64 * a.base);
    }

    #[test]
    fn rule_matches_likelihood_argmax(s0 in 0.01f64..2.0, s1 in 0.01f64..5.0, cx2 in 0.01f64..10.0, r in 0.0f64..0.9,
                                      seed in any::<u64>()) {
        let p = 2;
        let hx = DMatrix::from_row_slice(2, 2, &[cx2, r * cx2, r * cx2, cx2]);
        let noise = NoisePowers::new(s0, s1).unwrap();
        let models = Hypothesis::ALL.map(|h| build_covariance(h, &hx, &noise, p).unwrap());
        let oracle = LogLikelihoodOracle::new(&models).unwrap();
        let thr = threshold(&noise, p).unwrap();
        let mut rng = eclab_core::rng::stream(seed, 0);
        for k in 0..40 {
            let z: DVector<f64> = models[k % 4].sampler().unwrap().sample(&mut rng);
            let s = compute_statistic(&z.as_slice()[..p], &z.as_slice()[p..]).unwrap();
            if !decisive(oracle.log_likelihoods(&z).unwrap()) {
                continue;
            }
            prop_assert_eq!(classify(&s, &thr, 0.0).unwrap(), oracle.classify(&z).unwrap());
        }
    }
}
