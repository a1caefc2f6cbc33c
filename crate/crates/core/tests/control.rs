use eclab_core::signal::{generate_scenario, ScenarioConfig, SignalBundle};
use eclab_core::{
    run_canceler, ControlConfig, EchoCanceler, GuardMode, Hypothesis, NoisePowers, TestDecision,
};

fn paper_config() -> ControlConfig {
    ControlConfig::standard(NoisePowers::new(0.001, 1.0).unwrap())
}

fn scenario(double_talk_power: f64, seed: u64) -> SignalBundle {
    let mut cfg = ScenarioConfig::standard(-10.0, [0, 10, 20], 1024, 0.95).unwrap();
    cfg.double_talk_power = double_talk_power;
    generate_scenario(&cfg, seed).unwrap()
}

/// Test instants at least five test intervals after every event (sample 0 included).
fn settled(bundle: &SignalBundle, tests: &[TestDecision], interval: usize) -> Vec<TestDecision> {
    let mut starts: Vec<usize> = bundle.events.iter().map(|e| e.sample).collect();
    starts.push(0);
    tests
        .iter()
        .copied()
        .filter(|t| starts.iter().all(|&s| t.n < s || t.n >= s + 5 * interval))
        .collect()
}

#[test]
fn no_double_talk_power_means_no_double_talk_decisions() {
    let bundle = scenario(0.0, 21);
    assert!(bundle.double_talk.iter().all(|&d| !d));
    let cfg = paper_config();
    let run = run_canceler(&bundle, &cfg).unwrap();
    let steady = settled(&bundle, &run.tests, cfg.test_interval);
    assert!(!steady.is_empty());
    let dt: Vec<_> = steady
        .iter()
        .filter(|t| t.class.double_talk())
        .map(|t| t.n)
        .collect();
    assert!(dt.is_empty(), "double-talk decided at {dt:?}");
}

#[test]
fn double_talk_burst_is_detected() {
    let bundle = scenario(1.0, 22);
    let cfg = paper_config();
    let run = run_canceler(&bundle, &cfg).unwrap();
    let steady = settled(&bundle, &run.tests, cfg.test_interval);
    let inside: Vec<_> = steady.iter().filter(|t| bundle.double_talk[t.n]).collect();
    assert!(!inside.is_empty());
    let hits = inside.iter().filter(|t| t.class.double_talk()).count();
    assert!(hits * 10 >= inside.len() * 9, "{hits} of {}", inside.len());
    for t in inside.iter().filter(|t| t.class.double_talk()) {
        let r = run.records[t.n];
        assert_eq!(r.mu, cfg.mu[t.class.index()]);
    }
}

#[test]
fn control_invariants_hold_over_a_run() {
    let bundle = scenario(1.0, 23);
    let cfg = paper_config();
    let mut c = EchoCanceler::new(cfg.clone()).unwrap();
    let mut main = c.main().coefficients().to_vec();
    let mut shadow = c.shadow().coefficients().to_vec();
    let mut last_schedule: Option<usize> = None;
    let mut copies = 0;
    let mut shadow_moves = 0;
    for n in 0..60_000 {
        let out = c.process_sample(bundle.x[n], bundle.y[n]);
        if out.copied {
            copies += 1;
            let decided = last_schedule.take().expect("copy without a decision");
            assert!(n >= decided + cfg.copy_delay);
            // the copy precedes this sample's shadow update
            assert_eq!(c.main().coefficients(), shadow.as_slice());
        } else {
            assert_eq!(
                c.main().coefficients(),
                main.as_slice(),
                "main filter moved at {n} without a copy"
            );
        }
        if c.shadow().coefficients() != shadow.as_slice() {
            shadow_moves += 1;
        }
        if let Some(t) = out.test {
            assert_eq!(c.step_size(), cfg.mu[t.class.index()]);
            if t.copy_scheduled {
                assert!(!t.class.double_talk() && t.statistic.t0 < t.statistic.t1);
                last_schedule = Some(n);
            }
            if let Some(p) = c.state().pending_copy {
                assert!(p > n && p <= n + cfg.copy_delay);
            }
        }
        main = c.main().coefficients().to_vec();
        shadow = c.shadow().coefficients().to_vec();
    }
    assert!(copies > 0);
    assert_eq!(shadow_moves, 60_000);
}

/// Decisions that moved to the partner of the previous class.
fn paired_flips(tests: &[TestDecision]) -> Vec<TestDecision> {
    tests
        .windows(2)
        .filter(|w| w[1].class == w[0].class.partner())
        .map(|w| w[1])
        .collect()
}

fn in_band(t: &TestDecision, eps: f64) -> bool {
    let r = t.statistic.t0 / t.statistic.t1;
    r >= 1.0 - eps && r <= 1.0 + eps
}

#[test]
fn guard_modes_gate_paired_changes() {
    let bundle = scenario(1.0, 24);
    for mode in [GuardMode::Hysteresis, GuardMode::Literal] {
        let mut cfg = paper_config();
        cfg.guard_mode = mode;
        // a short window makes the ratio noisy enough to exercise both sides of the band
        cfg.window = 4;
        let run = run_canceler(&bundle, &cfg).unwrap();
        let mut gated = 0;
        for t in &run.tests {
            if t.raw != t.class {
                gated += 1;
                assert_eq!(t.raw.partner(), t.class);
            }
        }
        for b in paired_flips(&run.tests) {
            match mode {
                GuardMode::Hysteresis => assert!(
                    !in_band(&b, cfg.guard_epsilon),
                    "flip inside band at {}",
                    b.n
                ),
                GuardMode::Literal => assert!(
                    in_band(&b, cfg.guard_epsilon),
                    "flip outside band at {}",
                    b.n
                ),
            }
        }
        assert!(gated > 0, "{mode:?} never overrode the rule");
    }
}

#[test]
fn identical_runs_are_identical() {
    let bundle = scenario(1.0, 25);
    let cfg = paper_config();
    let a = run_canceler(&bundle, &cfg).unwrap();
    let b = run_canceler(&bundle, &cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.main, b.main);
    assert_eq!(
        a.records.iter().map(|r| r.class).next(),
        Some(Hypothesis::H1)
    );
}
