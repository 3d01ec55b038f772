//! Monte-Carlo checks of the sampled quantities against their analytic
//! expectations.

use std::f64::consts::PI;

use statrs::statistics::Statistics;
use xtalk_core::dynamics::wrap_to_pi;
use xtalk_core::exec::Exec;
use xtalk_core::experiment::{run_scenario, Scenario, ScenarioConfig};
use xtalk_core::noise::{
    beatnote_phase_measurement, ramsey_phase_estimate, ramsey_phase_probe, sample_slow_drift, trace_sigma,
    BeatnoteSetup, DriftProcess,
};
use xtalk_core::pulses::Method;

#[test]
fn sampled_populations_within_five_sigma() {
    for (scenario, method) in [
        (Scenario::XError, Method::None),
        (Scenario::ZError, Method::Sk1),
        (Scenario::RabiScan, Method::None),
        (Scenario::AmplitudeScan, Method::Quad),
        (Scenario::PhaseScan, Method::Pcc),
    ] {
        let mut cfg = ScenarioConfig::new(scenario);
        cfg.method = method;
        cfg.shots = 10_000;
        cfg.seed = 11;
        let r = run_scenario(&cfg, Exec::default()).unwrap();
        for i in 0..r.len() {
            let (m, s, e) = (r.value_mean[i], r.value_sampled[i], r.stderr[i]);
            // a point with p = 0 or 1 has no spread; one extra count is allowed
            let bound = 5.0 * e + 1.0 / f64::from(cfg.shots);
            assert!(
                (s - m).abs() <= bound,
                "{scenario} point {i}: mean {m} sampled {s} stderr {e}"
            );
        }
    }
}

#[test]
fn drift_sigma_matches_presets() {
    for (p, target) in [(DriftProcess::enclosed(), 0.05), (DriftProcess::exposed(), 0.49)] {
        let sigmas: Vec<f64> = Exec::default().map(200, |s| {
            trace_sigma(&sample_slow_drift(&p, p.window, 0.05, s as u64).unwrap())
        });
        let rms = sigmas.iter().map(|s| s * s).sum::<f64>().sqrt() / (sigmas.len() as f64).sqrt();
        assert!((rms / target - 1.0).abs() < 0.15, "rms sigma {rms} vs {target}");
        // spread across seeds is a real distribution, not a constant
        assert!(sigmas.clone().std_dev() > 0.05 * target);
    }
}

#[test]
fn drift_increments_have_configured_diffusion() {
    let p = DriftProcess::exposed();
    let dt = 0.01;
    let mut incs = Vec::new();
    for seed in 0..50 {
        let t = sample_slow_drift(&p, p.window, dt, seed).unwrap();
        incs.extend(t.windows(2).map(|w| w[1] - w[0] - p.rate * dt));
    }
    let var = incs.variance();
    let expected = p.diffusion() * dt;
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
}

#[test]
fn beatnote_noise_has_configured_sigma() {
    let b = BeatnoteSetup::default();
    let sigma = 0.02;
    let truth = 0.7;
    let errs: Vec<f64> = (0..4000)
        .map(|s| wrap_to_pi(beatnote_phase_measurement(&b, truth, sigma, s).unwrap() - truth))
        .collect();
    let mean = errs.clone().mean();
    let sd = errs.std_dev();
    assert!(mean.abs() < 5.0 * sigma / 4000f64.sqrt());
    assert!((sd / sigma - 1.0).abs() < 0.05);
}

#[test]
fn ramsey_estimate_is_unbiased_in_the_shot_limit() {
    for truth in [-2.5, -0.4, 0.0, 0.3, 1.2, PI - 0.1] {
        let shots = 100_000;
        let p0 = ramsey_phase_probe(truth, shots, 3).unwrap();
        let p90 = ramsey_phase_probe(truth - PI / 2.0, shots, 4).unwrap();
        let est = ramsey_phase_estimate(p0, p90);
        assert!(wrap_to_pi(est - truth).abs() < 0.02, "truth {truth} est {est}");
    }
}

#[test]
fn drift_monitor_estimates_track_truth() {
    let mut cfg = ScenarioConfig::new(Scenario::DriftMonitor);
    cfg.shots = 10_000;
    cfg.seed = 5;
    let r = run_scenario(&cfg, Exec::default()).unwrap();
    for i in 0..r.len() {
        let d = wrap_to_pi(r.value_sampled[i] - r.value_mean[i]);
        assert!(d.abs() <= 5.0 * r.stderr[i], "point {i}: {d} vs {}", r.stderr[i]);
    }
}

#[test]
fn duty_cycle_readout_within_noise() {
    let mut cfg = ScenarioConfig::new(Scenario::DutyCycleSweep);
    cfg.seed = 2;
    cfg.scan.points = Some(5);
    let r = run_scenario(&cfg, Exec::default()).unwrap();
    for i in 0..r.len() {
        assert!((r.value_sampled[i] - r.value_mean[i]).abs() <= 5.0 * r.stderr[i]);
    }
    // falls toward unit duty ratio
    assert!(r.value_mean[0].abs() > 10.0 * r.value_mean[r.len() - 1].abs());
}
