use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use xtalk_core::dynamics::{PulseSegment, QubitState};
use xtalk_core::exec::Exec;
use xtalk_core::experiment::{run_scenario, Scenario, ScenarioConfig};
use xtalk_core::field::{
    effective_magnitude, effective_magnitude_with_overlap, is_suppressing, phase_tolerance, pi_pulse_error,
    polarization_floor, relative_error, CompensationSetting, CrosstalkContext,
};
use xtalk_core::pulses::{self, gate_train, propagators, Method, PulseSequence, SimOptions};

fn segment() -> impl Strategy<Value = PulseSegment> {
    (0.0..2.0e5f64, -PI..PI, 0.0..3e-5f64).prop_map(|(r, p, t)| PulseSegment::new(r, p, t))
}

fn context() -> impl Strategy<Value = CrosstalkContext> {
    (0.0..0.3f64, -0.3..0.3f64, 0.0..TAU, 0.5..=1.0f64).prop_map(|(f, d, path, pol)| {
        let mut c = CrosstalkContext::default();
        c.f_ct = f;
        c.delta_ct = d * c.omega0;
        c.comp_path_phase = path;
        c.pol_overlap = pol;
        c
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn propagators_are_unitary(segs in prop::collection::vec(segment(), 1..8), ctx in context(),
                               f in 0.0..2.0f64, dphi in 0.0..TAU) {
        let seq = pulses::with_pcc(&PulseSequence::target_only(segs), &ctx, &CompensationSetting::new(f, dphi).unwrap()).unwrap();
        let [u_t, u_s] = propagators(&seq, &ctx, &SimOptions::default(), 0.0).unwrap();
        prop_assert!(u_t.unitarity_defect() < 1e-12);
        prop_assert!(u_s.unitarity_defect() < 1e-12);
        let p = u_s.apply(&QubitState::ground()).excited_population();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn normalization_keeps_the_unitary(segs in prop::collection::vec(segment(), 1..6),
                                       split in prop::collection::vec(segment(), 1..6), ctx in context()) {
        let mut seq = PulseSequence::target_only(segs);
        // drive the spectator with an unrelated segmentation
        seq.channels[pulses::SPECTATOR].segments = split;
        let [a_t, a_s] = propagators(&seq, &ctx, &SimOptions::default(), 0.0).unwrap();
        let mut norm = seq.clone();
        norm.normalize();
        prop_assert!(norm.is_normalized());
        let [b_t, b_s] = propagators(&norm, &ctx, &SimOptions::default(), 0.0).unwrap();
        prop_assert!(a_t.distance_up_to_phase(&b_t) < 1e-12);
        prop_assert!(a_s.distance_up_to_phase(&b_s) < 1e-12);
    }

    #[test]
    fn suppression_condition_agrees_with_magnitude(f in 0.0..3.0f64, dphi in -TAU..TAU) {
        let m = effective_magnitude(f, dphi);
        prop_assume!((m - 1.0).abs() > 1e-9);
        prop_assert_eq!(is_suppressing(f, dphi), m < 1.0);
    }

    #[test]
    fn phase_tolerance_hits_target(s in 1e-6..3.9f64) {
        let tol = phase_tolerance(s);
        prop_assert!((relative_error(1.0, PI + tol) - s).abs() < 1e-9 * s.max(1.0));
        prop_assert!((relative_error(1.0, PI - tol) - s).abs() < 1e-9 * s.max(1.0));
    }

    #[test]
    fn overlap_floor_is_a_lower_bound(f in 0.0..2.0f64, dphi in 0.0..TAU, p in 0.0..=1.0f64) {
        prop_assert!(effective_magnitude_with_overlap(f, dphi, p) >= polarization_floor(p) - 1e-12);
        prop_assert!((effective_magnitude_with_overlap(f, dphi, 1.0) - effective_magnitude(f, dphi)).abs() < 1e-12);
    }

    #[test]
    fn pcc_train_follows_closed_form(n in 1usize..40, f_ct in 0.0..0.2f64, f in 0.0..2.0f64, dphi in 0.0..TAU) {
        let ctx = CrosstalkContext {
            f_ct,
            ..CrosstalkContext::default()
        };
        let s = CompensationSetting::new(f, dphi).unwrap();
        let seq = gate_train(Method::Pcc, n, &ctx, &s).unwrap();
        let p = pulses::spectator_population(&seq, &ctx, &SimOptions::default()).unwrap();
        prop_assert!((p - pi_pulse_error(n as u32, f_ct, f, dphi)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn csv_is_identical_across_workers(seed in any::<u64>(), shots in 1u32..2000) {
        let mut cfg = ScenarioConfig::new(Scenario::XError);
        cfg.seed = seed;
        cfg.shots = shots;
        let a = run_scenario(&cfg, Exec::Sequential).unwrap().to_csv_string("p").unwrap();
        let b = run_scenario(&cfg, Exec::default()).unwrap().to_csv_string("p").unwrap();
        prop_assert_eq!(a, b);
    }
}
