//! Checks against independent numerical oracles: RK4 integration of the
//! Schrödinger equation, brute-force search over initial states, and
//! analytic Gaussian integrals.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use statrs::function::erf::erf;
use xtalk_core::dynamics::{
    max_rotation_error, population_transfer, rotation_error, ComplexAmplitude, QubitState, Unitary2,
};
use xtalk_core::exec::Exec;
use xtalk_core::field::{n_pi_error, CompensationSetting, CrosstalkContext};
use xtalk_core::optics::{focal_field, gaussian_intensity, linspace, FocusParams};
use xtalk_core::pulses::{self, propagators, with_pcc, SimOptions, SPECTATOR, TARGET};

type State = [Complex64; 2];

/// `dψ/dt = −i·H·ψ`, `H = ½(Re Ω σx + Im Ω σy + Δ σz)`.
fn deriv(omega: Complex64, delta: f64, psi: &State) -> State {
    let i = Complex64::i();
    let h00 = Complex64::new(delta / 2.0, 0.0);
    let h01 = omega.conj() / 2.0;
    let h10 = omega / 2.0;
    [-i * (h00 * psi[0] + h01 * psi[1]), -i * (h10 * psi[0] - h00 * psi[1])]
}

fn rk4(omega: Complex64, delta: f64, duration: f64, mut psi: State) -> State {
    let steps = ((omega.norm().hypot(delta) * duration / 2e-3).ceil() as usize).max(1);
    let h = duration / steps as f64;
    let add = |a: &State, b: &State, s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
    for _ in 0..steps {
        let k1 = deriv(omega, delta, &psi);
        let k2 = deriv(omega, delta, &add(&psi, &k1, h / 2.0));
        let k3 = deriv(omega, delta, &add(&psi, &k2, h / 2.0));
        let k4 = deriv(omega, delta, &add(&psi, &k3, h));
        for j in 0..2 {
            psi[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (h / 6.0);
        }
    }
    psi
}

/// Removes free precession `∫Δ dt` accumulated in the laser frame.
fn to_qubit_frame(psi: State, phase: f64) -> State {
    [
        psi[0] * Complex64::from_polar(1.0, phase / 2.0),
        psi[1] * Complex64::from_polar(1.0, -phase / 2.0),
    ]
}

fn state_distance(a: &QubitState, b: &State) -> f64 {
    (a.c0() - b[0]).norm().max((a.c1() - b[1]).norm())
}

fn initial_states() -> Vec<QubitState> {
    vec![
        QubitState::ground(),
        QubitState::excited(),
        QubitState::from_bloch(PI / 2.0, 0.0),
        QubitState::from_bloch(PI / 2.0, PI / 2.0),
        QubitState::from_bloch(1.1, -2.3),
    ]
}

#[test]
fn composite_sequences_match_rk4() {
    let mut ctx = CrosstalkContext::default();
    ctx.f_ct = 0.12;
    ctx.delta_ct = 0.07 * ctx.omega0;
    ctx.comp_path_phase = 0.9;
    let setting = CompensationSetting::new(0.8, 2.6).unwrap();
    let base = pulses::sk1(PI, 0.3, ctx.omega0).unwrap();
    let seq = with_pcc(&base, &ctx, &setting).unwrap();
    let [u_t, u_s] = propagators(&seq, &ctx, &SimOptions::default(), 0.0).unwrap();

    let target = &seq.channels[TARGET].segments;
    let spectator = &seq.channels[SPECTATOR].segments;
    for psi0 in initial_states() {
        let mut t_state = [psi0.c0(), psi0.c1()];
        let mut s_state = t_state;
        let mut s_phase = 0.0;
        for (t, s) in target.iter().zip(spectator) {
            let e_t = Complex64::from_polar(t.rabi.magnitude(), t.rabi.phase() + t.phase);
            let e_c = Complex64::from_polar(s.rabi.magnitude(), s.rabi.phase() + s.phase + ctx.comp_path_phase);
            t_state = rk4(e_t, 0.0, t.duration, t_state);
            s_state = rk4(e_t * ctx.f_ct + e_c, ctx.delta_ct, s.duration, s_state);
            s_phase += ctx.delta_ct * s.duration;
        }
        let s_state = to_qubit_frame(s_state, s_phase);
        assert!(state_distance(&u_t.apply(&psi0), &t_state) < 1e-8);
        assert!(state_distance(&u_s.apply(&psi0), &s_state) < 1e-8);
    }
}

#[test]
fn quadrilateral_and_detuned_square_match_rk4() {
    let mut ctx = CrosstalkContext::default();
    ctx.delta_ct = -0.2 * ctx.omega0;
    for seq in [
        pulses::quadrilateral(ctx.omega0),
        pulses::square(ctx.omega0, 1.0, 3.0 * PI),
    ] {
        let [_, u_s] = propagators(&seq, &ctx, &SimOptions::default(), 0.0).unwrap();
        for psi0 in initial_states() {
            let mut s = [psi0.c0(), psi0.c1()];
            let mut phase = 0.0;
            for t in &seq.channels[TARGET].segments {
                let e = Complex64::from_polar(t.rabi.magnitude() * ctx.f_ct, t.rabi.phase() + t.phase);
                s = rk4(e, ctx.delta_ct, t.duration, s);
                phase += ctx.delta_ct * t.duration;
            }
            let s = to_qubit_frame(s, phase);
            assert!(state_distance(&u_s.apply(&psi0), &s) < 1e-8);
        }
    }
}

#[test]
fn n_pi_error_matches_rk4_train() {
    let omega0 = 1.0;
    for (n, f) in [(1u32, 0.096), (7, 0.05), (30, 0.013), (64, 0.2)] {
        let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        for _ in 0..n {
            psi = rk4(Complex64::new(f * omega0, 0.0), 0.0, PI / omega0, psi);
        }
        assert!((psi[1].norm_sqr() - n_pi_error(n, f)).abs() < 1e-8, "n={n} f={f}");
    }
}

#[test]
fn max_rotation_error_matches_brute_force() {
    let cases = [
        (Complex64::new(1.0, 0.0), 0.0, 1.3),
        (Complex64::new(0.3, -0.8), 0.5, 2.2),
        (Complex64::new(0.0, 0.2), -1.1, 4.0),
        (Complex64::new(2.0, 1.0), 3.0, 0.7),
    ];
    let grid = 181;
    for (rabi, det, t) in cases {
        let u = xtalk_core::dynamics::rotation_unitary(ComplexAmplitude(rabi), det, t).unwrap();
        let mut best = 0.0f64;
        for i in 0..grid {
            for j in 0..2 * grid {
                let theta = PI * i as f64 / (grid - 1) as f64;
                let phi = PI * j as f64 / grid as f64;
                best = best.max(rotation_error(&QubitState::from_bloch(theta, phi), &u));
            }
        }
        let analytic = max_rotation_error(ComplexAmplitude(rabi), det, t);
        assert!(best <= analytic + 1e-12, "grid exceeds the analytic maximum");
        assert!(analytic - best < 1e-3, "analytic {analytic} vs grid {best}");
        let pop = population_transfer(ComplexAmplitude(rabi), det, t);
        assert!((pop - rotation_error(&QubitState::ground(), &u)).abs() < 1e-12);
    }
}

#[test]
fn unitary_composition_oracle() {
    // square π at axis φ against the textbook rotation matrix
    let ctx = CrosstalkContext::default();
    let seq = pulses::square_pi(ctx.omega0, 0.4);
    let [u_t, _] = propagators(&seq, &ctx, &SimOptions::default(), 0.0).unwrap();
    assert!(u_t.distance_up_to_phase(&Unitary2::rotation(0.4, PI)) < 1e-12);
}

fn pupil_power_erf(p: &FocusParams) -> f64 {
    // ∫_{-a}^{a} exp(−2s²/w²) ds
    let w = p.pupil_waist();
    let a = p.pupil_window();
    w * (PI / 2.0).sqrt() * erf(SQRT_2 * a / w)
}

#[test]
fn pupil_power_matches_erf() {
    for na in [0.1, 0.2, 0.35, 0.9] {
        let p = FocusParams {
            na,
            ..FocusParams::default()
        };
        let f = focal_field(&p, &[0.0], Exec::Sequential).unwrap();
        let rel = (f.pupil_power / pupil_power_erf(&p) - 1.0).abs();
        assert!(rel < 1e-9, "na={na} rel={rel}");
    }
}

#[test]
fn focal_energy_satisfies_parseval() {
    for na in [0.35, 0.5] {
        let p = FocusParams {
            na,
            ..FocusParams::default()
        };
        let step = 0.02;
        let grid = linspace(-60.0, 60.0, (120.0 / step) as usize + 1);
        let f = focal_field(&p, &grid, Exec::default()).unwrap();
        let energy: f64 = f
            .field
            .windows(2)
            .map(|w| 0.5 * (w[0] * w[0] + w[1] * w[1]) * step)
            .sum();
        let expected = p.wavelength_um() * pupil_power_erf(&p);
        let rel = (energy / expected - 1.0).abs();
        assert!(rel < 1e-4, "na={na} rel={rel}");
    }
}

#[test]
fn wide_aperture_focus_is_gaussian() {
    let p = FocusParams {
        na: 0.95,
        ..FocusParams::default()
    };
    let grid = linspace(-3.0, 3.0, 61);
    let f = focal_field(&p, &grid, Exec::Sequential).unwrap();
    for (i, &x) in f.normalized_intensity().iter().zip(&grid) {
        let g = gaussian_intensity(p.w0_um, x);
        assert!((i / g - 1.0).abs() < 1e-3, "x={x}");
    }
}
