//! Closed-loop calibration of the cancellation tone.
//!
//! The chain mirrors the lab procedure: measure the spectator π time under
//! crosstalk alone, match the cancellation tone's π time to it by bisection on
//! amplitude, then scan the relative phase with both tones on and fit the
//! minimum. A separate frequency scan locates the Stark-shifted target
//! resonance. All measurements run on the simulated pair with optional shot
//! noise; all fits go through [`least_squares`].

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagator, wrap_to_tau, ComplexAmplitude, PulseSegment, QubitState};
use crate::error::{ensure_finite, Error, Result};
use crate::field::{CompensationSetting, CrosstalkContext};
use crate::pulses::{self, segments_unitary, ChannelPulse, PulseSequence, SimOptions, SPECTATOR, TARGET};
use crate::sampling::{point_rng, Sampling};

/// Per-run record of the least-squares iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Sum of squared residuals: the starting value, then one entry per
    /// accepted step.
    pub residual_trace: Vec<f64>,
    /// Step halvings used in each iteration.
    pub halvings: Vec<u32>,
    pub converged: bool,
    pub params: Vec<f64>,
    pub rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub max_halvings: u32,
    /// Relative finite-difference step.
    pub rel_step: f64,
    /// Stop when an accepted step improves the residual sum by less than this
    /// fraction.
    pub tolerance: f64,
    /// Grid points per free parameter for the starting-point search.
    pub prescan: Option<usize>,
    /// A fit that ends with an rms residual above this is a failure.
    pub max_rms: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            max_halvings: 30,
            rel_step: 1e-6,
            tolerance: 1e-15,
            prescan: None,
            max_rms: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Vec<f64>,
    /// Covariance of the free parameters, `s²·(JᵀJ)⁻¹`, in free-parameter order.
    pub covariance: Vec<Vec<f64>>,
    pub rms: f64,
    pub diagnostics: FitDiagnostics,
}

impl FitReport {
    /// One-sigma uncertainty of each free parameter.
    pub fn stderr(&self) -> Vec<f64> {
        (0..self.covariance.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }
}

fn ssr<F: Fn(f64, &[f64]) -> f64>(model: &F, xs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (model(x, p) - y).powi(2)).sum()
}

fn fd_step(p: f64, rel: f64) -> f64 {
    rel * p.abs().max(1e-3)
}

/// Jacobian of the model with respect to the free parameters, by central
/// differences (one-sided at a bound).
fn jacobian<F: Fn(f64, &[f64]) -> f64>(
    model: &F,
    xs: &[f64],
    p: &[f64],
    free: &[usize],
    bounds: &[(f64, f64)],
    rel: f64,
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(xs.len(), free.len());
    for (col, &k) in free.iter().enumerate() {
        let h = fd_step(p[k], rel);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[k] = (p[k] + h).min(bounds[k].1);
        lo[k] = (p[k] - h).max(bounds[k].0);
        let span = hi[k] - lo[k];
        if span <= 0.0 {
            continue;
        }
        for (row, &x) in xs.iter().enumerate() {
            j[(row, col)] = (model(x, &hi) - model(x, &lo)) / span;
        }
    }
    j
}

/// Damped Gauss–Newton fit of `model(x, p)` to `(xs, ys)`.
///
/// Only parameters with `free[k]` set are varied, within `bounds`. Each
/// iteration takes the Gauss–Newton step and halves it until the residual
/// sum decreases, so accepted steps are strictly monotone.
pub fn least_squares<F>(
    model: F,
    xs: &[f64],
    ys: &[f64],
    p0: &[f64],
    free: &[bool],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
) -> Result<FitReport>
where
    F: Fn(f64, &[f64]) -> f64,
{
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    if p0.len() != free.len() || p0.len() != bounds.len() {
        return Err(Error::InvalidArgument(
            "parameter, mask and bound lengths differ".into(),
        ));
    }
    for (k, (&p, &(lo, hi))) in p0.iter().zip(bounds).enumerate() {
        ensure_finite("bound", lo)?;
        ensure_finite("bound", hi)?;
        ensure_finite("parameter", p)?;
        if lo > hi || p < lo || p > hi {
            return Err(Error::InvalidArgument(format!(
                "parameter {k} = {p} outside bounds [{lo}, {hi}]"
            )));
        }
    }
    for &y in ys {
        ensure_finite("data", y)?;
    }
    let free_idx: Vec<usize> = (0..free.len()).filter(|&k| free[k]).collect();
    if free_idx.is_empty() {
        return Err(Error::InvalidArgument("no free parameters".into()));
    }
    if xs.len() < free_idx.len() {
        return Err(Error::DegenerateFit(format!(
            "{} points cannot determine {} parameters",
            xs.len(),
            free_idx.len()
        )));
    }

    let mut p = p0.to_vec();
    if let Some(points) = opts.prescan {
        p = prescan(&model, xs, ys, &p, &free_idx, bounds, points.max(2));
    }
    let mut current = ssr(&model, xs, ys, &p);
    let mut diag = FitDiagnostics {
        residual_trace: vec![current],
        ..FitDiagnostics::default()
    };
    let mut floor_hit = false;

    for _ in 0..opts.max_iterations {
        diag.iterations += 1;
        let j = jacobian(&model, xs, &p, &free_idx, bounds, opts.rel_step);
        let r = DVector::from_iterator(xs.len(), xs.iter().zip(ys).map(|(&x, &y)| y - model(x, &p)));
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * r;
        let Some(delta) = solve_normal(&jtj).map(|inv| inv * jtr) else {
            return Err(Error::DegenerateFit("singular normal matrix".into()));
        };

        let mut accepted = false;
        let mut lambda = 1.0;
        let mut halvings = 0;
        while halvings <= opts.max_halvings {
            let mut trial = p.clone();
            for (col, &k) in free_idx.iter().enumerate() {
                trial[k] = (p[k] + lambda * delta[col]).clamp(bounds[k].0, bounds[k].1);
            }
            let s = ssr(&model, xs, ys, &trial);
            if s < current {
                let improvement = (current - s) / current.max(f64::MIN_POSITIVE);
                p = trial;
                current = s;
                diag.residual_trace.push(s);
                accepted = true;
                if improvement < opts.tolerance {
                    diag.converged = true;
                }
                break;
            }
            lambda *= 0.5;
            halvings += 1;
        }
        diag.halvings.push(halvings.min(opts.max_halvings));
        if !accepted {
            floor_hit = true;
            diag.converged = true;
            break;
        }
        if diag.converged || current == 0.0 {
            diag.converged = true;
            break;
        }
    }

    let dof = xs.len().saturating_sub(free_idx.len());
    let rms = (current / xs.len() as f64).sqrt();
    diag.params = p.clone();
    diag.rms = rms;
    if rms > opts.max_rms {
        let reason = if floor_hit {
            format!("step halving floor reached with rms residual {rms:.3e}")
        } else {
            format!("rms residual {rms:.3e} above limit {:.3e}", opts.max_rms)
        };
        return Err(Error::FitFailure {
            reason,
            diagnostics: Box::new(diag),
        });
    }

    let j = jacobian(&model, xs, &p, &free_idx, bounds, opts.rel_step);
    let s2 = if dof > 0 { current / dof as f64 } else { 0.0 };
    let covariance = match solve_normal(&(j.transpose() * &j)) {
        Some(inv) => (0..free_idx.len())
            .map(|a| (0..free_idx.len()).map(|b| s2 * inv[(a, b)]).collect())
            .collect(),
        None => return Err(Error::DegenerateFit("singular Jacobian at the solution".into())),
    };
    Ok(FitReport {
        params: p,
        covariance,
        rms,
        diagnostics: diag,
    })
}

/// Inverse of a symmetric positive semi-definite matrix, or `None` when its
/// condition number is too large to trust.
fn solve_normal(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > 1e-13 * max) {
        return None;
    }
    m.clone().try_inverse()
}

fn prescan<F: Fn(f64, &[f64]) -> f64>(
    model: &F,
    xs: &[f64],
    ys: &[f64],
    p0: &[f64],
    free: &[usize],
    bounds: &[(f64, f64)],
    points: usize,
) -> Vec<f64> {
    let total = points.pow(free.len() as u32);
    let mut best = (ssr(model, xs, ys, p0), p0.to_vec());
    let mut trial = p0.to_vec();
    for flat in 0..total {
        let mut rest = flat;
        for &k in free {
            let i = rest % points;
            rest /= points;
            let (lo, hi) = bounds[k];
            trial[k] = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        }
        let s = ssr(model, xs, ys, &trial);
        if s < best.0 {
            best = (s, trial.clone());
        }
    }
    best.1
}

/// Scan sizes, shot counts and search ranges for the calibration routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub sampling: Sampling,
    /// Expected crosstalk ratio, used only to size the first π-time scan.
    pub f_ct_guess: f64,
    pub points_per_period: usize,
    pub periods: usize,
    pub phase_points: usize,
    /// Pulse time of the phase scan in units of `2·t_π^CT`.
    pub phase_periods: u32,
    pub amplitude_bracket: (f64, f64),
    pub amplitude_tolerance: f64,
    pub stark_points: usize,
    /// Half width of the Stark scan in units of `Ω_0`.
    pub stark_span: f64,
    /// Fit the Stark shift and use the result as the spectator detuning in
    /// the phase model.
    pub calibrate_stark: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            sampling: Sampling::Shots(200),
            f_ct_guess: 0.1,
            points_per_period: 20,
            periods: 2,
            phase_points: 40,
            phase_periods: 1,
            amplitude_bracket: (0.25, 4.0),
            amplitude_tolerance: 1e-5,
            stark_points: 41,
            stark_span: 2.0,
            calibrate_stark: false,
        }
    }
}

impl CalibrationConfig {
    pub fn exact() -> Self {
        Self {
            sampling: Sampling::Exact,
            ..Self::default()
        }
    }

    fn signal_floor(&self) -> f64 {
        match self.sampling {
            Sampling::Exact => 1e-9,
            s => s.noise_floor(),
        }
    }

    fn fit_rms_limit(&self) -> f64 {
        match self.sampling {
            Sampling::Exact => 1e-3,
            s => 4.0 * s.noise_floor() + 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_period < 4 || self.periods == 0 || self.phase_points < 8 || self.stark_points < 8 {
            return Err(Error::Configuration("calibration scans are too short".into()));
        }
        if self.phase_periods == 0 {
            return Err(Error::Configuration("phase_periods must be at least 1".into()));
        }
        if let Sampling::Shots(0) = self.sampling {
            return Err(Error::Configuration("shots must be at least 1".into()));
        }
        let (lo, hi) = self.amplitude_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Configuration(format!("invalid amplitude bracket ({lo}, {hi})")));
        }
        if !(self.f_ct_guess > 0.0 && self.stark_span > 0.0 && self.amplitude_tolerance > 0.0) {
            return Err(Error::Configuration("guesses and spans must be positive".into()));
        }
        Ok(())
    }
}

/// Disjoint RNG stream ranges for the calibration stages.
const STAGE_PI_TIME: u64 = 1;
const STAGE_AMPLITUDE: u64 = 2;
const STAGE_PHASE: u64 = 3;
const STAGE_STARK: u64 = 4;

fn stream(stage: u64, sub: u64, point: usize) -> u64 {
    (stage << 48) | (sub << 24) | point as u64
}

/// Spectator population from `|0⟩` for a sequence.
fn spectator_pop(seq: &PulseSequence, ctx: &CrosstalkContext) -> Result<f64> {
    pulses::spectator_population(seq, ctx, &SimOptions::default())
}

/// Sequence with the target idle and only the cancellation tone on.
fn compensation_only(ctx: &CrosstalkContext, f_comp: f64, t: f64) -> PulseSequence {
    PulseSequence {
        channels: vec![
            ChannelPulse::new(TARGET, vec![PulseSegment::idle(t)]),
            ChannelPulse::new(
                SPECTATOR,
                vec![PulseSegment::new(f_comp * ctx.f_ct * ctx.omega0, 0.0, t)],
            ),
        ],
        seed: 0,
        shots: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// Time of the first population maximum, `π/Ω̃`.
    pub t_pi: f64,
    pub contrast: f64,
    pub report: FitReport,
}

/// Fits `A·sin²(w·t/2)` to a flop and checks the contrast against the shot
/// noise floor.
fn fit_rabi_flop(times: &[f64], pops: &[f64], w_guess: f64, cfg: &CalibrationConfig) -> Result<RabiFit> {
    let floor = cfg.signal_floor();
    let spread =
        pops.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - pops.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(spread >= 5.0 * floor) {
        return Err(Error::LowSignal {
            contrast: spread.max(0.0),
            floor: 5.0 * floor,
        });
    }
    let model = |t: f64, p: &[f64]| p[0] * (0.5 * p[1] * t).sin().powi(2);
    let opts = FitOptions {
        prescan: Some(60),
        ..FitOptions::default()
    };
    let report = least_squares(
        model,
        times,
        pops,
        &[1.0, w_guess],
        &[true, true],
        &[(0.0, 1.0), (0.3 * w_guess, 3.0 * w_guess)],
        &opts,
    )?;
    let contrast = report.params[0];
    if contrast < 5.0 * floor {
        return Err(Error::LowSignal {
            contrast,
            floor: 5.0 * floor,
        });
    }
    Ok(RabiFit {
        t_pi: PI / report.params[1],
        contrast,
        report,
    })
}

fn flop_scan<S>(
    cfg: &CalibrationConfig,
    t_max: f64,
    seed: u64,
    stage: u64,
    sub: u64,
    seq_at: S,
    ctx: &CrosstalkContext,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    S: Fn(f64) -> PulseSequence,
{
    let n = cfg.points_per_period * cfg.periods;
    let mut times = Vec::with_capacity(n);
    let mut pops = Vec::with_capacity(n);
    for k in 0..n {
        let t = t_max * (k + 1) as f64 / n as f64;
        let p = spectator_pop(&seq_at(t), ctx)?;
        let mut rng = point_rng(seed, stream(stage, sub, k));
        times.push(t);
        pops.push(cfg.sampling.measure(p, &mut rng));
    }
    Ok((times, pops))
}

/// Spectator π time under crosstalk alone, from a fitted Rabi flop.
pub fn measure_pi_time(ctx: &CrosstalkContext, cfg: &CalibrationConfig, seed: u64) -> Result<RabiFit> {
    ctx.validate()?;
    cfg.validate()?;
    let w_guess = cfg.f_ct_guess * ctx.omega0;
    let t_max = cfg.periods as f64 * TAU / w_guess;
    let omega0 = ctx.omega0;
    let (times, pops) = flop_scan(
        cfg,
        t_max,
        seed,
        STAGE_PI_TIME,
        0,
        |t| pulses::square(omega0, 0.0, omega0 * t),
        ctx,
    )?;
    fit_rabi_flop(&times, &pops, w_guess, cfg)
}

/// π time of the cancellation tone alone at commanded amplitude `f_comp`.
pub fn measure_compensation_pi_time(
    ctx: &CrosstalkContext,
    f_comp: f64,
    cfg: &CalibrationConfig,
    seed: u64,
    sub: u64,
) -> Result<RabiFit> {
    let w_guess = f_comp * ctx.f_ct * ctx.omega0;
    if !(w_guess > 0.0) {
        return Err(Error::LowSignal {
            contrast: 0.0,
            floor: 5.0 * cfg.signal_floor(),
        });
    }
    let t_max = cfg.periods as f64 * TAU / w_guess;
    let (times, pops) = flop_scan(
        cfg,
        t_max,
        seed,
        STAGE_AMPLITUDE,
        sub,
        |t| compensation_only(ctx, f_comp, t),
        ctx,
    )?;
    fit_rabi_flop(&times, &pops, w_guess, cfg)
}

/// Bisection on the cancellation amplitude until its π time equals
/// `t_pi_ct`.
pub fn calibrate_amplitude(ctx: &CrosstalkContext, t_pi_ct: f64, cfg: &CalibrationConfig, seed: u64) -> Result<f64> {
    ctx.validate()?;
    cfg.validate()?;
    ensure_finite("t_pi_ct", t_pi_ct)?;
    if t_pi_ct <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "t_pi_ct must be positive, got {t_pi_ct}"
        )));
    }
    let mut sub = 0;
    let mut gap = |f: f64| -> Result<f64> {
        sub += 1;
        Ok(measure_compensation_pi_time(ctx, f, cfg, seed, sub)?.t_pi - t_pi_ct)
    };
    let (mut lo, mut hi) = cfg.amplitude_bracket;
    let g_lo = gap(lo)?;
    let g_hi = gap(hi)?;
    // π time falls with amplitude: too weak is positive, too strong negative.
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(Error::Configuration(format!(
            "amplitude bracket [{lo}, {hi}] does not straddle the crosstalk π time"
        )));
    }
    while hi - lo > cfg.amplitude_tolerance {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Population model of the phase scan: spectator flop at the residual
/// drive `Ω_CT·|1 + f·e^{i(φ − φ* + π)}|` with detuning `Δ` for time `t`.
pub fn phase_scan_model(phi: f64, phi_star: f64, f: f64, omega_ct: f64, delta: f64, t: f64) -> f64 {
    let residual = ComplexAmplitude::real(1.0) + ComplexAmplitude::from_polar(f, phi - phi_star + PI);
    let m = omega_ct * residual.magnitude();
    let gen = (m * m + delta * delta).sqrt();
    if gen == 0.0 {
        return 0.0;
    }
    (m * m / (gen * gen)) * (0.5 * gen * t).sin().powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// Fitted cancellation phase in `[0, 2π)`.
    pub delta_phi: f64,
    /// Amplitude ratio absorbed by the fit.
    pub f_comp: f64,
    pub scan_phases: Vec<f64>,
    pub scan_populations: Vec<f64>,
    pub report: FitReport,
}

/// Phase scan at `t = 2n·t_π^CT` with both tones on, fitted to
/// [`phase_scan_model`].
pub fn calibrate_phase(
    ctx: &CrosstalkContext,
    t_pi_ct: f64,
    f_comp: f64,
    delta_ct_estimate: f64,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<PhaseFit> {
    ctx.validate()?;
    cfg.validate()?;
    ensure_finite("f_comp", f_comp)?;
    ensure_finite("t_pi_ct", t_pi_ct)?;
    if t_pi_ct <= 0.0 || f_comp < 0.0 {
        return Err(Error::InvalidArgument(
            "t_pi_ct must be positive and f_comp non-negative".into(),
        ));
    }
    let n = cfg.phase_points;
    let t = 2.0 * f64::from(cfg.phase_periods) * t_pi_ct;
    let gen_ct = PI / t_pi_ct;
    let omega_ct = (gen_ct * gen_ct - delta_ct_estimate * delta_ct_estimate)
        .max(0.0)
        .sqrt();
    let omega0 = ctx.omega0;
    let mut phases = Vec::with_capacity(n);
    let mut pops = Vec::with_capacity(n);
    for k in 0..n {
        let phi = TAU * k as f64 / n as f64;
        let setting = CompensationSetting::new(f_comp, phi)?;
        let seq = pulses::with_pcc(&pulses::square(omega0, 0.0, omega0 * t), ctx, &setting)?;
        let p = spectator_pop(&seq, ctx)?;
        let mut rng = point_rng(seed, stream(STAGE_PHASE, 0, k));
        phases.push(phi);
        pops.push(cfg.sampling.measure(p, &mut rng));
    }

    let model = |phi: f64, p: &[f64]| phase_scan_model(phi, p[0], p[1], omega_ct, delta_ct_estimate, t);
    let bounds = [(0.0, TAU), (0.5 * f_comp.max(1e-3), 1.5 * f_comp.max(1e-3))];
    // Pre-scan the phase alone at the commanded amplitude, then free both.
    let start = prescan(
        &model,
        &phases,
        &pops,
        &[PI, f_comp.clamp(bounds[1].0, bounds[1].1)],
        &[0],
        &bounds,
        721,
    );
    let opts = FitOptions {
        max_rms: cfg.fit_rms_limit(),
        ..FitOptions::default()
    };
    let report = least_squares(model, &phases, &pops, &start, &[true, true], &bounds, &opts)?;
    Ok(PhaseFit {
        delta_phi: wrap_to_tau(report.params[0]),
        f_comp: report.params[1],
        scan_phases: phases,
        scan_populations: pops,
        report,
    })
}

/// Target excitation after a π-time pulse at laser offset `offset` from the
/// bare resonance, for a resonance Stark-shifted by `shift`.
pub fn stark_lineshape(offset: f64, shift: f64, omega0: f64) -> f64 {
    let u = propagator(ComplexAmplitude::real(omega0).0, shift - offset, PI / omega0);
    u.apply(&QubitState::ground()).excited_population()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkFit {
    pub shift: f64,
    /// Spectator detuning implied when the laser tracks the shifted target,
    /// `−shift`.
    pub delta_ct: f64,
    pub report: FitReport,
}

/// Frequency scan of the target resonance with the gate drive on.
pub fn calibrate_stark_shift(ctx: &CrosstalkContext, cfg: &CalibrationConfig, seed: u64) -> Result<StarkFit> {
    calibrate_stark_shift_around(ctx, 0.0, cfg, seed)
}

/// As [`calibrate_stark_shift`] with the scan centred on `center` (rad/s).
pub fn calibrate_stark_shift_around(
    ctx: &CrosstalkContext,
    center: f64,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<StarkFit> {
    ctx.validate()?;
    cfg.validate()?;
    ensure_finite("center", center)?;
    let span = cfg.stark_span * ctx.omega0;
    let n = cfg.stark_points;
    let mut offsets = Vec::with_capacity(n);
    let mut pops = Vec::with_capacity(n);
    for k in 0..n {
        let d = center - span + 2.0 * span * k as f64 / (n - 1) as f64;
        let mut rng = point_rng(seed, stream(STAGE_STARK, 0, k));
        offsets.push(d);
        pops.push(
            cfg.sampling
                .measure(stark_lineshape(d, ctx.stark_shift, ctx.omega0), &mut rng),
        );
    }
    let (peak_idx, _) = pops.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, &p)| if p > best.1 { (i, p) } else { best },
    );
    if peak_idx == 0 || peak_idx == n - 1 {
        return Err(Error::Range(format!(
            "population peaks at the scan edge ({:.3e} rad/s); widen or move the scan",
            offsets[peak_idx]
        )));
    }
    let omega0 = ctx.omega0;
    // Parameters in units of Ω_0 keep the fit well scaled.
    let xs: Vec<f64> = offsets.iter().map(|d| d / omega0).collect();
    let model = |x: f64, p: &[f64]| p[1] * stark_lineshape(x, p[0], 1.0);
    let lo = (center - span) / omega0;
    let hi = (center + span) / omega0;
    let opts = FitOptions {
        max_rms: cfg.fit_rms_limit(),
        ..FitOptions::default()
    };
    let report = least_squares(
        model,
        &xs,
        &pops,
        &[xs[peak_idx], 1.0],
        &[true, true],
        &[(lo, hi), (0.0, 1.0)],
        &opts,
    )?;
    let shift = report.params[0] * omega0;
    let margin = 0.5 * (hi - lo) / (n - 1) as f64;
    if report.params[0] <= lo + margin || report.params[0] >= hi - margin {
        return Err(Error::Range(format!(
            "fitted resonance {shift:.3e} rad/s at the scan edge"
        )));
    }
    Ok(StarkFit {
        shift,
        delta_ct: -shift,
        report,
    })
}

/// Minutes until a drifting phase uses up the tolerance for a given
/// crosstalk-error suppression target, `2·asin(√target/2)/rate`.
pub fn recalibration_interval(drift_rate: f64, suppression_target: f64) -> Result<f64> {
    ensure_finite("drift_rate", drift_rate)?;
    ensure_finite("suppression_target", suppression_target)?;
    if drift_rate <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "drift rate must be positive, got {drift_rate}"
        )));
    }
    if !(suppression_target > 0.0 && suppression_target < 1.0) {
        return Err(Error::OutOfRange {
            value: suppression_target,
            min: 0.0,
            max: 1.0,
        });
    }
    Ok(crate::field::phase_tolerance(suppression_target) / drift_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModelKind {
    /// Closed-form population after `N` square pulses with a detuned
    /// residual drive; reduces to `sin²(πN·f_eff/2)` at zero detuning.
    DetunedRabi,
    /// Population after `N` simulated SK1 π pulses on the spectator.
    Sk1Numeric,
}

/// Parameter vector `(f_eff, Δ_CT/Ω_0, offset)` with a free mask and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    pub kind: FitModelKind,
    pub params: [f64; 3],
    pub free: [bool; 3],
    pub bounds: [(f64, f64); 3],
}

impl FitModel {
    pub fn new(kind: FitModelKind) -> Self {
        Self {
            kind,
            params: [0.05, 0.0, 0.0],
            free: [true, false, false],
            bounds: [(0.0, 0.3), (-1.0, 1.0), (-0.1, 0.1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (&p, &(lo, hi))) in self.params.iter().zip(&self.bounds).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!("bounds of parameter {k} are invalid")));
            }
            if !(lo..=hi).contains(&p) {
                return Err(Error::OutOfRange {
                    value: p,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }

    /// Predicted spectator population after `n` gates.
    pub fn evaluate(&self, n: f64, p: &[f64]) -> f64 {
        let (f_eff, delta, offset) = (p[0], p[1], p[2]);
        let pop = match self.kind {
            FitModelKind::DetunedRabi => {
                let gen = (f_eff * f_eff + delta * delta).sqrt();
                if gen == 0.0 {
                    0.0
                } else {
                    (f_eff * f_eff / (gen * gen)) * (0.5 * PI * n * gen).sin().powi(2)
                }
            }
            FitModelKind::Sk1Numeric => sk1_spectator_population(n.round().max(0.0) as usize, f_eff, delta),
        };
        pop + offset
    }
}

/// Spectator population from `|0⟩` after `n` SK1 π pulses with crosstalk
/// ratio `f` and detuning `delta·Ω_0`, in the spectator frame.
pub fn sk1_spectator_population(n: usize, f: f64, delta: f64) -> f64 {
    let seq = match pulses::sk1(PI, 0.0, 1.0) {
        Ok(s) => s,
        Err(_) => return f64::NAN,
    };
    let segs = &seq.channels[TARGET].segments;
    let block = segments_unitary(segs, f, delta);
    let duration: f64 = segs.iter().map(|s| s.duration).sum();
    let frame = crate::dynamics::qubit_frame_correction(delta, duration);
    let one = frame * block;
    let mut u = crate::dynamics::Unitary2::identity();
    for _ in 0..n {
        u = one * u;
    }
    u.apply(&QubitState::ground()).excited_population()
}

/// Least-squares fit of gate-count data `(N, population)`.
pub fn fit_crosstalk_model(data: &[(u32, f64)], model: &FitModel) -> Result<FitReport> {
    model.validate()?;
    if data.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "need at least 5 points, got {}",
            data.len()
        )));
    }
    let xs: Vec<f64> = data.iter().map(|&(n, _)| f64::from(n)).collect();
    let ys: Vec<f64> = data.iter().map(|&(_, y)| y).collect();
    let opts = FitOptions {
        prescan: Some(if model.free.iter().filter(|&&f| f).count() > 1 {
            40
        } else {
            400
        }),
        ..FitOptions::default()
    };
    least_squares(
        |x, p| model.evaluate(x, p),
        &xs,
        &ys,
        &model.params,
        &model.free,
        &model.bounds,
        &opts,
    )
}

/// Outcome of the full calibration chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(rename = "t_pi_ct_s")]
    pub t_pi_ct: f64,
    pub f_comp_star: f64,
    #[serde(rename = "delta_phi_star_rad")]
    pub delta_phi_star: f64,
    #[serde(rename = "delta_ct_star_rad_s")]
    pub delta_ct_star: f64,
    /// rms residual of the phase fit.
    pub residual: f64,
    /// ISO-8601 UTC time the chain finished.
    pub timestamp: String,
}

impl CalibrationResult {
    pub fn setting(&self) -> Result<CompensationSetting> {
        CompensationSetting::new(self.f_comp_star, self.delta_phi_star)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fit records from every stage of a chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub pi_time: FitDiagnostics,
    pub phase: FitDiagnostics,
    pub stark: Option<FitDiagnostics>,
}

impl ChainDiagnostics {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// π time, then amplitude, then phase (optionally preceded by the Stark
/// scan).
pub fn run_calibration(
    ctx: &CrosstalkContext,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<(CalibrationResult, ChainDiagnostics)> {
    let stark = if cfg.calibrate_stark {
        Some(calibrate_stark_shift(ctx, cfg, seed)?)
    } else {
        None
    };
    let delta_ct = stark.as_ref().map_or(0.0, |s| s.delta_ct);
    let pi = measure_pi_time(ctx, cfg, seed)?;
    let f = calibrate_amplitude(ctx, pi.t_pi, cfg, seed)?;
    let phase = calibrate_phase(ctx, pi.t_pi, f, delta_ct, cfg, seed)?;
    let result = CalibrationResult {
        t_pi_ct: pi.t_pi,
        f_comp_star: f,
        delta_phi_star: phase.delta_phi,
        delta_ct_star: delta_ct,
        residual: phase.report.rms,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let diag = ChainDiagnostics {
        pi_time: pi.report.diagnostics,
        phase: phase.report.diagnostics,
        stark: stark.map(|s| s.report.diagnostics),
    };
    Ok((result, diag))
}
