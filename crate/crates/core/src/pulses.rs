//! Addressing pulse sequences on a target and a spectator channel.
//!
//! Channel [`TARGET`] carries the gate drive; channel [`SPECTATOR`] is idle
//! unless a cancellation tone is added with [`with_pcc`]. During simulation
//! the spectator ion sees `f_CT` times the target field (inheriting its axis
//! phase) plus its own channel's field, at detuning `Δ_CT`.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagator, qubit_frame_correction, ComplexAmplitude, PulseSegment, QubitState, Unitary2};
use crate::error::{ensure_finite, Error, Result};
use crate::field::{spectator_drive, CompensationSetting, CrosstalkContext};
use crate::sampling::{point_rng, sample_counts};

pub const TARGET: usize = 0;
pub const SPECTATOR: usize = 1;

/// Relative tolerance used when aligning segment boundaries.
const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPulse {
    pub channel: usize,
    pub segments: Vec<PulseSegment>,
}

impl ChannelPulse {
    pub fn new(channel: usize, segments: Vec<PulseSegment>) -> Self {
        Self { channel, segments }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_idle(&self) -> bool {
        self.segments.iter().all(|s| s.rabi.magnitude() == 0.0)
    }

    fn boundaries(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                t += s.duration;
                t
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub channels: Vec<ChannelPulse>,
    pub seed: u64,
    /// Shots per measurement; `None` reads out expectation values only.
    pub shots: Option<u32>,
}

impl PulseSequence {
    /// Target drive with an idle, time-aligned spectator channel.
    pub fn target_only(segments: Vec<PulseSegment>) -> Self {
        let total: f64 = segments.iter().map(|s| s.duration).sum();
        Self {
            channels: vec![
                ChannelPulse::new(TARGET, segments),
                ChannelPulse::new(SPECTATOR, vec![PulseSegment::idle(total)]),
            ],
            seed: 0,
            shots: None,
        }
    }

    pub fn with_shots(mut self, seed: u64, shots: u32) -> Self {
        self.seed = seed;
        self.shots = Some(shots);
        self
    }

    pub fn channel(&self, id: usize) -> Option<&ChannelPulse> {
        self.channels.iter().find(|c| c.channel == id)
    }

    fn channel_mut(&mut self, id: usize) -> Option<&mut ChannelPulse> {
        self.channels.iter_mut().find(|c| c.channel == id)
    }

    pub fn duration(&self) -> f64 {
        self.channels.iter().map(ChannelPulse::duration).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for ch in &self.channels {
            for s in &ch.segments {
                ensure_finite("duration", s.duration)?;
                ensure_finite("phase", s.phase)?;
                ensure_finite("detuning", s.detuning)?;
                if !s.rabi.is_finite() {
                    return Err(Error::InvalidArgument("segment rabi must be finite".into()));
                }
                if s.duration < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "segment duration must be non-negative, got {}",
                        s.duration
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pads every channel to the longest duration and splits segments so all
    /// channels share the same boundaries.
    pub fn normalize(&mut self) {
        let total = self.duration();
        let tol = BOUNDARY_EPS * total.max(f64::MIN_POSITIVE);
        for ch in &mut self.channels {
            let pad = total - ch.duration();
            if pad > tol {
                ch.segments.push(PulseSegment::idle(pad));
            }
        }
        let mut cuts: Vec<f64> = self.channels.iter().flat_map(ChannelPulse::boundaries).collect();
        cuts.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(cuts.len());
        for c in cuts {
            if c <= tol {
                continue;
            }
            match merged.last() {
                Some(&last) if c - last <= tol => {}
                _ => merged.push(c),
            }
        }
        if let Some(last) = merged.last_mut() {
            *last = total;
        }
        for ch in &mut self.channels {
            ch.segments = split_at(&ch.segments, &merged, tol);
        }
    }

    pub fn is_normalized(&self) -> bool {
        let Some(first) = self.channels.first() else {
            return true;
        };
        let reference = first.boundaries();
        let tol = BOUNDARY_EPS * self.duration().max(f64::MIN_POSITIVE);
        self.channels.iter().all(|c| {
            let b = c.boundaries();
            b.len() == reference.len() && b.iter().zip(&reference).all(|(x, y)| (x - y).abs() <= tol)
        })
    }

    /// Shifts every axis phase on every channel.
    pub fn phase_shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for ch in &mut out.channels {
            for s in &mut ch.segments {
                s.phase += shift;
            }
        }
        out
    }

    /// Appends `other` after `self`, channel by channel.
    pub fn then(&self, other: &PulseSequence) -> Result<Self> {
        let mut a = self.clone();
        let mut b = other.clone();
        a.normalize();
        b.normalize();
        for ch in &b.channels {
            match a.channel_mut(ch.channel) {
                Some(dst) => dst.segments.extend(ch.segments.iter().copied()),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "channel {} missing from the first sequence",
                        ch.channel
                    )))
                }
            }
        }
        if a.channels.len() != b.channels.len() {
            return Err(Error::InvalidArgument("channel sets differ".into()));
        }
        a.normalize();
        Ok(a)
    }

    /// `n` back-to-back copies, the k-th shifted in phase by `k·frame_advance`
    /// (a software Z frame update between repetitions).
    pub fn repeated(&self, n: usize, frame_advance: f64) -> Self {
        let mut base = self.clone();
        base.normalize();
        let mut out = base.clone();
        for ch in &mut out.channels {
            ch.segments.clear();
        }
        for k in 0..n {
            let shift = k as f64 * frame_advance;
            for (dst, src) in out.channels.iter_mut().zip(&base.channels) {
                dst.segments.extend(src.segments.iter().map(|s| PulseSegment {
                    phase: s.phase + shift,
                    ..*s
                }));
            }
        }
        out
    }
}

fn split_at(segments: &[PulseSegment], cuts: &[f64], tol: f64) -> Vec<PulseSegment> {
    let mut out = Vec::with_capacity(cuts.len());
    let mut start = 0.0;
    let mut seg_start = 0.0;
    let mut idx = 0;
    for &cut in cuts {
        let mid = 0.5 * (start + cut);
        while idx + 1 < segments.len() && seg_start + segments[idx].duration < mid - tol {
            seg_start += segments[idx].duration;
            idx += 1;
        }
        let template = segments.get(idx).copied().unwrap_or_else(|| PulseSegment::idle(0.0));
        out.push(PulseSegment {
            duration: cut - start,
            ..template
        });
        start = cut;
    }
    out
}

/// Resonant square π pulse, duration `π/Ω_0`.
pub fn square_pi(omega0: f64, phase: f64) -> PulseSequence {
    PulseSequence::target_only(vec![PulseSegment::new(omega0, phase, PI / omega0)])
}

/// Square rotation of arbitrary area.
pub fn square(omega0: f64, phase: f64, angle: f64) -> PulseSequence {
    PulseSequence::target_only(vec![PulseSegment::new(omega0, phase, angle / omega0)])
}

/// SK1 correction phase `arccos(−θ/4π)`.
pub fn sk1_phase(theta: f64) -> f64 {
    (-theta / (4.0 * PI)).acos()
}

/// SK1 composite rotation: `R_φ(θ)`, then `R_{φ+φ₁}(2π)`, then `R_{φ−φ₁}(2π)`.
pub fn sk1(theta: f64, phase: f64, omega0: f64) -> Result<PulseSequence> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(Error::OutOfRange {
            value: theta,
            min: 0.0,
            max: PI,
        });
    }
    let phi1 = sk1_phase(theta);
    let full = 2.0 * PI / omega0;
    Ok(PulseSequence::target_only(vec![
        PulseSegment::new(omega0, phase, theta / omega0),
        PulseSegment::new(omega0, phase + phi1, full),
        PulseSegment::new(omega0, phase - phi1, full),
    ]))
}

/// Quadrilateral sequence: π/2-area segments about +X, −Y, −X, +Y in
/// application order.
pub fn quadrilateral(omega0: f64) -> PulseSequence {
    let t = PI / 2.0 / omega0;
    PulseSequence::target_only(vec![
        PulseSegment::new(omega0, 0.0, t),
        PulseSegment::new(omega0, -PI / 2.0, t),
        PulseSegment::new(omega0, PI, t),
        PulseSegment::new(omega0, PI / 2.0, t),
    ])
}

/// Ramsey pair on the target: `R_φ(π/2)`, a free evolution of `wait`, then
/// `R_{φ+analysis}(π/2)`.
pub fn ramsey(omega0: f64, phase: f64, wait: f64, analysis_phase: f64) -> PulseSequence {
    let t = PI / 2.0 / omega0;
    PulseSequence::target_only(vec![
        PulseSegment::new(omega0, phase, t),
        PulseSegment::idle(wait),
        PulseSegment::new(omega0, phase + analysis_phase, t),
    ])
}

/// Excited population after `R_X(π/2)`, `u`, `R_X(−π/2)` from `|0⟩`.
///
/// Equals the rotation error of `u` on the `R_X(π/2)|0⟩` superposition, i.e.
/// the error seen by a spectator prepared on the equator.
pub fn ramsey_wrapped_error(u: &Unitary2) -> f64 {
    let wrapped = Unitary2::rotation(0.0, -PI / 2.0) * *u * Unitary2::rotation(0.0, PI / 2.0);
    wrapped.apply(&QubitState::ground()).excited_population()
}

/// Single-channel propagator of a segment list at amplitude scale `scale`
/// and detuning `detuning` (lab-frame, no frame correction).
pub fn segments_unitary(segments: &[PulseSegment], scale: f64, detuning: f64) -> Unitary2 {
    segments.iter().fold(Unitary2::identity(), |acc, s| {
        propagator(s.drive().scaled(scale).0, detuning + s.detuning, s.duration) * acc
    })
}

/// Z-frame angle `ζ` with `U_quad = Rz(ζ)·R_X(π/2)` at nominal amplitude,
/// extracted from the simulated unitary.
pub fn quadrilateral_frame_angle() -> f64 {
    let seq = quadrilateral(1.0);
    let u = segments_unitary(&seq.channels[TARGET].segments, 1.0, 0.0);
    u.frame_z_angle(&Unitary2::rotation(0.0, PI / 2.0))
}

/// Crosstalk mitigation method for a π gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain square π pulse.
    #[default]
    None,
    /// Square π pulse with a simultaneous cancellation tone.
    Pcc,
    Sk1,
    /// Two quadrilateral sequences with a frame update between them.
    Quad,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Pcc => "pcc",
            Method::Sk1 => "sk1",
            Method::Quad => "quad",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "pcc" => Ok(Method::Pcc),
            "sk1" => Ok(Method::Sk1),
            "quad" => Ok(Method::Quad),
            other => Err(Error::Configuration(format!("unknown method `{other}`"))),
        }
    }
}

/// One π-gate block for `method` and the frame advance to apply between
/// consecutive blocks.
pub fn pi_gate(method: Method, ctx: &CrosstalkContext, setting: &CompensationSetting) -> Result<(PulseSequence, f64)> {
    let omega0 = ctx.omega0;
    match method {
        Method::None => Ok((square_pi(omega0, 0.0), 0.0)),
        Method::Pcc => Ok((with_pcc(&square_pi(omega0, 0.0), ctx, setting)?, 0.0)),
        Method::Sk1 => Ok((sk1(PI, 0.0, omega0)?, 0.0)),
        Method::Quad => {
            let zeta = quadrilateral_frame_angle();
            let q = quadrilateral(omega0);
            Ok((q.then(&q.phase_shifted(zeta))?, 2.0 * zeta))
        }
    }
}

/// `n` consecutive π gates.
pub fn gate_train(
    method: Method,
    n: usize,
    ctx: &CrosstalkContext,
    setting: &CompensationSetting,
) -> Result<PulseSequence> {
    let (block, advance) = pi_gate(method, ctx, setting)?;
    Ok(block.repeated(n, advance))
}

/// Adds a cancellation tone on the spectator channel, time-aligned with every
/// target segment: amplitude `f_comp·f_CT·|Ω_target|`, phase offset `Δφ` from
/// the target segment's axis phase.
pub fn with_pcc(seq: &PulseSequence, ctx: &CrosstalkContext, setting: &CompensationSetting) -> Result<PulseSequence> {
    ctx.validate()?;
    let mut out = seq.clone();
    out.normalize();
    let target = out
        .channel(TARGET)
        .ok_or_else(|| Error::InvalidArgument("sequence has no target channel".into()))?
        .clone();
    let spectator = out
        .channel_mut(SPECTATOR)
        .ok_or_else(|| Error::InvalidArgument("sequence has no spectator channel".into()))?;
    if !spectator.is_idle() {
        return Err(Error::Conflict("spectator channel is already driven".into()));
    }
    spectator.segments = target
        .segments
        .iter()
        .map(|s| PulseSegment {
            rabi: ComplexAmplitude::real(setting.f_comp * ctx.f_ct * s.rabi.magnitude()),
            detuning: 0.0,
            duration: s.duration,
            phase: s.phase + s.rabi.phase() + setting.delta_phi,
        })
        .collect();
    Ok(out)
}

/// Source of per-shot differential phase noise on the cancellation path.
pub trait PhaseNoise: Sync {
    fn phase_offset(&self, shot: u32, rng: &mut ChaCha8Rng) -> f64;
}

/// Independent Gaussian phase jitter per shot.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPhaseJitter {
    pub sigma: f64,
}

impl PhaseNoise for GaussianPhaseJitter {
    fn phase_offset(&self, _shot: u32, rng: &mut ChaCha8Rng) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let z: f64 = StandardNormal.sample(rng);
        self.sigma * z
    }
}

/// Fixed phase offset, e.g. the drift value at the time of a scan point.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPhase(pub f64);

impl PhaseNoise for ConstantPhase {
    fn phase_offset(&self, _shot: u32, _rng: &mut ChaCha8Rng) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Multiplies the target channel's amplitude (amplitude miscalibration).
    pub target_scale: f64,
    /// Let the spectator channel's light leak back onto the target.
    pub back_action: bool,
    /// Index of this measurement point within a scan; selects the RNG stream.
    pub point_index: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            target_scale: 1.0,
            back_action: false,
            point_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    /// Final states without noise injection.
    pub states: Vec<QubitState>,
    /// Excited populations, averaged over noise realizations when noise is on.
    pub populations: Vec<f64>,
    /// Excited-state counts per channel when the sequence requests shots.
    pub counts: Option<Vec<u64>>,
}

/// Target and spectator propagators in each qubit's own frame.
pub fn propagators(
    seq: &PulseSequence,
    ctx: &CrosstalkContext,
    opts: &SimOptions,
    comp_phase: f64,
) -> Result<[Unitary2; 2]> {
    ctx.validate()?;
    seq.validate()?;
    let mut seq = seq.clone();
    if !seq.is_normalized() {
        seq.normalize();
    }
    let target = seq
        .channel(TARGET)
        .ok_or_else(|| Error::InvalidArgument("sequence has no target channel".into()))?;
    let spectator = seq
        .channel(SPECTATOR)
        .ok_or_else(|| Error::InvalidArgument("sequence has no spectator channel".into()))?;

    let mut u_t = Unitary2::identity();
    let mut u_s = Unitary2::identity();
    let mut phase_t = 0.0;
    let mut phase_s = 0.0;
    for (t, s) in target.segments.iter().zip(&spectator.segments) {
        let e_t = t.drive().scaled(opts.target_scale);
        let e_s = s.drive().rotated(ctx.comp_path_phase + comp_phase);
        let drive_s = spectator_drive(e_t.scaled(ctx.f_ct), e_s, ctx.pol_overlap);
        let drive_t = if opts.back_action {
            e_t + e_s.scaled(ctx.f_ct)
        } else {
            e_t
        };
        let det_t = t.detuning;
        let det_s = ctx.delta_ct + t.detuning;
        u_t = propagator(drive_t.0, det_t, t.duration) * u_t;
        u_s = propagator(drive_s.0, det_s, t.duration) * u_s;
        phase_t += det_t * t.duration;
        phase_s += det_s * t.duration;
    }
    let u_t = qubit_frame_correction(1.0, phase_t) * u_t;
    let u_s = qubit_frame_correction(1.0, phase_s) * u_s;
    Ok([u_t, u_s])
}

/// Runs a sequence on the target/spectator pair.
pub fn simulate(
    seq: &PulseSequence,
    ctx: &CrosstalkContext,
    initial: &[QubitState],
    opts: &SimOptions,
    noise: Option<&dyn PhaseNoise>,
) -> Result<SimOutcome> {
    if initial.len() != seq.channels.len() || initial.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "expected one initial state for each of the 2 channels, got {} states for {} channels",
            initial.len(),
            seq.channels.len()
        )));
    }
    let [u_t, u_s] = propagators(seq, ctx, opts, 0.0)?;
    let states = vec![u_t.apply(&initial[TARGET]), u_s.apply(&initial[SPECTATOR])];
    let exact: Vec<f64> = states.iter().map(QubitState::excited_population).collect();

    let Some(shots) = seq.shots else {
        if noise.is_some() {
            return Err(Error::InvalidArgument("noise injection needs a shot count".into()));
        }
        return Ok(SimOutcome {
            states,
            populations: exact,
            counts: None,
        });
    };
    let mut rng = point_rng(seq.seed, opts.point_index);
    match noise {
        None => {
            let counts = exact.iter().map(|&p| sample_counts(p, shots, &mut rng)).collect();
            Ok(SimOutcome {
                states,
                populations: exact,
                counts: Some(counts),
            })
        }
        Some(noise) => {
            use rand::Rng;
            let mut sums = [0.0; 2];
            let mut counts = [0u64; 2];
            for shot in 0..shots {
                let offset = noise.phase_offset(shot, &mut rng);
                let [ut, us] = propagators(seq, ctx, opts, offset)?;
                let pops = [
                    ut.apply(&initial[TARGET]).excited_population(),
                    us.apply(&initial[SPECTATOR]).excited_population(),
                ];
                for ch in 0..2 {
                    sums[ch] += pops[ch];
                    if rng.random::<f64>() < pops[ch] {
                        counts[ch] += 1;
                    }
                }
            }
            let n = f64::from(shots.max(1));
            Ok(SimOutcome {
                states,
                populations: sums.iter().map(|s| s / n).collect(),
                counts: Some(counts.to_vec()),
            })
        }
    }
}

/// Spectator excited population from `|0⟩` after `seq` (no shot noise).
pub fn spectator_population(seq: &PulseSequence, ctx: &CrosstalkContext, opts: &SimOptions) -> Result<f64> {
    let [_, u_s] = propagators(seq, ctx, opts, 0.0)?;
    Ok(u_s.apply(&QubitState::ground()).excited_population())
}

/// Target excited population from `|0⟩` after `seq` (no shot noise).
pub fn target_population(seq: &PulseSequence, ctx: &CrosstalkContext, opts: &SimOptions) -> Result<f64> {
    let [u_t, _] = propagators(seq, ctx, opts, 0.0)?;
    Ok(u_t.apply(&QubitState::ground()).excited_population())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rotation_error;

    fn ctx() -> CrosstalkContext {
        CrosstalkContext::default()
    }

    #[test]
    fn square_pi_flips_target() {
        let c = ctx();
        let seq = square_pi(c.omega0, 0.0);
        assert_eq!(seq.channels[TARGET].segments.len(), 1);
        assert!((seq.duration() - PI / c.omega0).abs() < 1e-18);
        let p = target_population(&seq, &c, &SimOptions::default()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_pi_spectator_error() {
        let c = ctx();
        let p = spectator_population(&square_pi(c.omega0, 0.0), &c, &SimOptions::default()).unwrap();
        assert!((p - (0.096 * PI / 2.0).sin().powi(2)).abs() < 1e-12);
        assert!((p - 2.26e-2).abs() < 1e-4);
    }

    #[test]
    fn two_square_pi_is_identity_up_to_phase() {
        let c = ctx();
        let seq = square_pi(c.omega0, 0.0).repeated(2, 0.0);
        let [u_t, _] = propagators(&seq, &c, &SimOptions::default(), 0.0).unwrap();
        assert!(u_t.distance_up_to_phase(&Unitary2::identity()) < 1e-12);
    }

    #[test]
    fn sk1_nominal_is_ideal_rotation() {
        let c = ctx();
        for (theta, phase) in [(PI, 0.0), (PI / 2.0, 0.3), (0.7, 1.1)] {
            let seq = sk1(theta, phase, c.omega0).unwrap();
            let u = segments_unitary(&seq.channels[TARGET].segments, 1.0, 0.0);
            let ideal = Unitary2::rotation(phase, theta);
            assert!(u.overlap(&ideal) >= 1.0 - 1e-9, "theta={theta}");
        }
        assert!(sk1(0.0, 0.0, 1.0).is_err());
        assert!(sk1(4.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn quadrilateral_limits() {
        let q = quadrilateral(1.0);
        let phases: Vec<f64> = q.channels[TARGET].segments.iter().map(|s| s.phase).collect();
        assert_eq!(phases, vec![0.0, -PI / 2.0, PI, PI / 2.0]);
        let u0 = segments_unitary(&q.channels[TARGET].segments, 0.0, 0.0);
        assert!(u0.distance_up_to_phase(&Unitary2::identity()) < 1e-9);
        let zeta = quadrilateral_frame_angle();
        assert!((zeta - PI / 2.0).abs() < 1e-12, "{zeta}");
        let u1 = segments_unitary(&q.channels[TARGET].segments, 1.0, 0.0);
        let ideal = Unitary2::rz(zeta) * Unitary2::rotation(0.0, PI / 2.0);
        assert!(u1.distance_up_to_phase(&ideal) < 1e-12);
    }

    #[test]
    fn quad_double_with_frame_update_inverts() {
        let c = ctx();
        let train = gate_train(Method::Quad, 1, &c, &CompensationSetting::off()).unwrap();
        let p = target_population(&train, &c, &SimOptions::default()).unwrap();
        assert!((p - 1.0).abs() < 1e-12, "{p}");
        // Without the frame update the pair only reaches half inversion.
        let q = quadrilateral(c.omega0);
        let naive = q.then(&q).unwrap();
        let p = target_population(&naive, &c, &SimOptions::default()).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "{p}");
    }

    #[test]
    fn normalize_aligns_boundaries() {
        let mut seq = PulseSequence {
            channels: vec![
                ChannelPulse::new(
                    TARGET,
                    vec![PulseSegment::new(1.0, 0.0, 1.0), PulseSegment::new(1.0, 1.0, 2.0)],
                ),
                ChannelPulse::new(SPECTATOR, vec![PulseSegment::new(0.5, 0.0, 1.5)]),
            ],
            seed: 0,
            shots: None,
        };
        assert!(!seq.is_normalized());
        seq.normalize();
        assert!(seq.is_normalized());
        let t: Vec<f64> = seq.channels[TARGET].segments.iter().map(|s| s.duration).collect();
        let s: Vec<f64> = seq.channels[SPECTATOR].segments.iter().map(|s| s.duration).collect();
        assert_eq!(t, vec![1.0, 0.5, 1.5]);
        assert_eq!(s, t);
        assert_eq!(seq.channels[SPECTATOR].segments[2].rabi.magnitude(), 0.0);
        assert_eq!(seq.channels[TARGET].segments[1].phase, 1.0);
    }

    #[test]
    fn pcc_exact_setting_cancels() {
        let c = ctx();
        for method in [Method::None, Method::Sk1, Method::Quad] {
            let (block, adv) = pi_gate(method, &c, &CompensationSetting::off()).unwrap();
            let seq = with_pcc(&block.repeated(3, adv), &c, &CompensationSetting::ideal()).unwrap();
            let p = spectator_population(&seq, &c, &SimOptions::default()).unwrap();
            assert!(p < 1e-24, "{method:?}: {p}");
        }
    }

    #[test]
    fn pcc_conflict() {
        let c = ctx();
        let seq = with_pcc(&square_pi(c.omega0, 0.0), &c, &CompensationSetting::ideal()).unwrap();
        assert!(matches!(
            with_pcc(&seq, &c, &CompensationSetting::ideal()),
            Err(Error::Conflict(_))
        ));
    }

    #[test]
    fn constructive_setting_doubles_rate() {
        let c = ctx();
        let t = PI / (2.0 * c.f_ct * c.omega0);
        let seq = with_pcc(
            &square(c.omega0, 0.0, c.omega0 * t),
            &c,
            &CompensationSetting::new(1.0, 0.0).unwrap(),
        )
        .unwrap();
        let p = spectator_population(&seq, &c, &SimOptions::default()).unwrap();
        // 2·f_CT·Ω_0·t = π
        assert!((p - 1.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn mismatched_initial_states() {
        let c = ctx();
        let seq = square_pi(c.omega0, 0.0);
        let r = simulate(&seq, &c, &[QubitState::ground()], &SimOptions::default(), None);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_amplitude_changes_nothing() {
        let c = ctx();
        let seq = PulseSequence::target_only(vec![PulseSegment::new(0.0, 0.3, 1e-4)]);
        let init = [QubitState::from_bloch(0.4, 1.0), QubitState::from_bloch(2.0, -0.5)];
        let out = simulate(&seq, &c, &init, &SimOptions::default(), None).unwrap();
        for (a, b) in out.states.iter().zip(&init) {
            assert!(rotation_error(b, &Unitary2::identity()) == 0.0);
            assert!((a.inner(b).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn detuned_idle_spectator_is_frame_corrected() {
        let mut c = ctx();
        c.delta_ct = 0.2 * c.omega0;
        c.f_ct = 0.0;
        let seq = square_pi(c.omega0, 0.0);
        let [_, u_s] = propagators(&seq, &c, &SimOptions::default(), 0.0).unwrap();
        assert!(u_s.distance_up_to_phase(&Unitary2::identity()) < 1e-12);
    }

    #[test]
    fn back_action_rate() {
        let c = ctx();
        // Compensation-only: target idle, spectator channel driven.
        let t = 1e-3;
        let f_comp = 1.0;
        let comp_rabi = f_comp * c.f_ct * c.omega0;
        let seq = PulseSequence {
            channels: vec![
                ChannelPulse::new(TARGET, vec![PulseSegment::idle(t)]),
                ChannelPulse::new(SPECTATOR, vec![PulseSegment::new(comp_rabi, 0.0, t)]),
            ],
            seed: 0,
            shots: None,
        };
        let opts = SimOptions {
            back_action: true,
            ..SimOptions::default()
        };
        let p = target_population(&seq, &c, &opts).unwrap();
        let expect = (c.f_ct * comp_rabi * t / 2.0).sin().powi(2);
        assert!((p - expect).abs() < 1e-12);
        let none = target_population(&seq, &c, &SimOptions::default()).unwrap();
        assert_eq!(none, 0.0);
    }

    #[test]
    fn shots_are_seeded() {
        let c = ctx();
        let seq = square_pi(c.omega0, 0.0).repeated(5, 0.0).with_shots(42, 1000);
        let init = [QubitState::ground(), QubitState::ground()];
        let a = simulate(&seq, &c, &init, &SimOptions::default(), None).unwrap();
        let b = simulate(&seq, &c, &init, &SimOptions::default(), None).unwrap();
        assert_eq!(a.counts, b.counts);
        let noise = GaussianPhaseJitter { sigma: 0.1 };
        let pcc = with_pcc(&seq, &c, &CompensationSetting::ideal())
            .unwrap()
            .with_shots(3, 200);
        let n1 = simulate(&pcc, &c, &init, &SimOptions::default(), Some(&noise)).unwrap();
        let n2 = simulate(&pcc, &c, &init, &SimOptions::default(), Some(&noise)).unwrap();
        assert_eq!(n1, n2);
        assert!(n1.populations[SPECTATOR] > 0.0);
    }

    #[test]
    fn ramsey_wrapper_matches_rotation_error() {
        let u = propagator(ComplexAmplitude::from_polar(0.3, 0.4).0, 0.2, 1.7);
        let psi0 = Unitary2::rotation(0.0, PI / 2.0).apply(&QubitState::ground());
        assert!((ramsey_wrapped_error(&u) - rotation_error(&psi0, &u)).abs() < 1e-14);
    }

    #[test]
    fn ramsey_fringe() {
        let c = ctx();
        for a in [0.0, PI / 2.0, PI] {
            let p = target_population(&ramsey(c.omega0, 0.0, 1e-5, a), &c, &SimOptions::default()).unwrap();
            assert!((p - 0.5 * (1.0 + a.cos())).abs() < 1e-12, "{a}: {p}");
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("sk1".parse::<Method>().unwrap(), Method::Sk1);
        assert!(matches!("bb1".parse::<Method>(), Err(Error::Configuration(_))));
    }
}
