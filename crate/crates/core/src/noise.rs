//! Differential phase noise between the target and cancellation beam paths,
//! and the hardware models behind it.
//!
//! Two processes are modelled. Slow ambient drift is a linear ramp plus a
//! Wiener process. AOM duty-cycle heating is a first-order thermal filter of
//! absorbed RF power whose channel imbalance integrates into a phase.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::wrap_to_pi;
use crate::error::{ensure_finite, Error, Result};
use crate::sampling::{point_rng, sample_fraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftPreset {
    /// Beam paths shielded from air currents.
    Enclosed,
    Exposed,
}

/// Slow drift of the differential optical phase.
///
/// When deserialized, fields left out are taken from `preset` (enclosed if
/// no preset is named).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "DriftFields")]
pub struct DriftProcess {
    #[serde(rename = "rate_rad_per_min")]
    pub rate: f64,
    /// Standard deviation of the phase over one reference window.
    #[serde(rename = "sigma_rad")]
    pub sigma: f64,
    #[serde(rename = "window_min")]
    pub window: f64,
    #[serde(default)]
    pub preset: Option<DriftPreset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DriftFields {
    rate_rad_per_min: Option<f64>,
    sigma_rad: Option<f64>,
    window_min: Option<f64>,
    preset: Option<DriftPreset>,
}

impl From<DriftFields> for DriftProcess {
    fn from(f: DriftFields) -> Self {
        let base = DriftProcess::from_preset(f.preset.unwrap_or(DriftPreset::Enclosed));
        Self {
            rate: f.rate_rad_per_min.unwrap_or(base.rate),
            sigma: f.sigma_rad.unwrap_or(base.sigma),
            window: f.window_min.unwrap_or(base.window),
            preset: f.preset,
        }
    }
}

impl DriftProcess {
    pub const REFERENCE_WINDOW_MIN: f64 = 8.0;

    pub fn enclosed() -> Self {
        Self {
            rate: 3.5e-3,
            sigma: 0.05,
            window: Self::REFERENCE_WINDOW_MIN,
            preset: Some(DriftPreset::Enclosed),
        }
    }

    /// The ramp rate for this preset is not measured; it is set ten times the
    /// enclosed rate.
    pub fn exposed() -> Self {
        Self {
            rate: 3.5e-2,
            sigma: 0.49,
            window: Self::REFERENCE_WINDOW_MIN,
            preset: Some(DriftPreset::Exposed),
        }
    }

    pub fn from_preset(preset: DriftPreset) -> Self {
        match preset {
            DriftPreset::Enclosed => Self::enclosed(),
            DriftPreset::Exposed => Self::exposed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("rate_rad_per_min", self.rate)?;
        ensure_finite("sigma_rad", self.sigma)?;
        ensure_finite("window_min", self.window)?;
        if self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if self.window <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "window must be positive, got {}",
                self.window
            )));
        }
        Ok(())
    }

    /// Wiener diffusion constant `D` in rad²/min.
    ///
    /// Chosen so the expected sample variance of a trace over one window,
    /// `D·T/6 + rate²·T²/12`, equals `σ²`. Zero when the ramp alone already
    /// exceeds `σ`.
    pub fn diffusion(&self) -> f64 {
        let t = self.window;
        let ramp = self.rate * self.rate * t * t / 12.0;
        (6.0 * (self.sigma * self.sigma - ramp) / t).max(0.0)
    }
}

/// Phase trace sampled at `0, dt, 2dt, …` up to `duration` (minutes).
pub fn sample_slow_drift(p: &DriftProcess, duration: f64, dt: f64, seed: u64) -> Result<Vec<f64>> {
    p.validate()?;
    ensure_finite("duration", duration)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if duration < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let steps = (duration / dt + 1e-9).floor() as usize;
    let step_sigma = (p.diffusion() * dt).sqrt();
    let mut rng = point_rng(seed, 0);
    let mut walk = 0.0;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(0.0);
    for k in 1..=steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        walk += step_sigma * z;
        trace.push(p.rate * k as f64 * dt + walk);
    }
    Ok(trace)
}

/// Population standard deviation of a trace.
pub fn trace_sigma(trace: &[f64]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    (trace.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Fiber AOM response and thermal constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AomModel {
    #[serde(rename = "center_mhz")]
    pub center: f64,
    /// Gaussian σ of the diffraction-efficiency curve.
    #[serde(rename = "efficiency_sigma_mhz")]
    pub efficiency_sigma: f64,
    #[serde(rename = "absorption_center_mhz")]
    pub absorption_center: f64,
    /// Half width at half maximum of the Lorentzian RF absorption.
    #[serde(rename = "absorption_hwhm_mhz")]
    pub absorption_hwhm: f64,
    /// Phase rate per watt of filtered absorbed-power imbalance.
    #[serde(rename = "k_phi_rad_per_w_s")]
    pub k_phi: f64,
    #[serde(rename = "tau_s")]
    pub tau: f64,
    #[serde(rename = "max_rf_power_w")]
    pub max_rf_power: f64,
    /// Fractional shortfall of the absorbed mitigation-tone power relative
    /// to the matched target load.
    pub absorption_match_error: f64,
}

impl Default for AomModel {
    fn default() -> Self {
        Self {
            center: 150.0,
            // efficiency(100 MHz) = 1e-4
            efficiency_sigma: 50.0 / (2.0 * 1e4_f64.ln()).sqrt(),
            absorption_center: 150.0,
            absorption_hwhm: 50.0,
            k_phi: 0.7,
            tau: 10.0,
            max_rf_power: 1.0,
            absorption_match_error: 0.095,
        }
    }
}

impl AomModel {
    pub const MITIGATION_MHZ: f64 = 100.0;

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center_mhz", self.center),
            ("efficiency_sigma_mhz", self.efficiency_sigma),
            ("absorption_center_mhz", self.absorption_center),
            ("absorption_hwhm_mhz", self.absorption_hwhm),
            ("k_phi_rad_per_w_s", self.k_phi),
            ("tau_s", self.tau),
            ("max_rf_power_w", self.max_rf_power),
            ("absorption_match_error", self.absorption_match_error),
        ] {
            ensure_finite(name, v)?;
        }
        if self.tau <= 0.0 || self.efficiency_sigma <= 0.0 || self.absorption_hwhm <= 0.0 || self.max_rf_power <= 0.0 {
            return Err(Error::InvalidArgument(
                "tau, curve widths and max RF power must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.absorption_match_error) {
            return Err(Error::OutOfRange {
                value: self.absorption_match_error,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(())
    }

    /// Power the target AOM must be driven at (150 MHz) so that it absorbs
    /// as much as the mitigation tone at full power and 100 MHz.
    pub fn matched_target_power(&self) -> f64 {
        self.max_rf_power * rf_absorption(self, Self::MITIGATION_MHZ) / rf_absorption(self, self.center)
    }

    /// Full-power mitigation tone as an RF drive.
    pub fn mitigation_tone(&self) -> RfDrive {
        RfDrive {
            power: self.max_rf_power * (1.0 - self.absorption_match_error),
            freq_mhz: Self::MITIGATION_MHZ,
        }
    }
}

/// Normalized optical diffraction efficiency, 1 at the center frequency.
pub fn diffraction_efficiency(m: &AomModel, f_rf_mhz: f64) -> f64 {
    let x = (f_rf_mhz - m.center) / m.efficiency_sigma;
    (-0.5 * x * x).exp()
}

/// Normalized RF absorption, 1 at its center frequency.
pub fn rf_absorption(m: &AomModel, f_rf_mhz: f64) -> f64 {
    let x = (f_rf_mhz - m.absorption_center) / m.absorption_hwhm;
    1.0 / (1.0 + x * x)
}

/// RF drive applied to one AOM channel. Zero power means off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfDrive {
    #[serde(rename = "power_w")]
    pub power: f64,
    pub freq_mhz: f64,
}

impl RfDrive {
    pub const OFF: RfDrive = RfDrive {
        power: 0.0,
        freq_mhz: 150.0,
    };

    pub fn absorbed(&self, m: &AomModel) -> f64 {
        if self.power == 0.0 {
            0.0
        } else {
            self.power * rf_absorption(m, self.freq_mhz)
        }
    }
}

/// Thermal state of the target (index 0) and spectator (index 1) AOMs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DutyCycleState {
    /// Low-pass filtered absorbed power per channel, W.
    pub filtered_power: [f64; 2],
    /// Accumulated target-minus-spectator phase, rad.
    pub phase: f64,
    /// Simulation clock, s.
    pub clock: f64,
}

/// Advances the thermal state by `dt` with constant drives.
///
/// The filter relaxation and the phase integral are evaluated in closed form,
/// so the result does not depend on how a constant-drive interval is split.
pub fn step_duty_cycle(s: &DutyCycleState, m: &AomModel, rf: [RfDrive; 2], dt: f64) -> Result<DutyCycleState> {
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let decay = (-dt / m.tau).exp();
    let mut next = *s;
    let mut integral = [0.0; 2];
    for ch in 0..2 {
        let target = rf[ch].absorbed(m);
        let start = s.filtered_power[ch];
        next.filtered_power[ch] = (target + (start - target) * decay).max(0.0);
        integral[ch] = target * dt + (start - target) * m.tau * (1.0 - decay);
    }
    next.phase = s.phase + m.k_phi * (integral[0] - integral[1]);
    next.clock = s.clock + dt;
    Ok(next)
}

/// One repetition of an interleaved target/spectator pulse pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DutyCycle {
    /// Spectator on-time per cycle, s.
    #[serde(rename = "spectator_on_s")]
    pub spectator_on: f64,
    /// Dead time at the end of every cycle, s.
    #[serde(rename = "idle_s")]
    pub idle: f64,
}

impl Default for DutyCycle {
    fn default() -> Self {
        Self {
            spectator_on: 100e-6,
            idle: 1e-3,
        }
    }
}

impl DutyCycle {
    /// Drive intervals of one cycle at duty ratio `t_spec/t_target`.
    ///
    /// Both channels start together at the matched target power; the target
    /// stays on for `t_spec/ratio`. With mitigation the spectator AOM gets the
    /// far-detuned tone whenever the target is on alone.
    pub fn intervals(&self, m: &AomModel, ratio: f64, mitigated: bool) -> Result<Vec<([RfDrive; 2], f64)>> {
        ensure_finite("duty ratio", ratio)?;
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::OutOfRange {
                value: ratio,
                min: 0.0,
                max: 1.0,
            });
        }
        let on = RfDrive {
            power: m.matched_target_power(),
            freq_mhz: m.center,
        };
        let t_target = self.spectator_on / ratio;
        let mut out = vec![([on, on], self.spectator_on)];
        let alone = t_target - self.spectator_on;
        if alone > 0.0 {
            let spectator = if mitigated { m.mitigation_tone() } else { RfDrive::OFF };
            out.push(([on, spectator], alone));
        }
        if self.idle > 0.0 {
            out.push(([RfDrive::OFF, RfDrive::OFF], self.idle));
        }
        Ok(out)
    }

    /// Steady-state phase drift rate in rad/s from the cycle-averaged
    /// absorbed-power imbalance.
    pub fn steady_drift_rate(&self, m: &AomModel, ratio: f64, mitigated: bool) -> Result<f64> {
        let iv = self.intervals(m, ratio, mitigated)?;
        let period: f64 = iv.iter().map(|(_, t)| t).sum();
        let imbalance: f64 = iv
            .iter()
            .map(|(rf, t)| (rf[0].absorbed(m) - rf[1].absorbed(m)) * t)
            .sum::<f64>()
            / period;
        Ok(m.k_phi * imbalance)
    }

    /// Steps the thermal model through whole cycles for `settle` seconds,
    /// then measures the mean drift rate over one further time constant.
    pub fn simulated_drift_rate(&self, m: &AomModel, ratio: f64, mitigated: bool, settle: f64) -> Result<f64> {
        m.validate()?;
        let iv = self.intervals(m, ratio, mitigated)?;
        let period: f64 = iv.iter().map(|(_, t)| t).sum();
        let run = |state: DutyCycleState, cycles: usize| -> Result<DutyCycleState> {
            let mut s = state;
            for _ in 0..cycles {
                for (rf, dt) in &iv {
                    s = step_duty_cycle(&s, m, *rf, *dt)?;
                }
            }
            Ok(s)
        };
        let settled = run(DutyCycleState::default(), (settle / period).ceil() as usize)?;
        let window = ((m.tau / period).ceil() as usize).max(1);
        let end = run(settled, window)?;
        Ok((end.phase - settled.phase) / (end.clock - settled.clock))
    }
}

/// Two-tone beatnote phase detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeatnoteSetup {
    #[serde(rename = "f1_mhz")]
    pub f1: f64,
    #[serde(rename = "f2_mhz")]
    pub f2: f64,
    #[serde(rename = "probe_s")]
    pub probe: f64,
}

impl Default for BeatnoteSetup {
    fn default() -> Self {
        Self {
            f1: 150.0,
            f2: 152.0,
            probe: 100e-6,
        }
    }
}

impl BeatnoteSetup {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("f1_mhz", self.f1)?;
        ensure_finite("f2_mhz", self.f2)?;
        ensure_finite("probe_s", self.probe)?;
        if self.f2 - self.f1 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "beat frequency must be positive, got {} MHz",
                self.f2 - self.f1
            )));
        }
        if self.probe <= 0.0 {
            return Err(Error::InvalidArgument("probe duration must be positive".into()));
        }
        Ok(())
    }

    pub fn beat_mhz(&self) -> f64 {
        self.f2 - self.f1
    }

    /// Beat periods within one probe window.
    pub fn cycles_per_probe(&self) -> f64 {
        self.beat_mhz() * 1e6 * self.probe
    }
}

/// Phase-detector reading: true phase plus Gaussian noise, wrapped to (−π, π].
pub fn beatnote_phase_measurement(b: &BeatnoteSetup, phase: f64, sigma: f64, seed: u64) -> Result<f64> {
    b.validate()?;
    ensure_finite("phase", phase)?;
    ensure_finite("sigma", sigma)?;
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = point_rng(seed, 0);
    Ok(wrap_to_pi(phase + noise.sample(&mut rng)))
}

/// Noiseless Ramsey fringe `½(1 − cos Δφ)`.
pub fn ramsey_probability(delta_phi: f64) -> f64 {
    0.5 * (1.0 - delta_phi.cos())
}

/// Shot-sampled Ramsey excited fraction.
pub fn ramsey_phase_probe(delta_phi: f64, shots: u32, seed: u64) -> Result<f64> {
    ensure_finite("delta_phi", delta_phi)?;
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let mut rng = point_rng(seed, 0);
    Ok(sample_fraction(ramsey_probability(delta_phi), shots, &mut rng))
}

/// Phase from two Ramsey fractions taken with analysis phases 0 and π/2.
pub fn ramsey_phase_estimate(p0: f64, p90: f64) -> f64 {
    let c = 1.0 - 2.0 * p0;
    let s = 1.0 - 2.0 * p90;
    wrap_to_pi(s.atan2(c))
}

/// Noise presets file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisePresets {
    pub drift: DriftProcess,
    pub aom: AomModel,
    pub beatnote: BeatnoteSetup,
    pub duty_cycle: DutyCycle,
}

impl Default for NoisePresets {
    fn default() -> Self {
        Self {
            drift: DriftProcess::enclosed(),
            aom: AomModel::default(),
            beatnote: BeatnoteSetup::default(),
            duty_cycle: DutyCycle::default(),
        }
    }
}

impl NoisePresets {
    pub fn validate(&self) -> Result<()> {
        self.drift.validate()?;
        self.aom.validate()?;
        self.beatnote.validate()
    }
}
