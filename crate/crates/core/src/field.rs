//! Field algebra of crosstalk plus a cancellation tone.
//!
//! The spectator sees `Ω_eff = Ω_CT + Ω_comp` with `Ω_comp = f_comp·|Ω_CT|·e^{iΔφ}`
//! relative to the crosstalk phase, so `|Ω_eff| = |Ω_CT|·|1 + f_comp·e^{iΔφ}|`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_to_tau, ComplexAmplitude};
use crate::error::{ensure_finite, Error, Result};

/// Relative amplitude and phase of the cancellation tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSetting {
    pub f_comp: f64,
    #[serde(rename = "delta_phi_rad")]
    pub delta_phi: f64,
}

impl CompensationSetting {
    pub fn new(f_comp: f64, delta_phi: f64) -> Result<Self> {
        ensure_finite("f_comp", f_comp)?;
        ensure_finite("delta_phi", delta_phi)?;
        if f_comp < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "f_comp must be non-negative, got {f_comp}"
            )));
        }
        Ok(Self {
            f_comp,
            delta_phi: wrap_to_tau(delta_phi),
        })
    }

    /// Perfect cancellation `(1, π)`.
    pub fn ideal() -> Self {
        Self {
            f_comp: 1.0,
            delta_phi: PI,
        }
    }

    /// No cancellation tone.
    pub fn off() -> Self {
        Self {
            f_comp: 0.0,
            delta_phi: 0.0,
        }
    }

    /// Phase error from the optimum, `δφ = Δφ − π`, in `(−π, π]`.
    pub fn phase_error(&self) -> f64 {
        crate::dynamics::wrap_to_pi(self.delta_phi - PI)
    }

    /// Setting on the `f_comp = 1` line whose residual ratio
    /// `|1 + e^{iΔφ}|` equals `residual`.
    pub fn with_residual(residual: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&residual) {
            return Err(Error::OutOfRange {
                value: residual,
                min: 0.0,
                max: 2.0,
            });
        }
        Self::new(1.0, PI + 2.0 * (residual / 2.0).asin())
    }
}

impl Default for CompensationSetting {
    fn default() -> Self {
        Self::ideal()
    }
}

/// Physical parameters of one target/spectator pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrosstalkContext {
    /// Target Rabi frequency in rad/s.
    #[serde(rename = "omega0_rad_s")]
    pub omega0: f64,
    /// `|Ω_CT| / Ω_0`.
    pub f_ct: f64,
    /// Spectator qubit-minus-laser detuning in rad/s.
    #[serde(rename = "delta_ct_rad_s")]
    pub delta_ct: f64,
    /// Polarization overlap between crosstalk and cancellation light.
    pub pol_overlap: f64,
    /// Uncontrolled optical path phase of the cancellation light relative to
    /// the crosstalk field at the spectator. Unknown to calibration routines.
    #[serde(rename = "comp_path_phase_rad")]
    pub comp_path_phase: f64,
    /// AC Stark shift of the target resonance under the gate drive, rad/s.
    #[serde(rename = "stark_shift_rad_s")]
    pub stark_shift: f64,
}

/// Default simulation Rabi frequency, 2π·50 kHz.
pub const DEFAULT_OMEGA0: f64 = TAU * 50.0e3;

/// Crosstalk Rabi ratio fitted from uncompensated spectator flopping.
pub const MEASURED_F_CT: f64 = 0.096;

impl Default for CrosstalkContext {
    fn default() -> Self {
        Self {
            omega0: DEFAULT_OMEGA0,
            f_ct: MEASURED_F_CT,
            delta_ct: 0.0,
            pol_overlap: 1.0,
            comp_path_phase: 0.0,
            stark_shift: 0.0,
        }
    }
}

impl CrosstalkContext {
    pub fn new(omega0: f64, f_ct: f64, delta_ct: f64) -> Result<Self> {
        let ctx = Self {
            omega0,
            f_ct,
            delta_ct,
            ..Self::default()
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega0", self.omega0),
            ("f_ct", self.f_ct),
            ("delta_ct", self.delta_ct),
            ("pol_overlap", self.pol_overlap),
            ("comp_path_phase", self.comp_path_phase),
            ("stark_shift", self.stark_shift),
        ] {
            ensure_finite(name, v)?;
        }
        if self.omega0 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "omega0 must be positive, got {}",
                self.omega0
            )));
        }
        if self.f_ct < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "f_ct must be non-negative, got {}",
                self.f_ct
            )));
        }
        if !(0.0..=1.0).contains(&self.pol_overlap) {
            return Err(Error::OutOfRange {
                value: self.pol_overlap,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(())
    }

    /// Nominal target π time `π/Ω_0`.
    pub fn t_pi(&self) -> f64 {
        PI / self.omega0
    }

    /// Spectator π time under crosstalk alone, `π/Ω̃_CT`.
    pub fn t_pi_ct(&self) -> f64 {
        let rabi = self.f_ct * self.omega0;
        PI / (rabi * rabi + self.delta_ct * self.delta_ct).sqrt()
    }

    /// The setting that cancels crosstalk exactly once the path phase is
    /// accounted for.
    pub fn ideal_setting(&self) -> CompensationSetting {
        CompensationSetting {
            f_comp: if self.pol_overlap > 0.0 { 1.0 } else { 0.0 },
            delta_phi: wrap_to_tau(PI - self.comp_path_phase),
        }
    }

    /// Residual ratio `|Ω_eff|/|Ω_CT|` a commanded setting produces at the ion.
    pub fn residual_ratio(&self, setting: &CompensationSetting) -> f64 {
        effective_magnitude_with_overlap(
            setting.f_comp,
            setting.delta_phi + self.comp_path_phase,
            self.pol_overlap,
        )
    }

    /// `f_eff = f_CT · residual_ratio`.
    pub fn f_eff(&self, setting: &CompensationSetting) -> f64 {
        self.f_ct * self.residual_ratio(setting)
    }
}

/// Complex sum of the crosstalk and compensation Rabi frequencies.
pub fn effective_rabi(crosstalk: ComplexAmplitude, compensation: ComplexAmplitude) -> ComplexAmplitude {
    crosstalk + compensation
}

/// `|1 + f_comp·e^{iΔφ}|`.
pub fn effective_magnitude(f_comp: f64, delta_phi: f64) -> f64 {
    relative_error(f_comp, delta_phi).sqrt()
}

/// Whether a setting strictly reduces the crosstalk amplitude.
///
/// Evaluated as `f·(f + 2·cos Δφ) < 0`, which is the same condition as
/// `|1 + f·e^{iΔφ}| < 1` without the cancellation in `1 + …`.
pub fn is_suppressing(f_comp: f64, delta_phi: f64) -> bool {
    f_comp * (f_comp + 2.0 * delta_phi.cos()) < 0.0
}

/// Crosstalk error accumulated over `n` target π pulses at zero detuning,
/// `sin²(π·N·f_eff/2)`.
pub fn pi_pulse_error(n: u32, f_ct: f64, f_comp: f64, delta_phi: f64) -> f64 {
    let f_eff = f_ct * effective_magnitude(f_comp, delta_phi);
    n_pi_error(n, f_eff)
}

/// `sin²(π·N·f_eff/2)`.
pub fn n_pi_error(n: u32, f_eff: f64) -> f64 {
    (PI * f64::from(n) * f_eff / 2.0).sin().powi(2)
}

/// Compensated over uncompensated error per π pulse in the weak-crosstalk
/// limit, `1 + f² + 2f·cos Δφ`.
pub fn relative_error(f_comp: f64, delta_phi: f64) -> f64 {
    (1.0 + f_comp * f_comp + 2.0 * f_comp * delta_phi.cos()).max(0.0)
}

/// Largest `|δφ|` at `f_comp = 1` keeping the relative error at or below
/// `target`: `2·asin(√target/2)`.
pub fn phase_tolerance(target: f64) -> f64 {
    2.0 * (target.sqrt() / 2.0).min(1.0).asin()
}

/// Largest `|f_comp − 1|` at `Δφ = π` keeping the relative error at or below
/// `target`.
pub fn amplitude_tolerance(target: f64) -> f64 {
    target.sqrt()
}

/// Break-even compensation phase `arccos(−f/2)`; suppression holds for
/// `Δφ` strictly between this and `2π` minus it. `None` when `f ≥ 2`.
pub fn break_even_phase(f_comp: f64) -> Option<f64> {
    if f_comp <= 0.0 || f_comp >= 2.0 {
        None
    } else {
        Some((-f_comp / 2.0).acos())
    }
}

/// Residual ratio when the cancellation light only partially shares the
/// crosstalk polarization.
///
/// The projected part `p·Ω_comp` interferes with the crosstalk; the
/// orthogonal remainder `√(1−p²)·|Ω_comp|` is treated as a non-interfering
/// drive that adds in quadrature. `p = 1` recovers [`effective_magnitude`].
pub fn effective_magnitude_with_overlap(f_comp: f64, delta_phi: f64, overlap: f64) -> f64 {
    let coherent = Complex64::new(1.0, 0.0) + Complex64::from_polar(overlap * f_comp, delta_phi);
    let orthogonal = (1.0 - overlap * overlap).max(0.0) * f_comp * f_comp;
    (coherent.norm_sqr() + orthogonal).sqrt()
}

/// Drive seen by the spectator for a given crosstalk and cancellation field
/// under the polarization model of [`effective_magnitude_with_overlap`].
///
/// The magnitude carries both parts; the phase follows the interfering part
/// (or the cancellation field when that part vanishes).
pub fn spectator_drive(crosstalk: ComplexAmplitude, compensation: ComplexAmplitude, overlap: f64) -> ComplexAmplitude {
    if overlap >= 1.0 {
        return crosstalk + compensation;
    }
    let coherent = crosstalk.0 + compensation.0 * overlap;
    let orthogonal2 = (1.0 - overlap * overlap).max(0.0) * compensation.0.norm_sqr();
    let magnitude = (coherent.norm_sqr() + orthogonal2).sqrt();
    let phase = if coherent.norm() > 0.0 {
        coherent.arg()
    } else {
        compensation.0.arg()
    };
    ComplexAmplitude::from_polar(magnitude, phase)
}

/// Lowest residual ratio reachable for overlap `p`: `√(1 − p²)` at
/// `f_comp = p`, `Δφ = π`.
pub fn polarization_floor(overlap: f64) -> f64 {
    (1.0 - overlap * overlap).max(0.0).sqrt()
}
