//! Exact two-level evolution in the frame rotating at the laser frequency.
//!
//! The Hamiltonian for a drive with complex Rabi frequency `Ω` and detuning
//! `Δ = ω_qubit − ω_laser` is
//!
//! ```text
//! H = ½ (Re Ω · σx + Im Ω · σy + Δ · σz)
//! ```
//!
//! so an axis phase of 0 rotates about +X and π/2 about +Y. The closed form
//! propagator is `U = cos(Ω̃t/2)·I − i·sin(Ω̃t/2)·(n·σ)` with the generalized
//! Rabi frequency `Ω̃ = sqrt(|Ω|² + Δ²)`. Global phases are never normalized;
//! every observable used in the crate is insensitive to them.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Complex Rabi frequency (rad/s) or a dimensionless field ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComplexAmplitude(pub Complex64);

impl ComplexAmplitude {
    pub const ZERO: ComplexAmplitude = ComplexAmplitude(ZERO);

    pub fn new(re: f64, im: f64) -> Self {
        Self(Complex64::new(re, im))
    }

    pub fn real(re: f64) -> Self {
        Self(Complex64::new(re, 0.0))
    }

    pub fn from_polar(magnitude: f64, phase: f64) -> Self {
        Self(Complex64::from_polar(magnitude, phase))
    }

    pub fn re(self) -> f64 {
        self.0.re
    }

    pub fn im(self) -> f64 {
        self.0.im
    }

    pub fn magnitude(self) -> f64 {
        self.0.norm()
    }

    pub fn phase(self) -> f64 {
        self.0.arg()
    }

    pub fn is_finite(self) -> bool {
        self.0.re.is_finite() && self.0.im.is_finite()
    }

    /// Multiplies by `e^{iφ}`.
    pub fn rotated(self, phase: f64) -> Self {
        Self(self.0 * Complex64::from_polar(1.0, phase))
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self(self.0 * factor)
    }
}

impl Add for ComplexAmplitude {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for ComplexAmplitude {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Neg for ComplexAmplitude {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl From<Complex64> for ComplexAmplitude {
    fn from(c: Complex64) -> Self {
        Self(c)
    }
}

/// Normalized state `c0|0⟩ + c1|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    c0: Complex64,
    c1: Complex64,
}

impl QubitState {
    /// Builds a state from unnormalized amplitudes.
    pub fn new(c0: Complex64, c1: Complex64) -> Result<Self> {
        let norm = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "state amplitudes must be finite and nonzero, got norm {norm}"
            )));
        }
        Ok(Self {
            c0: c0 / norm,
            c1: c1 / norm,
        })
    }

    pub fn ground() -> Self {
        Self { c0: ONE, c1: ZERO }
    }

    pub fn excited() -> Self {
        Self { c0: ZERO, c1: ONE }
    }

    /// State with Bloch polar angle `theta` and azimuth `phi`.
    pub fn from_bloch(theta: f64, phi: f64) -> Self {
        Self {
            c0: Complex64::new((theta / 2.0).cos(), 0.0),
            c1: Complex64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    pub fn c0(&self) -> Complex64 {
        self.c0
    }

    pub fn c1(&self) -> Complex64 {
        self.c1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr()
    }

    /// Probability of measuring `|1⟩`.
    pub fn excited_population(&self) -> f64 {
        self.c1.norm_sqr().clamp(0.0, 1.0)
    }

    pub fn inner(&self, other: &QubitState) -> Complex64 {
        self.c0.conj() * other.c0 + self.c1.conj() * other.c1
    }

    /// Bloch vector `(x, y, z)`.
    pub fn bloch(&self) -> [f64; 3] {
        let rho01 = self.c0 * self.c1.conj();
        [2.0 * rho01.re, -2.0 * rho01.im, self.c0.norm_sqr() - self.c1.norm_sqr()]
    }

    fn renormalized(c0: Complex64, c1: Complex64) -> Self {
        let norm = (c0.norm_sqr() + c1.norm_sqr()).sqrt();
        Self {
            c0: c0 / norm,
            c1: c1 / norm,
        }
    }
}

/// 2×2 unitary propagator, row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Unitary2 {
    m: [[Complex64; 2]; 2],
}

impl fmt::Debug for Unitary2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.6}, {:.6}], [{:.6}, {:.6}]]",
            self.m[0][0], self.m[0][1], self.m[1][0], self.m[1][1]
        )
    }
}

impl Unitary2 {
    pub fn from_entries(m: [[Complex64; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self {
            m: [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    /// Rotation by `angle` about the equatorial axis at azimuth `axis_phase`.
    pub fn rotation(axis_phase: f64, angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        let e = Complex64::from_polar(1.0, axis_phase);
        Self {
            m: [[c.into(), -I * s * e.conj()], [-I * s * e, c.into()]],
        }
    }

    /// `exp(−i·angle·σz/2)`.
    pub fn rz(angle: f64) -> Self {
        Self {
            m: [
                [Complex64::from_polar(1.0, -angle / 2.0), ZERO],
                [ZERO, Complex64::from_polar(1.0, angle / 2.0)],
            ],
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.m[row][col]
    }

    pub fn entries(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn dagger(&self) -> Self {
        let m = &self.m;
        Self {
            m: [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]],
        }
    }

    pub fn det(&self) -> Complex64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    /// `max |(U†U − I)_ij|`.
    pub fn unitarity_defect(&self) -> f64 {
        let p = self.dagger() * *self;
        let id = Unitary2::identity();
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.m[r][c] - id.m[r][c]).norm());
            }
        }
        worst
    }

    pub fn apply(&self, psi: &QubitState) -> QubitState {
        apply(self, psi)
    }

    /// Phase-insensitive gate overlap `|tr(A†B)| / 2`.
    pub fn overlap(&self, other: &Unitary2) -> f64 {
        ((self.dagger() * *other).trace().norm() / 2.0).min(1.0)
    }

    /// Largest entry-wise distance after removing the relative global phase.
    pub fn distance_up_to_phase(&self, other: &Unitary2) -> f64 {
        let t = (other.dagger() * *self).trace();
        let phase = if t.norm() > 0.0 { t / t.norm() } else { ONE };
        let mut worst: f64 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((self.m[r][c] - phase * other.m[r][c]).norm());
            }
        }
        worst
    }

    /// Angle `ζ` such that `self ≈ Rz(ζ)·ideal`, read off `self·ideal†`.
    ///
    /// Used to track residual Z rotations as a software frame update.
    pub fn frame_z_angle(&self, ideal: &Unitary2) -> f64 {
        let m = *self * ideal.dagger();
        wrap_to_pi(m.m[1][1].arg() - m.m[0][0].arg())
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;
    fn mul(self, rhs: Unitary2) -> Unitary2 {
        let a = &self.m;
        let b = &rhs.m;
        Unitary2 {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }
}

/// One constant-amplitude piece of a drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    /// Rabi frequency in rad/s before the axis phase is applied.
    pub rabi: ComplexAmplitude,
    /// Qubit-minus-laser detuning in rad/s.
    pub detuning: f64,
    /// Duration in seconds.
    pub duration: f64,
    /// Axis phase in rad.
    pub phase: f64,
}

impl PulseSegment {
    pub fn new(rabi: f64, phase: f64, duration: f64) -> Self {
        Self {
            rabi: ComplexAmplitude::real(rabi),
            detuning: 0.0,
            duration,
            phase,
        }
    }

    pub fn idle(duration: f64) -> Self {
        Self::new(0.0, 0.0, duration)
    }

    /// Complex drive `rabi · e^{iφ}`.
    pub fn drive(&self) -> ComplexAmplitude {
        self.rabi.rotated(self.phase)
    }

    pub fn unitary(&self) -> Result<Unitary2> {
        rotation_unitary(self.drive(), self.detuning, self.duration)
    }
}

/// Closed-form propagator for a constant drive.
pub fn rotation_unitary(rabi: ComplexAmplitude, detuning: f64, duration: f64) -> Result<Unitary2> {
    ensure_finite("rabi.re", rabi.re())?;
    ensure_finite("rabi.im", rabi.im())?;
    ensure_finite("detuning", detuning)?;
    ensure_finite("duration", duration)?;
    if duration < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    Ok(propagator(rabi.0, detuning, duration))
}

pub(crate) fn propagator(rabi: Complex64, detuning: f64, duration: f64) -> Unitary2 {
    let gen = (rabi.norm_sqr() + detuning * detuning).sqrt();
    if gen == 0.0 || duration == 0.0 {
        return Unitary2::identity();
    }
    let half = gen * duration / 2.0;
    let (s, c) = half.sin_cos();
    let sn = s / gen;
    let diag = Complex64::new(c, -sn * detuning);
    Unitary2 {
        m: [[diag, -I * sn * rabi.conj()], [-I * sn * rabi, diag.conj()]],
    }
}

pub fn apply(u: &Unitary2, psi: &QubitState) -> QubitState {
    let c0 = u.m[0][0] * psi.c0 + u.m[0][1] * psi.c1;
    let c1 = u.m[1][0] * psi.c0 + u.m[1][1] * psi.c1;
    QubitState::renormalized(c0, c1)
}

/// `1 − |⟨ψ0|U|ψ0⟩|²`.
pub fn rotation_error(psi0: &QubitState, u: &Unitary2) -> f64 {
    let rotated = apply(u, psi0);
    (1.0 - psi0.inner(&rotated).norm_sqr()).clamp(0.0, 1.0)
}

/// Rotation error maximized over initial states.
///
/// The maximum is reached for Bloch vectors orthogonal to the tilted rotation
/// axis and equals `sin²(Ω̃t/2)`; with no detuning this is `sin²(|Ω|t/2)`.
pub fn max_rotation_error(rabi: ComplexAmplitude, detuning: f64, duration: f64) -> f64 {
    let gen = (rabi.magnitude().powi(2) + detuning * detuning).sqrt();
    (gen * duration / 2.0).sin().powi(2)
}

/// Excited population reached from `|0⟩`: `(|Ω|²/Ω̃²)·sin²(Ω̃t/2)`.
pub fn population_transfer(rabi: ComplexAmplitude, detuning: f64, duration: f64) -> f64 {
    let mag2 = rabi.magnitude().powi(2);
    let gen2 = mag2 + detuning * detuning;
    if gen2 == 0.0 {
        return 0.0;
    }
    mag2 / gen2 * (gen2.sqrt() * duration / 2.0).sin().powi(2)
}

/// Undoes the free precession a detuned qubit accumulates in the laser frame
/// over `duration`, mapping back to the qubit's own frame.
pub fn qubit_frame_correction(detuning: f64, duration: f64) -> Unitary2 {
    Unitary2::rz(-detuning * duration)
}

pub fn wrap_to_pi(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Wraps into `[0, 2π)`.
pub fn wrap_to_tau(angle: f64) -> f64 {
    let a = angle.rem_euclid(std::f64::consts::TAU);
    if a >= std::f64::consts::TAU {
        0.0
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn resonant_pi_pulse_is_x_flip() {
        let u = rotation_unitary(ComplexAmplitude::real(2.0), 0.0, PI / 2.0).unwrap();
        assert!((u.entry(0, 1).norm() - 1.0).abs() < 1e-12);
        assert!(u.entry(0, 0).norm() < 1e-12);
        let psi = apply(&u, &QubitState::ground());
        assert!((psi.excited_population() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drive_is_identity() {
        for t in [0.0, 1.0, 123.4] {
            let u = rotation_unitary(ComplexAmplitude::ZERO, 0.0, t).unwrap();
            assert_eq!(u, Unitary2::identity());
        }
    }

    #[test]
    fn non_finite_or_negative_input_rejected() {
        assert!(rotation_unitary(ComplexAmplitude::new(f64::NAN, 0.0), 0.0, 1.0).is_err());
        assert!(rotation_unitary(ComplexAmplitude::real(1.0), f64::INFINITY, 1.0).is_err());
        assert!(rotation_unitary(ComplexAmplitude::real(1.0), 0.0, -1.0).is_err());
    }

    #[test]
    fn axis_phase_convention() {
        // φ = π/2 rotates |0⟩ toward +X on the Bloch sphere (rotation about +Y).
        let u = Unitary2::rotation(PI / 2.0, PI / 2.0);
        let b = apply(&u, &QubitState::ground()).bloch();
        assert!((b[0] - 1.0).abs() < 1e-12, "{b:?}");
        // φ = 0 rotates |0⟩ toward −Y (rotation about +X).
        let u = Unitary2::rotation(0.0, PI / 2.0);
        let b = apply(&u, &QubitState::ground()).bloch();
        assert!((b[1] + 1.0).abs() < 1e-12, "{b:?}");
    }

    #[test]
    fn segment_matches_rotation_helper() {
        let seg = PulseSegment::new(3.0, 0.7, 0.4);
        let a = seg.unitary().unwrap();
        let b = Unitary2::rotation(0.7, 1.2);
        assert!(a.distance_up_to_phase(&b) < 1e-12);
    }

    #[test]
    fn rotation_error_bounds() {
        let psi = QubitState::ground();
        assert_eq!(rotation_error(&psi, &Unitary2::identity()), 0.0);
        let x = Unitary2::rotation(0.0, PI);
        assert!((rotation_error(&psi, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_error_on_resonance() {
        assert!((max_rotation_error(ComplexAmplitude::real(1.0), 0.0, PI) - 1.0).abs() < 1e-15);
        let e = max_rotation_error(ComplexAmplitude::real(1.0), 0.0, PI * 0.096);
        assert!((e - 2.2568e-2).abs() < 1e-5, "{e}");
    }

    #[test]
    fn frame_angle_recovers_rz() {
        let ideal = Unitary2::rotation(0.0, PI / 2.0);
        let u = Unitary2::rz(0.3) * ideal;
        assert!((u.frame_z_angle(&ideal) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn wrapping() {
        assert!((wrap_to_pi(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_to_pi(PI) - PI).abs() < 1e-12);
        assert!((wrap_to_tau(-0.5) - (2.0 * PI - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn qubit_state_rejects_zero() {
        assert!(QubitState::new(ZERO, ZERO).is_err());
        let s = QubitState::new(Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
    }
}
