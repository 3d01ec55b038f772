//! Simulation and calibration of coherent optical crosstalk cancellation for
//! individually addressed trapped-ion qubits.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: exact two-level propagators and rotation-error metrics.
//! - [`field`]: crosstalk/cancellation field algebra and tolerances.
//! - [`optics`]: focal-plane crosstalk from lens clipping and device leakage.
//! - [`pulses`]: square, SK1 and quadrilateral sequences on a target/spectator
//!   pair, with an optional cancellation tone.
//! - [`noise`]: slow drift, AOM duty-cycle heating, beatnote and Ramsey probes.
//! - [`calibration`]: π-time, amplitude, phase and Stark-shift calibration.
//! - [`experiment`]: scenario runner producing CSV scans.
//!
//! Scans are evaluated through [`Exec`], which uses rayon when the `parallel`
//! feature is on. Every random draw comes from a stream keyed by
//! `(seed, point index)`, so results do not depend on the worker count.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod field;
pub mod noise;
pub mod optics;
pub mod pulses;
pub mod sampling;

pub use dynamics::{ComplexAmplitude, PulseSegment, QubitState, Unitary2};
pub use error::{Error, Result};
pub use exec::Exec;
pub use field::{CompensationSetting, CrosstalkContext};
