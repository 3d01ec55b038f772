//! Focal-plane crosstalk from a multi-core addressing fiber.
//!
//! Two contributions are modelled along the line of cores:
//!
//! * diffraction: the Gaussian mode of one core is relayed through optics of
//!   finite NA. The pupil (angular spectrum) field `A(s) = exp(−s²/θ²)` with
//!   `θ = λ/(π·w0)` is hard-clipped at `|s| = NA` and transformed back with the
//!   scalar Fourier kernel `E(x) = ∫ A(s)·e^{−iksx} ds`;
//! * device leakage: light coupled into neighbouring cores inside the fiber,
//!   given as a relative field map on a 1-D grid.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::exec::Exec;

/// Relative change between successive quadrature refinements that counts as
/// converged.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;
/// Largest number of Simpson intervals tried before giving up.
pub const MAX_INTERVALS: usize = 1 << 17;
/// Pupil window in units of the pupil Gaussian waist when the aperture is wider.
pub const PUPIL_WINDOW_WAISTS: f64 = 6.0;

pub const DEFAULT_WAVELENGTH_NM: f64 = 729.0;
pub const DEFAULT_NA: f64 = 0.35;
pub const DEFAULT_W0_UM: f64 = 1.6;
pub const DEFAULT_PITCH_UM: f64 = 5.0;
pub const DEFAULT_CORES: usize = 11;
/// Nearest-neighbour field leakage giving a 1e-2 intensity ratio at one pitch.
pub const DEFAULT_LEAKAGE: f64 = 0.1;

/// Focusing optics for one core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusParams {
    pub w0_um: f64,
    pub wavelength_nm: f64,
    pub na: f64,
}

impl Default for FocusParams {
    fn default() -> Self {
        Self {
            w0_um: DEFAULT_W0_UM,
            wavelength_nm: DEFAULT_WAVELENGTH_NM,
            na: DEFAULT_NA,
        }
    }
}

impl FocusParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w0_um", self.w0_um),
            ("wavelength_nm", self.wavelength_nm),
            ("na", self.na),
        ] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavelength_um(&self) -> f64 {
        self.wavelength_nm * 1e-3
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_um()
    }

    /// 1/e² intensity half-width of the pupil field in direction-sine units.
    pub fn pupil_waist(&self) -> f64 {
        self.wavelength_um() / (PI * self.w0_um)
    }

    /// Integration half-width: the aperture, or six pupil waists if smaller.
    pub fn pupil_window(&self) -> f64 {
        self.na.min(PUPIL_WINDOW_WAISTS * self.pupil_waist())
    }

    /// Pupil field amplitude.
    pub fn pupil_field(&self, s: f64) -> f64 {
        let t = s / self.pupil_waist();
        (-t * t).exp()
    }
}

/// Unnormalized focal field on a grid plus quadrature bookkeeping.
#[derive(Debug, Clone)]
pub struct FocalField {
    pub positions_um: Vec<f64>,
    /// Real because the clipped pupil is real and even.
    pub field: Vec<f64>,
    /// On-axis field `E(0)`.
    pub peak_field: f64,
    /// `∫|A(s)|² ds` over the transmitted pupil.
    pub pupil_power: f64,
    pub window: f64,
    pub intervals: usize,
    /// Max relative change of the field at each refinement step.
    pub refinement: Vec<f64>,
}

impl FocalField {
    /// Intensity normalized to the on-axis peak.
    pub fn normalized_intensity(&self) -> Vec<f64> {
        let peak = self.peak_field * self.peak_field;
        self.field.iter().map(|e| e * e / peak).collect()
    }

    /// `λ·∫|A|² ds`, the focal-plane energy the pupil carries.
    pub fn expected_focal_energy(&self, params: &FocusParams) -> f64 {
        params.wavelength_um() * self.pupil_power
    }
}

fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, intervals: usize, f: F) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

fn field_at(params: &FocusParams, window: f64, intervals: usize, x: f64) -> f64 {
    let k = params.wavenumber();
    // even integrand: E(x) = 2∫₀^a A(s)·cos(ksx) ds
    2.0 * simpson(0.0, window, intervals, |s| params.pupil_field(s) * (k * s * x).cos())
}

fn initial_intervals(params: &FocusParams, window: f64, x_max: f64) -> usize {
    let cycles = params.wavenumber() * window * x_max / (2.0 * PI);
    let n = 64 + (16.0 * cycles).ceil() as usize;
    (n + n % 2).min(MAX_INTERVALS)
}

/// Focal field of a clipped Gaussian mode, refined until the field changes by
/// at most [`QUADRATURE_TOLERANCE`] relative to the peak.
pub fn focal_field(params: &FocusParams, grid_um: &[f64], exec: Exec) -> Result<FocalField> {
    params.validate()?;
    if grid_um.is_empty() {
        return Err(Error::InvalidArgument("grid must not be empty".into()));
    }
    for &x in grid_um {
        ensure_finite("grid", x)?;
    }
    let window = params.pupil_window();
    let x_max = grid_um.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut intervals = initial_intervals(params, window, x_max);

    let eval = |n: usize| -> (Vec<f64>, f64) {
        let field = exec.map_slice(grid_um, |&x| field_at(params, window, n, x));
        (field, field_at(params, window, n, 0.0))
    };

    let (mut field, mut peak) = eval(intervals);
    let mut refinement = Vec::new();
    loop {
        if intervals * 2 > MAX_INTERVALS {
            let last = refinement.last().copied().unwrap_or(f64::INFINITY);
            return Err(Error::NumericalFailure(format!(
                "focal-field quadrature did not converge: relative change {last:.3e} at {intervals} intervals"
            )));
        }
        let finer = intervals * 2;
        let (next, next_peak) = eval(finer);
        let change = field
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold((peak - next_peak).abs(), f64::max)
            / next_peak.abs();
        refinement.push(change);
        field = next;
        peak = next_peak;
        intervals = finer;
        if change <= QUADRATURE_TOLERANCE {
            break;
        }
    }

    let pupil_power = 2.0 * simpson(0.0, window, intervals, |s| params.pupil_field(s).powi(2));
    Ok(FocalField {
        positions_um: grid_um.to_vec(),
        field,
        peak_field: peak,
        pupil_power,
        window,
        intervals,
        refinement,
    })
}

/// Focal intensity of the clipped mode normalized to its on-axis peak.
pub fn clipped_focus_profile(w0_um: f64, wavelength_nm: f64, na: f64, grid_um: &[f64]) -> Result<Vec<f64>> {
    let params = FocusParams {
        w0_um,
        wavelength_nm,
        na,
    };
    Ok(focal_field(&params, grid_um, Exec::default())?.normalized_intensity())
}

/// Intensity of an ideal focused Gaussian of waist `w0`.
pub fn gaussian_intensity(w0_um: f64, x_um: f64) -> f64 {
    (-2.0 * (x_um / w0_um).powi(2)).exp()
}

/// Uniform grid of `points` samples on `[start, stop]`.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Core layout plus the device leakage field of one illuminated core.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamProfile {
    pub core_positions_um: Vec<f64>,
    pub illuminated_core: usize,
    /// Strictly increasing, with the illuminated core at 0.
    pub grid_um: Vec<f64>,
    /// Leaked field relative to the target peak field.
    pub device_field: Vec<Complex64>,
    pub optics: FocusParams,
    pub pitch_um: f64,
    /// Phase of the device field relative to the diffraction field. 0 adds the
    /// two amplitudes in phase (worst case).
    pub device_phase: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct DeviceRow {
    position_um: f64,
    relative_field: f64,
}

fn centred_cores(count: usize, pitch: f64) -> (Vec<f64>, usize) {
    let centre = count / 2;
    let positions = (0..count).map(|i| (i as f64 - centre as f64) * pitch).collect();
    (positions, centre)
}

impl BeamProfile {
    /// Parametric device: Gaussian core modes on a regular pitch with a fixed
    /// field leakage into the two nearest neighbours of the lit core.
    pub fn parametric(
        grid_um: Vec<f64>,
        optics: FocusParams,
        pitch_um: f64,
        cores: usize,
        leakage: f64,
    ) -> Result<Self> {
        let (core_positions_um, illuminated_core) = centred_cores(cores, pitch_um);
        let lit = core_positions_um[illuminated_core];
        let neighbours: Vec<f64> = core_positions_um
            .iter()
            .copied()
            .filter(|p| ((p - lit).abs() - pitch_um).abs() < 1e-9 * pitch_um)
            .collect();
        let device_field = grid_um
            .iter()
            .map(|&x| {
                let f: f64 = neighbours
                    .iter()
                    .map(|c| leakage * (-((x - c) / optics.w0_um).powi(2)).exp())
                    .sum();
                Complex64::new(f, 0.0)
            })
            .collect();
        let profile = Self {
            core_positions_um,
            illuminated_core,
            grid_um,
            device_field,
            optics,
            pitch_um,
            device_phase: 0.0,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Default 11-core, 5 μm pitch device on the given grid.
    pub fn default_device(grid_um: Vec<f64>) -> Result<Self> {
        Self::parametric(
            grid_um,
            FocusParams::default(),
            DEFAULT_PITCH_UM,
            DEFAULT_CORES,
            DEFAULT_LEAKAGE,
        )
    }

    /// Same layout with no device leakage.
    pub fn without_device(mut self) -> Self {
        self.device_field.iter_mut().for_each(|f| *f = Complex64::new(0.0, 0.0));
        self
    }

    /// Loads a measured leakage map with header `position_um,relative_field`.
    pub fn from_csv_reader<R: Read>(reader: R, optics: FocusParams, pitch_um: f64, cores: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["position_um", "relative_field"] {
            return Err(Error::Configuration(format!(
                "device map header must be `position_um,relative_field`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut grid = Vec::new();
        let mut field = Vec::new();
        for row in rdr.deserialize() {
            let row: DeviceRow = row?;
            grid.push(row.position_um);
            field.push(Complex64::new(row.relative_field, 0.0));
        }
        let (core_positions_um, illuminated_core) = centred_cores(cores, pitch_um);
        let profile = Self {
            core_positions_um,
            illuminated_core,
            grid_um: grid,
            device_field: field,
            optics,
            pitch_um,
            device_phase: 0.0,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn from_csv_path(path: &Path, optics: FocusParams, pitch_um: f64, cores: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, optics, pitch_um, cores)
    }

    /// Writes the real part of the device map in the loader's format.
    pub fn write_device_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (x, f) in self.grid_um.iter().zip(&self.device_field) {
            w.serialize(DeviceRow {
                position_um: *x,
                relative_field: f.re,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        if !(self.pitch_um > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pitch must be positive, got {}",
                self.pitch_um
            )));
        }
        if self.grid_um.len() < 2 {
            return Err(Error::InvalidArgument("grid needs at least two points".into()));
        }
        if self.grid_um.len() != self.device_field.len() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} points but device field has {}",
                self.grid_um.len(),
                self.device_field.len()
            )));
        }
        if self.grid_um.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        if self.device_field.iter().any(|f| !f.re.is_finite() || !f.im.is_finite()) {
            return Err(Error::InvalidArgument("device field must be finite".into()));
        }
        Ok(())
    }

    /// Linear interpolation of a per-grid quantity.
    pub fn interpolate<T>(&self, values: &[T], x: f64) -> Result<T>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (lo, hi) = (self.grid_um[0], self.grid_um[self.grid_um.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange {
                value: x,
                min: lo,
                max: hi,
            });
        }
        let idx = self.grid_um.partition_point(|&g| g <= x);
        if idx == 0 {
            return Ok(values[0]);
        }
        if idx >= self.grid_um.len() {
            return Ok(values[self.grid_um.len() - 1]);
        }
        let (x0, x1) = (self.grid_um[idx - 1], self.grid_um[idx]);
        let t = (x - x0) / (x1 - x0);
        Ok(values[idx - 1] * (1.0 - t) + values[idx] * t)
    }

    pub fn device_field_at(&self, x_um: f64) -> Result<Complex64> {
        self.interpolate(&self.device_field, x_um)
    }
}

/// Spectator-over-target crosstalk from device leakage plus diffraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkRatio {
    /// Coherent combination at the profile's configured relative phase.
    pub intensity_ratio: f64,
    /// `p · √intensity_ratio`.
    pub rabi_ratio: f64,
    /// Intensities added without interference.
    pub incoherent_intensity_ratio: f64,
    /// In-phase amplitudes.
    pub worst_case_intensity_ratio: f64,
    /// Anti-phase amplitudes.
    pub best_case_intensity_ratio: f64,
}

/// Combines the device field and the diffraction amplitude at the spectator
/// and the target positions.
pub fn total_crosstalk_ratio(
    profile: &BeamProfile,
    diffraction_intensity: &[f64],
    separation_um: f64,
    overlap: f64,
) -> Result<CrosstalkRatio> {
    profile.validate()?;
    if diffraction_intensity.len() != profile.grid_um.len() {
        return Err(Error::InvalidArgument(format!(
            "diffraction intensity has {} samples, grid has {}",
            diffraction_intensity.len(),
            profile.grid_um.len()
        )));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::OutOfRange {
            value: overlap,
            min: 0.0,
            max: 1.0,
        });
    }
    let amp_at = |x: f64| -> Result<f64> { Ok(profile.interpolate(diffraction_intensity, x)?.max(0.0).sqrt()) };
    let spec_diff = amp_at(separation_um)?;
    let spec_dev = profile.device_field_at(separation_um)?;
    let tgt_diff = amp_at(0.0)?;
    let tgt_dev = profile.device_field_at(0.0)?;

    let rot = Complex64::from_polar(1.0, profile.device_phase);
    let target = (Complex64::new(tgt_diff, 0.0) + rot * tgt_dev).norm_sqr();
    if !(target > 0.0) {
        return Err(Error::NumericalFailure("target intensity is zero".into()));
    }
    let coherent = (Complex64::new(spec_diff, 0.0) + rot * spec_dev).norm_sqr() / target;
    let incoherent = (spec_diff.powi(2) + spec_dev.norm_sqr()) / target;
    let worst = (spec_diff + spec_dev.norm()).powi(2) / target;
    let best = (spec_diff - spec_dev.norm()).powi(2) / target;
    Ok(CrosstalkRatio {
        intensity_ratio: coherent,
        rabi_ratio: overlap * coherent.sqrt(),
        incoherent_intensity_ratio: incoherent,
        worst_case_intensity_ratio: worst,
        best_case_intensity_ratio: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(step: f64, half: f64) -> Vec<f64> {
        let n = (2.0 * half / step).round() as usize + 1;
        linspace(-half, half, n)
    }

    #[test]
    fn rejects_bad_params() {
        assert!(clipped_focus_profile(0.0, 729.0, 0.35, &[0.0]).is_err());
        assert!(clipped_focus_profile(1.6, 729.0, -0.1, &[0.0]).is_err());
        assert!(clipped_focus_profile(1.6, 729.0, 0.35, &[]).is_err());
    }

    #[test]
    fn unclipped_profile_is_gaussian() {
        // NA ≫ 5 pupil waists
        let grid = grid_with(0.05, 3.2);
        let p = clipped_focus_profile(1.6, 729.0, 0.9, &grid).unwrap();
        for (x, i) in grid.iter().zip(&p) {
            let g = gaussian_intensity(1.6, *x);
            assert!((i - g).abs() / g < 1e-3, "x={x} i={i} g={g}");
        }
    }

    #[test]
    fn refinement_converges_monotonically() {
        let params = FocusParams::default();
        let grid = grid_with(0.1, 20.0);
        let f = focal_field(&params, &grid, Exec::Sequential).unwrap();
        assert!(*f.refinement.last().unwrap() <= QUADRATURE_TOLERANCE);
        for w in f.refinement.windows(2) {
            assert!(w[1] < w[0], "{:?}", f.refinement);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let params = FocusParams::default();
        let grid = grid_with(0.25, 10.0);
        let a = focal_field(&params, &grid, Exec::Sequential).unwrap();
        let b = focal_field(&params, &grid, Exec::default()).unwrap();
        assert_eq!(a.field, b.field);
    }

    #[test]
    fn device_profile_layout() {
        let grid = grid_with(0.5, 25.0);
        let p = BeamProfile::default_device(grid).unwrap();
        assert_eq!(p.core_positions_um.len(), 11);
        assert_eq!(p.core_positions_um[p.illuminated_core], 0.0);
        let at5 = p.device_field_at(5.0).unwrap();
        assert!((at5.re - DEFAULT_LEAKAGE).abs() < 1e-6);
        assert!(p.device_field_at(30.0).is_err());
    }

    #[test]
    fn csv_roundtrip_and_header_check() {
        let grid = grid_with(1.0, 10.0);
        let p = BeamProfile::default_device(grid).unwrap();
        let mut buf = Vec::new();
        p.write_device_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("position_um,relative_field\n"));
        let q = BeamProfile::from_csv_reader(&buf[..], p.optics, 5.0, 11).unwrap();
        assert_eq!(q.grid_um, p.grid_um);
        for (a, b) in q.device_field.iter().zip(&p.device_field) {
            assert!((a.re - b.re).abs() < 1e-15);
        }
        let bad = "pos,field\n0,1\n1,2\n";
        assert!(BeamProfile::from_csv_reader(bad.as_bytes(), p.optics, 5.0, 11).is_err());
        let unsorted = "position_um,relative_field\n1,0.1\n0,0.2\n";
        assert!(BeamProfile::from_csv_reader(unsorted.as_bytes(), p.optics, 5.0, 11).is_err());
    }

    #[test]
    fn crosstalk_ratio_rejects_outside_grid() {
        let grid = grid_with(0.5, 10.0);
        let p = BeamProfile::default_device(grid.clone()).unwrap();
        let diff = vec![0.0; grid.len()];
        assert!(matches!(
            total_crosstalk_ratio(&p, &diff, 11.0, 1.0),
            Err(Error::OutOfRange { .. })
        ));
    }
}
