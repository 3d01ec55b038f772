//! Scenario runner: builds scans from a JSON config and writes them as CSV.
//!
//! Each scan point is evaluated independently through [`Exec`] and draws
//! its randomness from `point_rng(seed, index)`, so a run's output depends
//! only on the config and the seed.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{run_calibration, CalibrationConfig, CalibrationResult, ChainDiagnostics};
use crate::dynamics::{wrap_to_pi, QubitState, Unitary2};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::{CompensationSetting, CrosstalkContext};
use crate::noise::{
    beatnote_phase_measurement, ramsey_phase_estimate, ramsey_probability, sample_slow_drift, NoisePresets,
};
use crate::optics::{
    focal_field, linspace, BeamProfile, FocusParams, DEFAULT_CORES, DEFAULT_LEAKAGE, DEFAULT_PITCH_UM,
};
use crate::pulses::{
    self, gate_train, propagators, ramsey_wrapped_error, segments_unitary, GaussianPhaseJitter, Method, PhaseNoise,
    PulseSequence, SimOptions, TARGET,
};
use crate::sampling::{binomial_stderr, point_rng, sample_fraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    XError,
    ZError,
    PhaseScan,
    RabiScan,
    AmplitudeScan,
    DriftMonitor,
    DutyCycleSweep,
    BeamProfile,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::XError,
        Scenario::ZError,
        Scenario::PhaseScan,
        Scenario::RabiScan,
        Scenario::AmplitudeScan,
        Scenario::DriftMonitor,
        Scenario::DutyCycleSweep,
        Scenario::BeamProfile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::XError => "x-error",
            Scenario::ZError => "z-error",
            Scenario::PhaseScan => "phase-scan",
            Scenario::RabiScan => "rabi-scan",
            Scenario::AmplitudeScan => "amplitude-scan",
            Scenario::DriftMonitor => "drift-monitor",
            Scenario::DutyCycleSweep => "duty-cycle-sweep",
            Scenario::BeamProfile => "beam-profile",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Configuration(format!("unknown scenario `{s}`")))
    }
}

/// How the cancellation tone is set for `pcc` runs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompensationMode {
    /// Exact cancellation, including the path phase.
    #[default]
    Ideal,
    /// Leaves `|Ω_eff|/|Ω_CT| = ratio`, by a phase or an amplitude error.
    Residual {
        ratio: f64,
        #[serde(default)]
        source: ResidualSource,
    },
    /// Commanded amplitude and phase.
    Explicit {
        f_comp: f64,
        #[serde(rename = "delta_phi_rad")]
        delta_phi: f64,
    },
    /// Run the calibration chain first and use its result.
    Calibrated,
}

/// Which knob carries the cancellation error of a residual setting.
///
/// A phase error at unit amplitude leaves a residual drive nearly in
/// quadrature with the crosstalk; an amplitude error leaves it in line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualSource {
    #[default]
    Phase,
    Amplitude,
}

/// Optical parameters of the beam-profile scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsConfig {
    pub w0_um: f64,
    pub wavelength_nm: f64,
    pub na: f64,
    pub pitch_um: f64,
    pub cores: usize,
    /// Field leakage into each neighbouring core of the parametric device.
    pub leakage: f64,
    #[serde(rename = "device_phase_rad")]
    pub device_phase: f64,
    /// Measured device map; replaces the parametric leakage when set.
    pub device_map_csv: Option<PathBuf>,
    pub separation_um: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        let f = FocusParams::default();
        Self {
            w0_um: f.w0_um,
            wavelength_nm: f.wavelength_nm,
            na: f.na,
            pitch_um: DEFAULT_PITCH_UM,
            cores: DEFAULT_CORES,
            leakage: DEFAULT_LEAKAGE,
            device_phase: 0.0,
            device_map_csv: None,
            separation_um: DEFAULT_PITCH_UM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Target,
    #[default]
    Spectator,
}

/// Scan axis settings. Unset fields take per-scenario defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub gate_counts: Option<Vec<u32>>,
    pub points: Option<usize>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    /// Phase-scan pulse time in units of `2·t_π^CT`.
    pub periods: Option<u32>,
    pub channel: Option<Channel>,
    pub mitigated: Option<bool>,
    pub detector_sigma_rad: Option<f64>,
    pub settle_s: Option<f64>,
    pub window_s: Option<f64>,
}

fn default_shots() -> u32 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub context: CrosstalkContext,
    #[serde(default)]
    pub compensation: CompensationMode,
    #[serde(default)]
    pub noise: NoisePresets,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default = "default_shots")]
    pub shots: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Per-shot Gaussian phase noise on the cancellation path.
    #[serde(default, rename = "phase_jitter_rad")]
    pub phase_jitter: f64,
    #[serde(default)]
    pub back_action: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            method: Method::None,
            context: CrosstalkContext::default(),
            compensation: CompensationMode::default(),
            noise: NoisePresets::default(),
            calibration: CalibrationConfig::default(),
            optics: OpticsConfig::default(),
            scan: ScanConfig::default(),
            shots: default_shots(),
            seed: 0,
            output: None,
            phase_jitter: 0.0,
            back_action: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Configuration(e.to_string());
        self.context.validate().map_err(cfg_err)?;
        self.noise.validate().map_err(cfg_err)?;
        if self.shots == 0 {
            return Err(Error::Configuration("shots must be at least 1".into()));
        }
        if !(self.phase_jitter.is_finite() && self.phase_jitter >= 0.0) {
            return Err(Error::Configuration(
                "phase_jitter_rad must be finite and non-negative".into(),
            ));
        }
        if let CompensationMode::Residual { ratio, source } = self.compensation {
            let max = if source == ResidualSource::Amplitude { 1.0 } else { 2.0 };
            if !(0.0..=max).contains(&ratio) {
                return Err(Error::Configuration(format!(
                    "residual ratio {ratio} outside [0, {max}]"
                )));
            }
        }
        if let CompensationMode::Calibrated = self.compensation {
            self.calibration.validate()?;
        }
        if let Some(n) = self.scan.points {
            if n == 0 {
                return Err(Error::Configuration("scan.points must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the config as canonical JSON, without the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Runs the calibration chain on this config's context.
    pub fn calibrate(&self) -> Result<(CalibrationResult, ChainDiagnostics)> {
        run_calibration(&self.context, &self.calibration, self.seed)
    }

    /// The cancellation setting a `pcc` run uses.
    pub fn compensation_setting(&self) -> Result<CompensationSetting> {
        let ideal = self.context.ideal_setting();
        match self.compensation {
            CompensationMode::Ideal => Ok(ideal),
            CompensationMode::Residual {
                ratio,
                source: ResidualSource::Phase,
            } => {
                let offset = CompensationSetting::with_residual(ratio)?.phase_error();
                CompensationSetting::new(1.0, ideal.delta_phi + offset)
            }
            CompensationMode::Residual {
                ratio,
                source: ResidualSource::Amplitude,
            } => CompensationSetting::new(1.0 - ratio, ideal.delta_phi),
            CompensationMode::Explicit { f_comp, delta_phi } => CompensationSetting::new(f_comp, delta_phi),
            CompensationMode::Calibrated => self.calibrate()?.0.setting(),
        }
    }
}

/// One scan: an axis, exact values, sampled values and their standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub scenario: Scenario,
    pub method: Method,
    pub x_label: String,
    pub quantity: String,
    /// Whether the values are populations (and so lie in `[0, 1]`).
    pub is_population: bool,
    pub x: Vec<f64>,
    pub value_mean: Vec<f64>,
    pub value_sampled: Vec<f64>,
    pub stderr: Vec<f64>,
    pub config_hash: String,
    pub seed: u64,
    /// Extra `key: value` lines for the CSV header.
    pub notes: Vec<(String, String)>,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if self.value_mean.len() != n || self.value_sampled.len() != n || self.stderr.len() != n {
            return Err(Error::NumericalFailure("scan columns differ in length".into()));
        }
        let all = self
            .x
            .iter()
            .chain(&self.value_mean)
            .chain(&self.value_sampled)
            .chain(&self.stderr);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("scan contains non-finite values".into()));
        }
        if self.is_population {
            let tol = 1e-12;
            if self
                .value_mean
                .iter()
                .chain(&self.value_sampled)
                .any(|&p| !(-tol..=1.0 + tol).contains(&p))
            {
                return Err(Error::NumericalFailure("population outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// CSV with `#` metadata lines and a `x,value_mean,value_sampled,stderr`
    /// table.
    pub fn write_csv<W: Write>(&self, mut w: W, build: &str) -> Result<()> {
        writeln!(w, "# scenario: {}", self.scenario)?;
        writeln!(w, "# method: {}", self.method.as_str())?;
        writeln!(w, "# x: {}", self.x_label)?;
        writeln!(w, "# value: {}", self.quantity)?;
        writeln!(w, "# seed: {}", self.seed)?;
        writeln!(w, "# config_sha256: {}", self.config_hash)?;
        writeln!(w, "# build: {build}")?;
        for (k, v) in &self.notes {
            writeln!(w, "# {k}: {v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "value_mean", "value_sampled", "stderr"])?;
        for i in 0..self.x.len() {
            out.write_record([
                self.x[i].to_string(),
                self.value_mean[i].to_string(),
                self.value_sampled[i].to_string(),
                self.stderr[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, build: &str) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, build)?;
        String::from_utf8(buf).map_err(|e| Error::NumericalFailure(e.to_string()))
    }
}

struct Point {
    mean: f64,
    sampled: f64,
    stderr: f64,
}

fn shot_point(p: f64, shots: u32, seed: u64, index: usize) -> Point {
    let p = p.clamp(0.0, 1.0);
    let mut rng = point_rng(seed, index as u64);
    Point {
        mean: p,
        sampled: sample_fraction(p, shots, &mut rng),
        stderr: binomial_stderr(p, shots),
    }
}

fn assemble(
    cfg: &ScenarioConfig,
    x: Vec<f64>,
    points: Vec<Point>,
    x_label: &str,
    quantity: &str,
    is_population: bool,
) -> Result<ScanResult> {
    let result = ScanResult {
        scenario: cfg.scenario,
        method: cfg.method,
        x_label: x_label.into(),
        quantity: quantity.into(),
        is_population,
        value_mean: points.iter().map(|p| p.mean).collect(),
        value_sampled: points.iter().map(|p| p.sampled).collect(),
        stderr: points.iter().map(|p| p.stderr).collect(),
        x,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        notes: Vec::new(),
    };
    result.validate()?;
    Ok(result)
}

fn axis(scan: &ScanConfig, start: f64, stop: f64, points: usize) -> Vec<f64> {
    linspace(
        scan.start.unwrap_or(start),
        scan.stop.unwrap_or(stop),
        scan.points.unwrap_or(points),
    )
}

/// Measurement basis for spectator gate benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Spectator prepared in `|0⟩`, excited population read out.
    Z,
    /// Spectator prepared on the equator, Ramsey-wrapped readout.
    X,
}

fn spectator_readout(u: &Unitary2, basis: Basis) -> f64 {
    match basis {
        Basis::Z => u.apply(&QubitState::ground()).excited_population(),
        Basis::X => ramsey_wrapped_error(u),
    }
}

/// Exact spectator error after `n` gates of `method`.
pub fn spectator_gate_error(
    method: Method,
    n: usize,
    ctx: &CrosstalkContext,
    setting: &CompensationSetting,
    basis: Basis,
) -> Result<f64> {
    let seq = gate_train(method, n, ctx, setting)?;
    let [_, u_s] = propagators(&seq, ctx, &SimOptions::default(), 0.0)?;
    Ok(spectator_readout(&u_s, basis))
}

fn gate_benchmark(cfg: &ScenarioConfig, basis: Basis, exec: Exec) -> Result<ScanResult> {
    let counts = cfg.scan.gate_counts.clone().unwrap_or_else(|| (1..=20).collect());
    if counts.is_empty() {
        return Err(Error::Configuration("gate_counts must not be empty".into()));
    }
    let setting = if cfg.method == Method::Pcc {
        cfg.compensation_setting()?
    } else {
        CompensationSetting::off()
    };
    let ctx = cfg.context;
    let opts = SimOptions {
        back_action: cfg.back_action,
        ..SimOptions::default()
    };
    let jitter = (cfg.method == Method::Pcc && cfg.phase_jitter > 0.0).then_some(GaussianPhaseJitter {
        sigma: cfg.phase_jitter,
    });
    let points = exec.try_map(counts.len(), |i| {
        let seq = gate_train(cfg.method, counts[i] as usize, &ctx, &setting)?;
        match &jitter {
            None => {
                let [_, u_s] = propagators(&seq, &ctx, &opts, 0.0)?;
                Ok(shot_point(spectator_readout(&u_s, basis), cfg.shots, cfg.seed, i))
            }
            Some(noise) => noisy_point(&seq, &ctx, &opts, noise, basis, cfg.shots, cfg.seed, i),
        }
    })?;
    let x = counts.iter().map(|&n| f64::from(n)).collect();
    let quantity = match basis {
        Basis::Z => "spectator_excited_population",
        Basis::X => "spectator_ramsey_error",
    };
    let mut r = assemble(cfg, x, points, "gate_count", quantity, true)?;
    if cfg.method == Method::Pcc {
        r.notes.push(("f_comp".into(), setting.f_comp.to_string()));
        r.notes.push(("delta_phi_rad".into(), setting.delta_phi.to_string()));
        r.notes.push(("f_eff".into(), ctx.f_eff(&setting).to_string()));
    }
    if cfg.method == Method::Quad {
        r.notes.push((
            "frame_angle_rad".into(),
            pulses::quadrilateral_frame_angle().to_string(),
        ));
    }
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn noisy_point(
    seq: &PulseSequence,
    ctx: &CrosstalkContext,
    opts: &SimOptions,
    noise: &dyn PhaseNoise,
    basis: Basis,
    shots: u32,
    seed: u64,
    index: usize,
) -> Result<Point> {
    use rand::Rng;
    let mut rng = point_rng(seed, index as u64);
    let mut sum = 0.0;
    let mut hits = 0u64;
    for shot in 0..shots {
        let offset = noise.phase_offset(shot, &mut rng);
        let [_, u_s] = propagators(seq, ctx, opts, offset)?;
        let p = spectator_readout(&u_s, basis);
        sum += p;
        if rng.random::<f64>() < p {
            hits += 1;
        }
    }
    let n = f64::from(shots);
    let mean = sum / n;
    Ok(Point {
        mean,
        sampled: hits as f64 / n,
        stderr: binomial_stderr(mean, shots),
    })
}

/// Spectator excited population after `N` π gates, spectator in `|0⟩`.
pub fn run_x_error(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    gate_benchmark(cfg, Basis::Z, exec)
}

/// Ramsey-wrapped spectator error after `N` π gates, spectator on the
/// equator.
pub fn run_z_error(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    gate_benchmark(cfg, Basis::X, exec)
}

/// Spectator population against commanded cancellation phase at
/// `t = 2n·t_π^CT`.
pub fn run_phase_scan(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    let ctx = cfg.context;
    let n = cfg.scan.periods.unwrap_or(1);
    if n == 0 {
        return Err(Error::Configuration("scan.periods must be at least 1".into()));
    }
    let f_comp = match cfg.compensation {
        CompensationMode::Explicit { f_comp, .. } => f_comp,
        _ => cfg.compensation_setting()?.f_comp,
    };
    let points = cfg.scan.points.unwrap_or(40);
    let start = cfg.scan.start.unwrap_or(0.0);
    let stop = cfg.scan.stop.unwrap_or(TAU);
    let x: Vec<f64> = (0..points)
        .map(|k| start + (stop - start) * k as f64 / points as f64)
        .collect();
    let t = 2.0 * f64::from(n) * ctx.t_pi_ct();
    let base = pulses::square(ctx.omega0, 0.0, ctx.omega0 * t);
    let pts = exec.try_map(x.len(), |i| {
        let seq = pulses::with_pcc(&base, &ctx, &CompensationSetting::new(f_comp, x[i])?)?;
        Ok(shot_point(
            pulses::spectator_population(&seq, &ctx, &SimOptions::default())?,
            cfg.shots,
            cfg.seed,
            i,
        ))
    })?;
    let mut r = assemble(cfg, x, pts, "delta_phi_rad", "spectator_excited_population", true)?;
    r.notes.push(("pulse_time_s".into(), t.to_string()));
    r.notes.push(("f_comp".into(), f_comp.to_string()));
    Ok(r)
}

/// Rabi flop of the target or spectator against pulse time.
pub fn run_rabi_scan(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    let ctx = cfg.context;
    let setting = match cfg.method {
        Method::None => None,
        Method::Pcc => Some(cfg.compensation_setting()?),
        m => {
            return Err(Error::Configuration(format!(
                "rabi-scan uses square pulses; method `{}` is not supported",
                m.as_str()
            )))
        }
    };
    let channel = cfg.scan.channel.unwrap_or_default();
    let t_max = match channel {
        Channel::Target => 4.0 * ctx.t_pi(),
        Channel::Spectator => 4.0 * ctx.t_pi_ct(),
    };
    let x = axis(&cfg.scan, 0.0, t_max, 81);
    let opts = SimOptions {
        back_action: cfg.back_action,
        ..SimOptions::default()
    };
    let pts = exec.try_map(x.len(), |i| {
        let mut seq = pulses::square(ctx.omega0, 0.0, ctx.omega0 * x[i]);
        if let Some(s) = &setting {
            seq = pulses::with_pcc(&seq, &ctx, s)?;
        }
        let p = match channel {
            Channel::Target => pulses::target_population(&seq, &ctx, &opts)?,
            Channel::Spectator => pulses::spectator_population(&seq, &ctx, &opts)?,
        };
        Ok(shot_point(p, cfg.shots, cfg.seed, i))
    })?;
    let quantity = match channel {
        Channel::Target => "target_excited_population",
        Channel::Spectator => "spectator_excited_population",
    };
    assemble(cfg, x, pts, "pulse_time_s", quantity, true)
}

/// Target population after one π gate against relative Rabi frequency.
pub fn amplitude_response(method: Method, scale: f64) -> Result<f64> {
    let ctx = CrosstalkContext::new(1.0, 0.0, 0.0)?;
    let (block, _) = pulses::pi_gate(method, &ctx, &CompensationSetting::off())?;
    let u = segments_unitary(&block.channels[TARGET].segments, scale, 0.0);
    Ok(u.apply(&QubitState::ground()).excited_population())
}

pub fn run_amplitude_scan(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    if cfg.method == Method::Pcc {
        return Err(Error::Configuration(
            "amplitude-scan compares target pulse shapes; use none, sk1 or quad".into(),
        ));
    }
    let x = axis(&cfg.scan, 0.0, 2.0, 201);
    let pts = exec.try_map(x.len(), |i| {
        Ok(shot_point(
            amplitude_response(cfg.method, x[i])?,
            cfg.shots,
            cfg.seed,
            i,
        ))
    })?;
    assemble(cfg, x, pts, "rabi_ratio", "target_excited_population", true)
}

/// Offset of Ramsey-probe streams from the drift-trace stream.
const PROBE_STREAM: u64 = 1 << 32;

/// Slow drift trace and its two-quadrature Ramsey estimate.
pub fn run_drift_monitor(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    let drift = cfg.noise.drift;
    let duration = cfg.scan.stop.unwrap_or(drift.window);
    let points = cfg.scan.points.unwrap_or(81);
    if points < 2 {
        return Err(Error::Configuration("drift-monitor needs at least 2 points".into()));
    }
    let dt = duration / (points - 1) as f64;
    let trace = sample_slow_drift(&drift, duration, dt, cfg.seed)?;
    let shots = cfg.shots;
    let pts = exec.map(trace.len(), |i| {
        let phi = trace[i];
        let mut rng = point_rng(cfg.seed, PROBE_STREAM + i as u64);
        let p0 = sample_fraction(ramsey_probability(phi), shots, &mut rng);
        let p90 = sample_fraction(ramsey_probability(phi - PI / 2.0), shots, &mut rng);
        let (s, c) = phi.sin_cos();
        Point {
            mean: wrap_to_pi(phi),
            sampled: ramsey_phase_estimate(p0, p90),
            stderr: ((c.powi(4) + s.powi(4)) / f64::from(shots)).sqrt(),
        }
    });
    let x = (0..trace.len()).map(|i| i as f64 * dt).collect();
    let mut r = assemble(cfg, x, pts, "time_min", "differential_phase_rad", false)?;
    r.notes
        .push(("trace_sigma_rad".into(), crate::noise::trace_sigma(&trace).to_string()));
    Ok(r)
}

/// Steady drift rate against duty ratio, with a beatnote readout.
pub fn run_duty_cycle_sweep(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    let m = cfg.noise.aom;
    let duty = cfg.noise.duty_cycle;
    let mitigated = cfg.scan.mitigated.unwrap_or(false);
    let sigma = cfg.scan.detector_sigma_rad.unwrap_or(0.01);
    let settle = cfg.scan.settle_s.unwrap_or(5.0 * m.tau);
    let window = cfg.scan.window_s.unwrap_or(1.0);
    let points = cfg.scan.points.unwrap_or(13);
    let lo = cfg.scan.start.unwrap_or(1e-3).log10();
    let hi = cfg.scan.stop.unwrap_or(1.0).log10();
    let x: Vec<f64> = linspace(lo, hi, points).into_iter().map(|e| 10f64.powf(e)).collect();
    let beat = cfg.noise.beatnote;
    let pts = exec.try_map(x.len(), |i| {
        let rate = duty.simulated_drift_rate(&m, x[i], mitigated, settle)?;
        let stream = cfg.seed.wrapping_add(i as u64);
        let a = beatnote_phase_measurement(&beat, 0.0, sigma, point_rng(stream, 0).next_seed())?;
        let b = beatnote_phase_measurement(&beat, rate * window, sigma, point_rng(stream, 1).next_seed())?;
        Ok(Point {
            mean: rate,
            sampled: wrap_to_pi(b - a) / window,
            stderr: std::f64::consts::SQRT_2 * sigma / window,
        })
    })?;
    let mut r = assemble(cfg, x, pts, "duty_ratio", "drift_rate_rad_per_s", false)?;
    r.notes.push(("mitigated".into(), mitigated.to_string()));
    Ok(r)
}

trait NextSeed {
    fn next_seed(self) -> u64;
}

impl NextSeed for rand_chacha::ChaCha8Rng {
    fn next_seed(mut self) -> u64 {
        use rand::Rng;
        self.random()
    }
}

/// Target beam intensity profile with device leakage and diffraction, plus
/// the crosstalk ratio at the configured separation.
pub fn run_beam_profile(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    let o = &cfg.optics;
    let focus = FocusParams {
        w0_um: o.w0_um,
        wavelength_nm: o.wavelength_nm,
        na: o.na,
    };
    let half = o.pitch_um * 2.0;
    let grid = axis(&cfg.scan, -half, half, 201);
    let mut profile = match &o.device_map_csv {
        Some(path) => BeamProfile::from_csv_path(path, focus, o.pitch_um, o.cores)?,
        None => BeamProfile::parametric(grid.clone(), focus, o.pitch_um, o.cores, o.leakage)?,
    };
    profile.device_phase = o.device_phase;
    let field = focal_field(&focus, &profile.grid_um, exec)?;
    let diffraction = field.normalized_intensity();
    let ratio = crate::optics::total_crosstalk_ratio(&profile, &diffraction, o.separation_um, cfg.context.pol_overlap)?;
    let rot = num_complex::Complex64::from_polar(1.0, profile.device_phase);
    let target = (num_complex::Complex64::new(1.0, 0.0) + rot * profile.device_field_at(0.0)?).norm_sqr();
    let pts = exec.try_map(grid.len(), |i| {
        let x = grid[i];
        let amp = profile.interpolate(&diffraction, x)?.max(0.0).sqrt();
        let total = (num_complex::Complex64::new(amp, 0.0) + rot * profile.device_field_at(x)?).norm_sqr() / target;
        Ok(Point {
            mean: total,
            sampled: total,
            stderr: 0.0,
        })
    })?;
    let mut r = assemble(cfg, grid, pts, "position_um", "relative_intensity", false)?;
    r.notes.push(("separation_um".into(), o.separation_um.to_string()));
    r.notes
        .push(("intensity_ratio".into(), ratio.intensity_ratio.to_string()));
    r.notes.push(("rabi_ratio".into(), ratio.rabi_ratio.to_string()));
    r.notes.push((
        "incoherent_intensity_ratio".into(),
        ratio.incoherent_intensity_ratio.to_string(),
    ));
    r.notes.push((
        "worst_case_intensity_ratio".into(),
        ratio.worst_case_intensity_ratio.to_string(),
    ));
    r.notes.push((
        "best_case_intensity_ratio".into(),
        ratio.best_case_intensity_ratio.to_string(),
    ));
    Ok(r)
}

pub fn run_scenario(cfg: &ScenarioConfig, exec: Exec) -> Result<ScanResult> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::XError => run_x_error(cfg, exec),
        Scenario::ZError => run_z_error(cfg, exec),
        Scenario::PhaseScan => run_phase_scan(cfg, exec),
        Scenario::RabiScan => run_rabi_scan(cfg, exec),
        Scenario::AmplitudeScan => run_amplitude_scan(cfg, exec),
        Scenario::DriftMonitor => run_drift_monitor(cfg, exec),
        Scenario::DutyCycleSweep => run_duty_cycle_sweep(cfg, exec),
        Scenario::BeamProfile => run_beam_profile(cfg, exec),
    }
}

/// Spectator detuning (as a fraction of `Ω_0`) at which the single-gate
/// X-basis error of `method` equals `target`, by bisection on `[lo, hi]`.
pub fn detuning_for_z_error(method: Method, ctx: &CrosstalkContext, target: f64, lo: f64, hi: f64) -> Result<f64> {
    let err = |d: f64| -> Result<f64> {
        let mut c = *ctx;
        c.delta_ct = d * ctx.omega0;
        spectator_gate_error(method, 1, &c, &CompensationSetting::off(), Basis::X)
    };
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (err(a)? - target, err(b)? - target);
    if fa.signum() == fb.signum() {
        return Err(Error::Range(format!(
            "error does not cross {target:e} between detunings {lo} and {hi}"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if (err(mid)? - target).signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
