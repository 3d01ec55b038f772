//! `xtalk <scenario> --config <path> [--seed N] [--out <path>] [--shots N]`
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
//! failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use xtalk_core::exec::Exec;
use xtalk_core::experiment::{run_scenario, CompensationMode, Scenario, ScenarioConfig};
use xtalk_core::Error;

const BUILD: &str = env!("XTALK_GIT_DESCRIBE");

#[derive(Debug, Parser)]
#[command(
    name = "xtalk",
    version,
    about = "Run a crosstalk-cancellation scenario and write its scan as CSV"
)]
struct Args {
    /// Scenario to run.
    #[arg(value_parser = parse_scenario)]
    scenario: Scenario,

    /// JSON scenario config.
    #[arg(long, short)]
    config: PathBuf,

    /// RNG seed; overrides XTALK_SEED and the config.
    #[arg(long, env = "XTALK_SEED")]
    seed: Option<u64>,

    /// CSV destination; defaults to the config's output, then stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Shots per point; overrides the config.
    #[arg(long)]
    shots: Option<u32>,

    /// Evaluate scan points on one thread.
    #[arg(long)]
    sequential: bool,

    /// Also write the calibration result JSON (and a `.diagnostics.json`
    /// sidecar) when the compensation mode is `calibrated`.
    #[arg(long)]
    calibration_out: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
        format!("expected one of: {}", names.join(", "))
    })
}

fn load_config(args: &Args) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", args.config.display())))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Configuration(format!("{}: {e}", args.config.display())))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Configuration("config must be a JSON object".into()))?;
    let wanted = serde_json::Value::from(args.scenario.as_str());
    match obj.get("scenario") {
        Some(s) if *s != wanted => {
            return Err(Error::Configuration(format!(
                "config is for scenario {s}, command line asks for {wanted}"
            )))
        }
        _ => {
            obj.insert("scenario".into(), wanted);
        }
    }
    let mut cfg = ScenarioConfig::from_json(&doc.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(shots) = args.shots {
        cfg.shots = shots;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    if let (Some(map), Some(dir)) = (&cfg.optics.device_map_csv, args.config.parent()) {
        if map.is_relative() {
            cfg.optics.device_map_csv = Some(dir.join(map));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.diagnostics.json"))
}

fn run(args: &Args) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let exec = if args.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    if let Some(path) = &args.calibration_out {
        if cfg.compensation != CompensationMode::Calibrated {
            return Err(Error::Configuration(
                "--calibration-out needs compensation mode `calibrated`".into(),
            ));
        }
        let (result, diag) = cfg.calibrate()?;
        result.write_json(path)?;
        diag.write_json(&sidecar_path(path))?;
    }
    let result = run_scenario(&cfg, exec)?;
    match &cfg.output {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            result.write_csv(&mut w, BUILD)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            result.write_csv(stdout.lock(), BUILD)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xtalk: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
