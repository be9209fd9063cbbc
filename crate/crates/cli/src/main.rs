mod commands;
mod config;
mod error;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gemtomo::calibration::DecayMode;
use gemtomo::ForwardMethod;

use commands::Ctx;
use config::RunConfig;
use error::{CliError, CliResult};
use render::{RenderMode, SliceSpec};

#[derive(Parser)]
#[command(
    name = "gemtomo",
    version,
    about = "Gradient-echo-memory tomography: simulate, detect, reconstruct, calibrate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid size NXxNYxNZ; keeps the configured steps.
    #[arg(long)]
    grid: Option<String>,
    /// Readout window N@DT, centred on the echo.
    #[arg(long)]
    times: Option<String>,
    #[arg(long, value_enum)]
    method: Option<Method>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Fft,
    Splitstep,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMode {
    GradientOff,
    GradientOn,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the scenario spin wave as a GEMT field.
    Scenario {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// The flat reference cloud instead of the scenario.
        #[arg(long)]
        reference: bool,
    },
    /// Scenario → forward model → optional decay → camera → GEMT signal.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        no_noise: bool,
        #[arg(long)]
        skip_detector: bool,
    },
    /// Run a noiseless signal through the camera model.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_noise: bool,
    },
    /// Invert a signal; writes the field plus a JSON report.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Signal of the flat reference cloud, for ρ = S/S_ref and masking.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Focus (z0, ζ) search, and axis calibration when a reference is given.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit decoherence lifetimes to a `t_s,amplitude` CSV.
    FitDecay {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "gradient-off")]
        mode: FitMode,
        /// Hold τ_k fixed (seconds) in gradient-on mode.
        #[arg(long)]
        fixed_tau_k: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PNG of one slice of a GEMT field plus a CSV of its central profiles.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        /// Reconstructed reference field; shows ρ = S/S_ref.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        slice: SliceSpec,
        #[arg(long, value_enum, default_value = "phase")]
        mode: RenderMode,
        #[arg(long, default_value_t = 0.1)]
        mask_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the analytic forward model with the split-step integrator.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn context(common: &Common) -> CliResult<Ctx> {
    let (mut cfg, base_dir) = match &common.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(g) = &common.grid {
        cfg.set_grid(g)?;
    }
    if let Some(t) = &common.times {
        cfg.set_times(t)?;
    }
    if let Some(m) = common.method {
        cfg.set_method(match m {
            Method::Fft => ForwardMethod::Fft,
            Method::Splitstep => ForwardMethod::Splitstep,
        });
    }
    cfg.validate()?;
    Ok(Ctx { cfg, base_dir })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Init { out } => {
            std::fs::write(&out, RunConfig::default().to_json() + "\n").map_err(|e| CliError::io(&out, e))
        }
        Command::Scenario { common, out, reference } => commands::scenario(&context(&common)?, &out, reference),
        Command::Simulate { common, out, reference, no_noise, skip_detector } => {
            let mut ctx = context(&common)?;
            ctx.cfg.detector.shot_noise &= !no_noise;
            commands::simulate(&ctx, &out, reference, skip_detector)
        }
        Command::Detect { common, input, out, no_noise } => {
            let mut ctx = context(&common)?;
            ctx.cfg.detector.shot_noise &= !no_noise;
            commands::detect(&ctx, &input, &out)
        }
        Command::Reconstruct { common, input, reference, out } => {
            commands::reconstruct_cmd(&context(&common)?, &input, reference.as_deref(), &out)
        }
        Command::Calibrate { common, input, reference, out } => {
            commands::calibrate(&context(&common)?, &input, reference.as_deref(), out.as_deref())
        }
        Command::FitDecay { common, input, mode, fixed_tau_k, out } => {
            let mode = match (mode, fixed_tau_k) {
                (FitMode::GradientOff, None) => DecayMode::GradientOff,
                (FitMode::GradientOff, Some(_)) => {
                    return Err(CliError::Validation("--fixed-tau-k applies to gradient-on fits only".into()))
                }
                (FitMode::GradientOn, fixed) => DecayMode::GradientOn { fixed_tau_k: fixed },
            };
            commands::fit_decay_cmd(&context(&common)?, &input, mode, out.as_deref())
        }
        Command::Render { input, reference, slice, mode, mask_threshold, out } => {
            commands::render(&input, reference.as_deref(), slice, mode, mask_threshold, &out)
        }
        Command::Oracle { common, out } => {
            let mut common = common;
            common.grid.get_or_insert_with(|| "8x8x32".into());
            common.times.get_or_insert_with(|| "64@100e-9".into());
            commands::oracle(&context(&common)?, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gemtomo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
