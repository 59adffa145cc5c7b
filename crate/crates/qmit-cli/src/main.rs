use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qmit::commands::{self, CommandOutput, FitKind};
use qmit::config::RunConfig;
use qmit::presets::PresetName;
use qmit::Error;

/// Simulate and analyze squeezing-enhanced RF magnetometry and magnetic
/// induction tomography runs.
#[derive(Debug, Parser)]
#[command(name = "qmit", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a built-in operating point instead of a config file.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Override the base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the repetition count of the command.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Use only the first N bins of Q_B in the analysis.
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Optimum,
    Gap,
    Mit,
}

impl From<Preset> for PresetName {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Optimum => PresetName::Optimum,
            Preset::Gap => PresetName::Gap,
            Preset::Mit => PresetName::Mit,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a complete configuration for a preset (to --config, or stdout).
    Init,
    /// Noise budget per duty cycle and the SQL summary.
    Budget,
    /// Simulate shots into an archive.
    Simulate,
    /// Squeezing analysis of an archive.
    Analyze { archive: PathBuf },
    /// Repeated 1D position scans and the spread of fitted centers.
    Scan,
    /// Eddy-current signal versus RF phase.
    PhaseSweep,
    /// Measured squeezing versus gap duration.
    GapSweep,
    /// Synthesize a MORS spectrum at the configured polarization and fit it.
    Mors,
    /// Fit x,y[,sigma] data from a CSV file.
    #[command(subcommand)]
    Fit(FitCommand),
}

#[derive(Debug, Subcommand)]
enum FitCommand {
    /// y = A·exp(−x/τ).
    Decay { input: PathBuf },
    /// Gaussian profile with offset.
    Gaussian { input: PathBuf },
    /// Noise vs power: y/η = a + b·x + c·x².
    NoisePower {
        input: PathBuf,
        #[arg(long)]
        eta: f64,
    },
    /// Polarization from a MORS magnitude spectrum.
    Mors {
        input: PathBuf,
        #[arg(long)]
        larmor_hz: f64,
        #[arg(long)]
        quadratic_splitting_hz: f64,
    },
}

fn load_config(g: &Global) -> qmit::Result<RunConfig> {
    let mut cfg = match (&g.config, g.preset) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --config or --preset, not both".into())),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::from_preset(p.into())?,
        (None, None) => return Err(Error::Config("a --config file or a --preset is required".into())),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if let Some(b) = g.bins {
        cfg.analysis.truncate_bins = Some(b);
    }
    Ok(cfg)
}

fn report<R>(out: CommandOutput<R>) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(out.summary.as_bytes());
    for f in &out.files {
        let _ = writeln!(stdout, "wrote {}", f.display());
    }
}

fn run(cli: Cli) -> qmit::Result<()> {
    let g = &cli.global;
    if let Some(n) = g.parallel {
        if n == 0 {
            return Err(Error::Config("--parallel must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let fit_out = || g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Init => {
            let preset = g
                .preset
                .ok_or_else(|| Error::Config("init needs --preset".into()))?;
            let mut cfg = RunConfig::from_preset(preset.into())?;
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            if let Some(out) = &g.out {
                cfg.output_dir = out.clone();
            }
            let text = cfg.to_toml_string()?;
            match &g.config {
                Some(path) => {
                    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Budget => report(commands::cmd_budget(&load_config(g)?)?),
        Command::Simulate => {
            let mut cfg = load_config(g)?;
            if let Some(n) = g.reps {
                cfg.analysis.n_reps = n;
            }
            let total = cfg.analysis.n_reps;
            let out = commands::cmd_simulate(&cfg, |done| {
                if total >= 100_000 {
                    eprint!("\rsimulated {done}/{total}");
                    if done == total {
                        eprintln!();
                    }
                }
            })?;
            report(out);
        }
        Command::Analyze { archive } => {
            let dir = match &g.out {
                Some(d) => d.clone(),
                None => archive.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            report(commands::cmd_analyze(archive, g.bins, &dir)?);
        }
        Command::Scan => {
            let mut cfg = load_config(g)?;
            if let Some(n) = g.reps {
                cfg.analysis.scan.n_reps_per_pos = n;
            }
            report(commands::cmd_scan(&cfg)?);
        }
        Command::PhaseSweep => {
            let mut cfg = load_config(g)?;
            if let Some(n) = g.reps {
                cfg.analysis.phase_sweep.n_reps = n;
            }
            report(commands::cmd_phase_sweep(&cfg)?);
        }
        Command::GapSweep => {
            let mut cfg = load_config(g)?;
            if let Some(n) = g.reps {
                cfg.analysis.gap_sweep.n_reps = n;
            }
            report(commands::cmd_gap_sweep(&cfg)?);
        }
        Command::Mors => report(commands::cmd_mors(&load_config(g)?)?),
        Command::Fit(f) => {
            let (kind, input) = match f {
                FitCommand::Decay { input } => (FitKind::Decay, input),
                FitCommand::Gaussian { input } => (FitKind::Gaussian, input),
                FitCommand::NoisePower { input, eta } => (FitKind::NoisePower { eta: *eta }, input),
                FitCommand::Mors {
                    input,
                    larmor_hz,
                    quadratic_splitting_hz,
                } => (
                    FitKind::Mors {
                        larmor_hz: *larmor_hz,
                        quadratic_splitting_hz: *quadratic_splitting_hz,
                    },
                    input,
                ),
            };
            report(commands::cmd_fit(kind, input, &fit_out())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
