mod commands;
mod config;
mod report;

use clap::{Parser, ValueEnum};
use config::{ConfigError, ConfigResult, RunConfig};
use kernlab::expsum::Backend;
use report::Report;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    VerifyGauss,
    VerifyTwist,
    VerifyQuadric,
    VerifyLocalzeta,
    VerifyPoisson,
    ComputeIs,
    GeometricSide,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Exact,
    Floating,
}

/// Runs one check and writes a JSON report. Flags override the config file.
#[derive(Debug, Parser)]
#[command(name = "kernlab", version)]
struct Cli {
    /// Command to run; falls back to `command` in the config file.
    command: Option<Command>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<u64>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    t_val: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<i64>,
    /// Six comma-separated rationals.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<String>>,
    #[arg(long, allow_hyphen_values = true)]
    s: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<String>,
    #[arg(long)]
    conductor: Option<u32>,
    #[arg(long)]
    height: Option<u64>,
    #[arg(long)]
    cmax: Option<u64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// JSON report path; the geometric side also writes a `.csv` term table next to it.
    #[arg(long)]
    out: Option<String>,
    /// Record wall time in the report (makes it run-dependent).
    #[arg(long)]
    timing: bool,
}

impl Cli {
    fn flags(&self) -> RunConfig {
        RunConfig {
            command: self.command.map(Command::name),
            p: self.p,
            level: self.level,
            t_val: self.t_val,
            b: self.b,
            alpha: self.alpha.clone(),
            s: self.s.clone(),
            chi: self.chi.clone(),
            conductor: self.conductor,
            height: self.height,
            cmax: self.cmax,
            grid: self.grid,
            backend: self.backend.map(|b| match b {
                BackendArg::Exact => Backend::Exact,
                BackendArg::Floating => Backend::Floating,
            }),
            seed: self.seed,
            samples: self.samples,
            out: self.out.clone(),
        }
    }
}

fn run(cli: &Cli) -> ConfigResult<Report> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(cli.flags());
    let name = cfg.require(&cfg.command, "command")?;
    let cmd = Command::from_str(&name, true).map_err(|_| ConfigError(format!("unknown command `{name}`")))?;
    let csv_path = cfg.out.as_ref().map(|o| Path::new(o).with_extension("csv"));
    let mut report = Report::new(&name, cfg.clone());
    let start = Instant::now();
    match cmd {
        Command::VerifyGauss => commands::verify_gauss(&cfg, &mut report)?,
        Command::VerifyTwist => commands::verify_twist(&cfg, &mut report)?,
        Command::VerifyQuadric => commands::verify_quadric(&cfg, &mut report)?,
        Command::VerifyLocalzeta => commands::verify_localzeta(&cfg, &mut report)?,
        Command::VerifyPoisson => commands::verify_poisson(&cfg, &mut report)?,
        Command::ComputeIs => commands::compute_is(&cfg, &mut report)?,
        Command::GeometricSide => commands::cmd_geometric_side(&cfg, &mut report, csv_path.as_deref())?,
    }
    if cli.timing {
        report.timing_ms = Some(start.elapsed().as_millis());
    }
    report.finish();
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let json = report.to_json();
    match &report.config.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &json) {
                eprintln!("error: {path}: {e}");
                return ExitCode::from(2);
            }
        }
        None => print!("{json}"),
    }
    eprint!("{}", report.summary());
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
