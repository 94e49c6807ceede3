use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Twin-beam sub-shot-noise imaging: simulate, calibrate and analyse frame bundles.
#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if needed.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the scene seed (simulate only; analysis is deterministic).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Export format for grids and images.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Pgm,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn pgm(self) -> bool {
        matches!(self, Format::Pgm | Format::Both)
    }
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a frame bundle from a scene.
    Simulate,
    /// Build flat-field gain maps from an object-free bundle.
    Calibrate,
    /// Locate the centre of symmetry by scanning the idler region.
    FindCenter,
    /// Per-frame noise reduction factor at one or more binnings.
    Nrf,
    /// SSNQI, DCI and direct absorption images of an object bundle.
    Image,
    /// SNR of the three schemes per σ class, with theory curves.
    SnrStudy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Calibrate => "calibrate",
            Command::FindCenter => "find-center",
            Command::Nrf => "nrf",
            Command::Image => "image",
            Command::SnrStudy => "snr-study",
        }
    }
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<twinbeam::Error> for Failure {
    fn from(e: twinbeam::Error) -> Self {
        use twinbeam::Error as E;
        let code = match &e {
            E::Config(_) | E::Json { .. } => 2,
            E::InvalidRegime(_) => 4,
            E::Geometry(_)
            | E::NotDivisible { .. }
            | E::ZeroMean
            | E::NoCorrelation { .. }
            | E::Degenerate(_)
            | E::Io { .. }
            | E::Csv { .. } => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub struct Run<'a> {
    pub config_path: &'a Path,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub format: Format,
}

impl Run<'_> {
    /// Resolves a path from the config file relative to the file's directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config(format!("{} needs --config <file>", cli.command.name())))?;
    if !config_path.is_file() {
        return Err(Failure::config(format!(
            "config file {} not found",
            config_path.display()
        )));
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| {
        Failure::from(twinbeam::Error::Io {
            path: cli.out.clone(),
            source: e,
        })
    })?;
    let run = Run {
        config_path,
        out: &cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    match cli.command {
        Command::Simulate => commands::simulate(&run),
        Command::Calibrate => commands::calibrate(&run),
        Command::FindCenter => commands::find_center(&run),
        Command::Nrf => commands::nrf(&run),
        Command::Image => commands::image(&run),
        Command::SnrStudy => commands::snr_study(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("twinbeam {}: {}", cli.command.name(), f.message);
            ExitCode::from(f.code)
        }
    }
}
