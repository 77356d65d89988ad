//! `twinmz` — drives the twin Mach-Zehnder weak-measurement simulation from
//! the command line: full runs, single weak-value readouts, the calibration
//! sweep, two-slit demonstrations and re-plotting from emitted CSVs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "twinmz", version, about = "Twin Mach-Zehnder weak-measurement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment: calibration, three class sweeps, crossing,
    /// frame transform, weak-value extraction and report emission.
    Run(RunArgs),
    /// Weak value, pointer centroid and validity verdict for one class and
    /// coupling strength.
    Weakvalue(WeakValueArgs),
    /// Two-slit wavepacket demonstrations.
    Modular(ModularArgs),
    /// Calibration sweep only.
    Calibrate(RunArgs),
    /// Rebuild figure2.svg from a directory of emitted CSVs and report.json.
    Figure2(Figure2Args),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; defaults mirror the apparatus.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master noise seed; omitting it keeps the run noiseless.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct WeakValueArgs {
    /// Measurement class: 0 (phase window), 1 (open), 2 (dark path blocked).
    #[arg(long)]
    class: u8,
    /// Coupling strength in µm.
    #[arg(long)]
    gamma: f64,
    /// Pointer width in µm.
    #[arg(long, default_value_t = 150.0)]
    sigma: f64,
    /// Override the pre-selected state at the coupling plane: re,im,re,im.
    #[arg(long)]
    pre: Option<String>,
    /// Override the post-selected state at the coupling plane: re,im,re,im.
    #[arg(long)]
    post: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ModularArgs {
    #[command(subcommand)]
    demo: ModularDemo,
}

#[derive(Subcommand)]
enum ModularDemo {
    /// Translation-operator overlaps and folded-momentum uniformity.
    Uncertainty(ModularCommon),
    /// A single translation-operator expectation value.
    Expectation {
        #[command(flatten)]
        common: ModularCommon,
        /// Translation distance; defaults to the slit separation.
        #[arg(long)]
        distance: Option<f64>,
        /// Power of the translation operator.
        #[arg(long, default_value_t = 1)]
        n: u32,
    },
    /// Evolved |psi(x,t)|² on a screen.
    Screen {
        #[command(flatten)]
        common: ModularCommon,
        #[arg(long)]
        time: f64,
        /// Write the sampled pattern to this CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Momentum distribution folded modulo 2π/ℓ.
    Distribution {
        #[command(flatten)]
        common: ModularCommon,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModularCommon {
    /// Use a single packet behind the right slit instead of the superposition.
    #[arg(long)]
    single_packet: bool,
    /// Relative phase of the two-slit superposition in radians.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Slit separation.
    #[arg(long, default_value_t = 20.0)]
    ell: f64,
    /// Packet width.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Highest translation power checked by `uncertainty`.
    #[arg(long, default_value_t = 8)]
    n_max: u32,
    /// Overlap threshold for the complete-uncertainty verdict.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Figure2Args {
    /// Directory holding s0.csv…s2.csv and report.json.
    #[arg(long)]
    dir: PathBuf,
    /// Output SVG path; defaults to figure2.svg inside --dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Weakvalue(args) => commands::weakvalue(args),
        Command::Modular(args) => commands::modular(args.demo),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Figure2(args) => commands::figure2(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
