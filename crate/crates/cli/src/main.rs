//! `polyclosure` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on validation failures (bad flags, invariant
//! violations, coverage errors), 2 on I/O failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polyclosure::protocol::{DEFAULT_MARGIN, DEFAULT_VERTEX_REPORT_REMOVAL};
use polyclosure::RotationScheme;

#[derive(Debug, Parser)]
#[command(name = "polyclosure", version, about = "Incomplete-polygon closure benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the training split and the ten test splits with manifests.
    Generate(GenerateArgs),
    /// Fit the nearest-template baseline and write prediction files.
    Baseline(BaselineArgs),
    /// Score prediction files and write closure reports.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    /// Square canvas edge in pixels.
    #[arg(long, default_value_t = 224)]
    canvas_size: u32,
    /// Polygon circumradius in pixels.
    #[arg(long, default_value_t = 80.0)]
    radius: f64,
    #[arg(long, default_value_t = 2.0)]
    stroke_width: f64,
    #[arg(long, default_value_t = RotationScheme::Uniform15)]
    rotation_scheme: RotationScheme,
    #[arg(long)]
    workers: Option<usize>,
    /// Antialiased strokes (images are no longer two-valued).
    #[arg(long)]
    antialias: bool,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Dataset root written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for prediction files [default: <dataset>/predictions/baseline].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory holding test_00.csv .. test_90.csv.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    model: String,
    /// Report directory [default: <dataset>/reports/<model>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accuracy margin above chance required for sustained closure.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    /// Removal level used for the per-side-count table.
    #[arg(long, default_value_t = DEFAULT_VERTEX_REPORT_REMOVAL)]
    removal_for_vertex_report: u8,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&commands::GenerateOptions {
            out: a.out,
            canvas_size: a.canvas_size,
            radius: a.radius,
            stroke_width: a.stroke_width,
            rotation_scheme: a.rotation_scheme,
            workers: a.workers,
            antialias: a.antialias,
        }),
        Command::Baseline(a) => {
            let out = a.out.unwrap_or_else(|| a.dataset.join("predictions").join("baseline"));
            commands::baseline(&a.dataset, &out, a.workers)
        }
        Command::Score(a) => {
            let out = a.out.unwrap_or_else(|| a.dataset.join("reports").join(&a.model));
            commands::score(&commands::ScoreOptions {
                dataset: a.dataset,
                predictions: a.predictions,
                model: a.model,
                out,
                margin: a.margin,
                vertex_removal: a.removal_for_vertex_report,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
