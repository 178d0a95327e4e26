//! Single executable exposing the segmentation pipeline:
//! synthesize, segment, render, evaluate, sweep.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evseg_core::Error;

/// Exit codes stable for scripting: 0 success, 2 usage, 3 data,
/// 4 numerical.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Spec(_) | Error::Model(_) => 2,
        Error::Parse { .. }
        | Error::Bounds { .. }
        | Error::Order { .. }
        | Error::Io(_)
        | Error::Shape(_)
        | Error::Depth(_)
        | Error::Degenerate(_)
        | Error::EmptyInput => 3,
        Error::Geometry(_) => 4,
    }
}

#[derive(Parser)]
#[command(
    name = "evseg",
    version,
    about = "Event-camera motion segmentation by iterative contrast maximization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic event stream from a scene file.
    Synth(commands::SynthArgs),
    /// Segment an event file into motion clusters.
    Segment(commands::SegmentArgs),
    /// Score a clusters file against ground truth.
    Eval(commands::EvalArgs),
    /// Render an IWE or MVI image for a fixed motion.
    Render(commands::RenderArgs),
    /// Sweep denoise parameters and tabulate box IoU.
    Sweep(commands::SweepArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::run_synth(&args),
        Command::Segment(args) => commands::run_segment(&args),
        Command::Eval(args) => commands::run_eval(&args),
        Command::Render(args) => commands::run_render(&args),
        Command::Sweep(args) => commands::run_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
