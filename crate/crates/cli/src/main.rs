use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dassf_cli::bench::{render_table, run_bench};
use dassf_cli::commands;

#[derive(Parser)]
#[command(
    name = "dassf",
    about = "DASSF aerial-detection kernels: forward runs, upsampler benchmark, gradient checks, model inspection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the detector on an image and write detections as text lines
    Forward(ForwardArgs),
    /// Time the upsampling methods on identical inputs
    Bench(BenchArgs),
    /// Finite-difference gradient checks per module
    Gradcheck(GradcheckArgs),
    /// List every named tensor, per-module totals and active toggles
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ForwardArgs {
    /// Model configuration JSON; defaults to the built-in configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight file (mutually exclusive with --seed)
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    /// Deterministic random weights from this seed
    #[arg(long)]
    seed: Option<u64>,
    /// Input image: .ppm (P6) or raw tensor file
    #[arg(long)]
    image: PathBuf,
    /// Output detection text file: `class_id score x1 y1 x2 y2` per line
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated input sizes as CxHxW, e.g. 64x80x80,128x40x40
    #[arg(long, default_value = "64x80x80")]
    sizes: String,
    /// Upsampling factor
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Timed repetitions per method (median reported), at least 5
    #[arg(long, default_value_t = 9)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// tensor-core | dysample | scale-fusion | dyhead | all
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_sizes(s: &str) -> anyhow::Result<Vec<(usize, usize, usize)>> {
    s.split(',')
        .map(|part| {
            let dims: Vec<usize> = part
                .trim()
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow::anyhow!("bad size `{}`, expected CxHxW", part))?;
            match dims[..] {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(anyhow::anyhow!("bad size `{}`, expected CxHxW", part)),
            }
        })
        .collect()
}

fn run() -> anyhow::Result<i32> {
    match Cli::parse().cmd {
        Cmd::Forward(a) => {
            commands::cmd_forward(a.config, a.weights, a.seed, &a.image, &a.out)?;
            Ok(0)
        }
        Cmd::Bench(a) => {
            let sizes = parse_sizes(&a.sizes)?;
            let report = run_bench(&sizes, a.scale, a.repeats, a.seed)?;
            print!("{}", render_table(&report));
            if let Some(path) = a.out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(0)
        }
        Cmd::Gradcheck(a) => commands::cmd_gradcheck(&a.module, a.seed, a.eps),
        Cmd::Inspect(a) => {
            commands::cmd_inspect(a.config, a.weights, a.seed)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
