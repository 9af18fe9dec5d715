mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semloc::Error;

#[derive(Debug, Parser)]
#[command(name = "semloc", version, about = "Localization against sparse semantic element maps")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, env = "SEMLOC_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, a stereo survey and its ground-truth map.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        frames: usize,
    },
    /// Triangulate stereo observations and merge duplicates into a map.
    MapBuild {
        #[arg(long)]
        stereo: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train encoder weights on a pairs file.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Localize every frame of a pairs file.
    Localize(LocalizeArgs),
    /// Compare estimated poses with ground truth.
    Eval {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the histograms of an evaluation summary as CSV.
    PlotData {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    /// Pairs file with the frames to localize.
    #[arg(long)]
    input: PathBuf,
    /// Poses file to write.
    #[arg(long)]
    out: PathBuf,
    /// World map; each frame then needs a prior and its embedded submap is ignored.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Seed of the untrained weights used when no weights file is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trained weights file.
    #[arg(long)]
    weights_path: Option<PathBuf>,
    /// Submap radius around the prior, meters.
    #[arg(long)]
    crop_radius: Option<f64>,
    /// Entropy weight of the transport solve.
    #[arg(long)]
    sinkhorn_mu: Option<f64>,
    /// RANSAC inlier angle, radians.
    #[arg(long)]
    theta: Option<f64>,
    /// RANSAC iterations.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Length of the prioritized match list.
    #[arg(long)]
    top_k: Option<usize>,
    /// Solve directly when every class has at most one element per side.
    #[arg(long)]
    simple_scene_path: Option<bool>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InsufficientElements { .. } | Error::InsufficientMatches { .. } => 2,
        Error::DegenerateGeometry(_) | Error::DegenerateProblem(_) => 3,
        Error::Config(_) | Error::Schema(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::Config::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth { out, seed, frames } => commands::synth(&cfg, &out, seed, frames),
        Command::MapBuild { stereo, out } => commands::map_build(&cfg, &stereo, &out),
        Command::Train { pairs, out, seed, history } => commands::train(&cfg, &pairs, &out, seed, history.as_deref()),
        Command::Localize(args) => commands::localize(cfg, args),
        Command::Eval { estimates, truth, out } => commands::eval(&cfg, &estimates, &truth, &out),
        Command::PlotData { summary, out } => commands::plot_data(&summary, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semloc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
