use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use scatter_superres::config::ExperimentConfig;
use scatter_superres::pipeline::{Run, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Simulate,
    LearnDict,
    Cluster,
    OrderGrid,
    Image,
    Evaluate,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Simulate => Stage::Simulate,
            StageArg::LearnDict => Stage::LearnDict,
            StageArg::Cluster => Stage::Cluster,
            StageArg::OrderGrid => Stage::OrderGrid,
            StageArg::Image => Stage::Image,
            StageArg::Evaluate => Stage::Evaluate,
        }
    }
}

/// Simulate scattered array data, learn and order the sensing matrix, and image.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Stages to run, in order. Defaults to the `stages` list of the config.
    #[arg(value_enum)]
    stages: Vec<StageArg>,
    /// TOML configuration file; missing keys take the full-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Run directory.
    #[arg(long, env = "SCATTER_SUPERRES_OUT", default_value = "runs/default")]
    out: PathBuf,
    #[arg(long)]
    seed_medium: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    /// Worker threads; 1 gives fully deterministic runs.
    #[arg(long)]
    workers: Option<usize>,
    /// Input overriding the default artifact of cluster (pool manifest),
    /// order-grid (dictionary CMX) or image (measurement CMX).
    #[arg(long)]
    stage_input: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> scatter_superres::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| scatter_superres::Error::InvalidArgument(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => match cli.preset {
            Preset::Full => ExperimentConfig::full(),
            Preset::Desk => ExperimentConfig::desk(),
        },
    };
    if let Some(s) = cli.seed_medium {
        config.seeds.medium = s;
    }
    if let Some(s) = cli.seed_data {
        config.seeds.data = s;
    }
    let stages: Vec<Stage> = if cli.stages.is_empty() {
        config.stages.iter().map(|s| s.parse()).collect::<scatter_superres::Result<_>>()?
    } else {
        cli.stages.into_iter().map(Stage::from).collect()
    };
    if stages.is_empty() {
        return Err(scatter_superres::Error::InvalidArgument("no stages requested".into()));
    }
    let mut run = Run::new(config, &cli.out)?;
    run.stage_input = cli.stage_input;
    run.run(&stages)?;
    println!("{}", run.dir.join("manifest.json").display());
    Ok(())
}
