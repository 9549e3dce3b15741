use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pht_core::harness::{self, ExperimentConfig, HarnessError};
use pht_core::partition::PartitionSpec;

/// Distributed skin lesion classification experiments: institutional
/// incremental learning, federated averaging and a centralized baseline
/// over simulated stations.
#[derive(Parser)]
#[command(name = "pht", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Master seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Partition a `filename,label` CSV into test and station shards.
    Partition {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 3)]
        stations: u32,
        #[arg(long = "test-frac", default_value_t = 0.2)]
        test_frac: f64,
        #[arg(long = "val-frac", default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory that receives `partition.json`.
        #[arg(long, default_value = ".")]
        output: PathBuf,
    },
    /// Tabulate final test metrics from two or more `*_summary.json` files.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output, seed } => run(&config, output, seed),
        Command::Partition { labels, stations, test_frac, val_frac, seed, output } => {
            let spec = PartitionSpec { test_fraction: test_frac, station_count: stations, validation_fraction: val_frac, seed };
            partition(&labels, &spec, &output)
        }
        Command::Compare { summaries } => compare(&summaries),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(path: &Path, output: Option<PathBuf>, seed: Option<u64>) -> Result<(), HarnessError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let output = output.unwrap_or_else(|| config.output.directory.clone());
    let report = harness::run_experiment(config, &output)?;
    for file in &report.files {
        println!("wrote {}", file.display());
    }
    if report.summaries.len() >= 2 {
        print!("{}", harness::compare(&report.summaries)?);
    }
    Ok(())
}

fn partition(labels: &Path, spec: &PartitionSpec, output: &Path) -> Result<(), HarnessError> {
    let partition = harness::partition_labels(labels, spec)?;
    let runtime = |e: std::io::Error| HarnessError::Runtime(e.to_string());
    std::fs::create_dir_all(output).map_err(runtime)?;
    let path = output.join("partition.json");
    let mut json = partition.to_json().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    json.push('\n');
    std::fs::write(&path, json).map_err(runtime)?;
    println!("test: {}", partition.test.len());
    for shard in &partition.stations {
        println!("{}: {} (train {}, validation {})", shard.id, shard.len(), shard.train.len(), shard.validation.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(paths: &[PathBuf]) -> Result<(), HarnessError> {
    let summaries = paths.iter().map(|p| harness::load_summary(p)).collect::<Result<Vec<_>, _>>()?;
    print!("{}", harness::compare(&summaries)?);
    Ok(())
}
