//! Command-line entry point for the forecasting pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tides::error::TidesError;
use tides_cli::config::PipelineConfig;
use tides_cli::pipeline::{self, EvalOptions, TrainOptions};

#[derive(Parser)]
#[command(name = "tides", version, about = "Desk-scale wireless traffic forecasting")]
struct Cli {
    /// Master RNG seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city of traffic series.
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        regions: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        spatial_corr: Option<f64>,
    },
    /// Group regions into zones by traffic pattern and geography.
    Cluster {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        k_clusters: Option<usize>,
        #[arg(long)]
        knn: Option<usize>,
    },
    /// Train one model per zone.
    Train {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out/clusters.csv")]
        clusters: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Train only this zone index.
        #[arg(long)]
        cluster: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Train the DLinear baseline instead of the main model.
        #[arg(long)]
        baseline_dlinear: bool,
        /// Ablation: sever inter-region attention (self-only mask).
        #[arg(long)]
        isolate_regions: bool,
    },
    /// Score checkpoints (or external forecasts) on the test split.
    Evaluate {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "out/clusters.csv")]
        clusters: PathBuf,
        #[arg(long, default_value = "out")]
        model_dir: PathBuf,
        #[arg(long, default_value = "out/eval")]
        out: PathBuf,
        /// Zone whose checkpoint to apply (cross-zone transfer).
        #[arg(long)]
        train_zone: Option<usize>,
        /// Zone whose regions to evaluate on (cross-zone transfer).
        #[arg(long)]
        eval_zone: Option<usize>,
        /// CSV of third-party forecasts to score instead of a checkpoint.
        #[arg(long)]
        external_predictions: Option<PathBuf>,
    },
    /// Print a text summary of an evaluation directory.
    Report {
        #[arg(long, default_value = "out/eval")]
        eval: PathBuf,
    },
}

fn run(cli: Cli) -> tides::error::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Synth { out, regions, days, spatial_corr } => {
            if let Some(n) = regions {
                cfg.synth.regions = n;
            }
            if let Some(d) = days {
                cfg.synth.days = d;
            }
            if let Some(c) = spatial_corr {
                cfg.synth.spatial_corr = c;
            }
            pipeline::run_synth(&cfg, &out)
        }
        Command::Cluster { data, out, k_clusters, knn } => {
            if let Some(k) = k_clusters {
                cfg.cluster.k_clusters = k;
            }
            if let Some(k) = knn {
                cfg.cluster.knn = k;
            }
            pipeline::run_cluster(&cfg, &data, &out)
        }
        Command::Train {
            data,
            clusters,
            out,
            cluster,
            epochs,
            lr,
            baseline_dlinear,
            isolate_regions,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.train.lr = lr;
            }
            let opts = TrainOptions { cluster, baseline_dlinear, isolate_regions };
            pipeline::run_train(&cfg, &data, &clusters, &out, &opts)
        }
        Command::Evaluate {
            data,
            clusters,
            model_dir,
            out,
            train_zone,
            eval_zone,
            external_predictions,
        } => {
            let opts = EvalOptions { train_zone, eval_zone, external_predictions };
            pipeline::run_evaluate(&cfg, &data, &clusters, &model_dir, &out, &opts)
        }
        Command::Report { eval } => {
            print!("{}", pipeline::run_report(&eval)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ TidesError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
