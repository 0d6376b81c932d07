use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use counterpoint::pipeline::{emit_plotdata, run_pipeline, PlotKind, RunConfig, Stage};
use counterpoint::synth::{gen_dataset, SynthParams};

/// Recover off-chain prices from on-chain activity.
#[derive(Debug, Parser)]
#[command(name = "counterpoint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct StageArgs {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load raw CSVs (or replay adapters) into the output directory.
    Ingest(StageArgs),
    /// Derive the hourly feature matrix.
    Features(StageArgs),
    /// Estimate the stability graph of partial correlations.
    Graph(StageArgs),
    /// Mutual information of smoothed features against price.
    Mi(StageArgs),
    /// Rolling evaluation and the final model.
    Train(StageArgs),
    /// Quantize the final forest to the integer mapping table.
    Export(StageArgs),
    /// Every stage in order, then plot data.
    All(StageArgs),
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        /// Generator parameters (TOML); defaults otherwise.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hours: Option<usize>,
    },
    /// Turn an artifact into a tidy CSV for plotting.
    Plot {
        /// pred_vs_actual, mi_bars or graph_edges.
        kind: String,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn run_stage(stage: Stage, args: StageArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.configured_out_dir())
        .unwrap_or_else(|| PathBuf::from("out"));
    let written = run_pipeline(&cfg, stage, &out)?;
    log::info!("{} files written under {}", written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => run_stage(Stage::Ingest, a),
        Command::Features(a) => run_stage(Stage::Features, a),
        Command::Graph(a) => run_stage(Stage::Graph, a),
        Command::Mi(a) => run_stage(Stage::Mi, a),
        Command::Train(a) => run_stage(Stage::Train, a),
        Command::Export(a) => run_stage(Stage::Export, a),
        Command::All(a) => run_stage(Stage::All, a),
        Command::Synth {
            out,
            config,
            seed,
            hours,
        } => {
            let mut p = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str::<SynthParams>(&text).map_err(|e| {
                        counterpoint::Error::Config(format!("{}: {e}", path.display()))
                    })?
                }
                None => SynthParams::default(),
            };
            if let Some(seed) = seed {
                p.seed = seed;
            }
            if let Some(hours) = hours {
                p.hours = hours;
            }
            for f in gen_dataset(&p, &out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Plot {
            kind,
            input,
            output,
        } => {
            let kind: PlotKind = kind.parse()?;
            emit_plotdata(kind, &input, &output)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already carry their causes in the message.
            match e.downcast_ref::<counterpoint::Error>() {
                Some(core) => {
                    eprintln!("error: {core}");
                    ExitCode::from(if core.is_validation() { 1 } else { 2 })
                }
                None => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
