//! `grounder`: dataset generation, training, evaluation, ablations and
//! reasoning traces for the grounding engine.
//!
//! Exit status is 0 on success, 2 on a usage or input error and 3 when a
//! run fails numerically.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grounder_core::config::{GraphSelection, Order, RunConfig};
use grounder_core::harness::{self, RunFiles, Splits};
use grounder_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grounder",
    version,
    about = "Graph-based referring expression grounding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sub-expression processing order.
    #[arg(long, global = true, value_parser = parse_order)]
    order: Option<Order>,
    /// Disable dynamic gating; every node stays active.
    #[arg(long, global = true)]
    no_dgc: bool,
    /// Disable box regression; the selected input box is the answer.
    #[arg(long, global = true)]
    no_egr: bool,
    /// Graphs used for matching: a (visual), c (categorical) or both.
    #[arg(long, global = true, value_parser = parse_graphs)]
    graphs: Option<GraphSelection>,
    /// Write per-step gate and weight tables.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write train, val and test splits to the dataset directory.
    Generate,
    /// Train, writing metrics and checkpoints to the output directory.
    Train,
    /// Evaluate a checkpoint on one split.
    Eval {
        /// Defaults to the output directory's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train the DGC/EGR grid and the graph-choice grid and tabulate them.
    Ablate,
    /// Show how a checkpoint reasons about one sample.
    Trace {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Sample index within the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Ask about the sample's scene with a different expression.
        #[arg(long)]
        expression: Option<String>,
    },
    /// Parse an expression with the configured grammar.
    Parse {
        /// Print the parsed graph as indented text.
        #[arg(long)]
        dump: String,
    },
}

fn parse_order(s: &str) -> std::result::Result<Order, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_graphs(s: &str) -> std::result::Result<GraphSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Overrides {
    fn load(&self, required: bool) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None if required => return Err(Error::Usage("--config <path> is required".into())),
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(order) = self.order {
            config.order = order;
        }
        if let Some(graphs) = self.graphs {
            config.graphs = graphs;
        }
        config.dgc &= !self.no_dgc;
        config.egr &= !self.no_egr;
        config.validate()?;
        Ok(config)
    }
}

fn final_checkpoint(config: &RunConfig, path: Option<PathBuf>) -> PathBuf {
    path.unwrap_or_else(|| {
        RunFiles {
            dir: config.output_dir.clone(),
            per_epoch: false,
        }
        .checkpoint()
    })
}

fn run(cli: Cli) -> Result<()> {
    let o = &cli.overrides;
    match cli.command {
        Command::Generate => {
            let config = o.load(true)?;
            let summary = harness::cmd_generate(&config)?;
            println!("config {}", summary.config_hash);
            for (path, n) in summary.files {
                println!("{} samples -> {}", n, path.display());
            }
        }
        Command::Train => {
            let config = o.load(true)?;
            let summary = harness::cmd_train(&config)?;
            println!("config {}", summary.config_hash);
            println!("split epoch loss_ce loss_reg acc@0.5 acc_raw_box mean_iou");
            let last = summary.rows.last().map_or(0, |r| r.epoch);
            for r in summary.rows.iter().filter(|r| r.epoch == last) {
                println!(
                    "{} {} {:.4} {:.4} {:.4} {:.4} {:.4}",
                    r.split, r.epoch, r.loss_ce, r.loss_reg, r.acc_at_05, r.acc_raw_box, r.mean_iou
                );
            }
            println!(
                "metrics -> {}",
                config.output_dir.join("metrics.csv").display()
            );
            if o.trace {
                harness::cmd_eval(&config, None, "test", true)?;
                println!("traces -> {}", config.output_dir.display());
            }
        }
        Command::Eval { checkpoint, split } => {
            let config = o.load(true)?;
            let s = harness::cmd_eval(&config, checkpoint.as_deref(), &split, o.trace)?;
            let m = s.report.metrics;
            println!("config {} checkpoint {}", s.config_hash, s.checkpoint_hash);
            println!("split {} samples {}", s.split, m.count);
            println!("loss_ce {:.6}", s.report.loss_ce);
            println!("loss_reg {:.6}", s.report.loss_reg);
            println!("acc@0.5 {:.4}", m.acc_at_05);
            println!("acc_raw_box {:.4}", m.acc_raw_box);
            println!("mean_iou {:.4}", m.mean_iou);
            println!("mean_raw_iou {:.4}", m.mean_raw_iou);
            println!("selection_accuracy {:.4}", m.selection_accuracy);
        }
        Command::Ablate => {
            let config = o.load(true)?;
            let summary = harness::cmd_ablate(&config)?;
            print!("{}", summary.table());
        }
        Command::Trace {
            checkpoint,
            split,
            index,
            expression,
        } => {
            let config = o.load(true)?;
            let data = Splits::load(&config)?;
            let samples = data.get(&split)?;
            let mut sample = samples
                .get(index)
                .ok_or_else(|| {
                    Error::Usage(format!(
                        "index {index} out of range for {split} ({} samples)",
                        samples.len()
                    ))
                })?
                .clone();
            if let Some(e) = expression {
                sample.truth.expression = e;
            }
            let path = final_checkpoint(&config, checkpoint);
            let summary = harness::cmd_trace(&config, &path, &sample)?;
            print!("{}", summary.render());
        }
        Command::Parse { dump } => {
            let config = o.load(false)?;
            print!("{}", harness::parse_dump(&config, &dump)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.is_numeric() {
                eprintln!("grounder: numeric failure: {e}");
            } else {
                eprintln!("grounder: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
