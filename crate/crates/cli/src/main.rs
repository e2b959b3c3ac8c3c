use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pfedcr_cli::commands;
use pfedcr_cli::{ExperimentConfig, Overrides};
use pfedcr_core::fedsim::Algorithm;

#[derive(Parser)]
#[command(name = "pfedcr", version, about = "Personalized federated CRNN text-line recognition simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// local, local_attention, local_pretrain, fedavg, fedavg_ft, fedprox or pfedcr.
    #[arg(long, global = true)]
    algorithm: Option<Algorithm>,

    /// Frequency-bucket preset: desk or large.
    #[arg(long, global = true)]
    buckets: Option<String>,

    /// Generate the corpus when it is not on disk yet.
    #[arg(long, global = true)]
    generate: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate client corpora and the server's balanced corpus.
    Gen,
    /// Train one algorithm; writes metrics and checkpoints.
    Train,
    /// Re-evaluate a training run's checkpoints.
    Eval,
    /// Run the five-row component ablation.
    Ablate {
        /// Comma-separated seeds; adds mean and spread columns.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        out_dir: cli.out,
        algorithm: cli.algorithm,
        buckets: cli.buckets,
    });
    if let Command::Ablate { seeds } = &cli.command {
        if !seeds.is_empty() {
            cfg.ablation_seeds = seeds.clone();
        }
    }
    cfg.normalize()?;
    match cli.command {
        Command::Gen => {
            let out = commands::gen(&cfg)?;
            println!("wrote {} files to {}", out.files.len(), out.dir.display());
        }
        Command::Train => {
            let out = commands::train(&cfg, cli.generate).context("train")?;
            let r = out.run.final_report();
            for (k, c) in r.clients.iter().enumerate() {
                println!("client {k}: seq_acc {:.4} loss {:.4}", c.seq_acc, c.mean_ctc_loss);
            }
            println!("mean seq_acc {:.4}; outputs in {}", r.mean_accuracy(), out.dir.display());
        }
        Command::Eval => {
            let out = commands::eval(&cfg, cli.generate).context("eval")?;
            println!("mean seq_acc {:.4}; tables in {}", out.report.mean_accuracy(), out.dir.display());
        }
        Command::Ablate { .. } => {
            let out = commands::ablate(&cfg, cli.generate).context("ablate")?;
            for (i, row) in out.doc.tables[0].rows.iter().enumerate() {
                let avgs: Vec<String> = out.doc.tables.iter().map(|t| format!("{:.4}", t.rows[i].average)).collect();
                println!("{:<18} {}", row.label, avgs.join(" "));
            }
            println!("table in {}", out.dir.display());
        }
    }
    Ok(())
}
