use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cotforge_cli::commands::{self, metrics};
use cotforge_cli::config::ExperimentConfig;
use cotforge_cli::error::{CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "cotforge", version, about = "Three-stage report-generation training pipeline on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat key=value file).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every stage seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for backend calls.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the SFT, RFT, evaluation and cross-evaluation datasets.
    GenCorpus(Common),
    /// Stage 1: supervised fine-tuning of the adapter on report targets.
    Sft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Starting checkpoint; zero weights when absent.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Collect reasoning chains from the teacher backend.
    CollectCot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Keep the collected chains the expert judges consistent.
    FilterCot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage 2: supervised fine-tuning on reasoning-tagged targets.
    SftCot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Stage 3: reinforcement fine-tuning with group-relative advantages.
    Rft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// All stages end to end, plus evaluation.
    Pipeline(Common),
    /// Greedy-decode a dataset with a checkpoint and write a metric CSV.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Model column value.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// The five-variant training-strategy ablation.
    Ablate(Common),
    /// Metrics over user-supplied files.
    Metrics {
        #[command(subcommand)]
        kind: MetricsKind,
    },
}

#[derive(Subcommand)]
enum MetricsKind {
    /// BLEU-1..4, ROUGE-L, METEOR and CIDEr over aligned hypothesis and reference JSONL files.
    Text {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// AUC over JSONL lines of {"label": bool, "score": number}.
    Auc {
        #[arg(long)]
        input: PathBuf,
    },
    /// mIoU and accuracy over JSONL lines of {"pred": [4], "gt": [4]}.
    Iou {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(c) => {
            let h = commands::cmd_gen_corpus(&load(&c.config, c.seed)?, &c.out)?;
            println!("manifest {h}");
        }
        Command::Sft { common: c, data, init } => {
            let h = commands::cmd_sft(&load(&c.config, c.seed)?, &data, init.as_deref(), &c.out)?;
            println!("manifest {h}");
        }
        Command::CollectCot { common: c, data } => {
            let h = commands::cmd_collect_cot(&load(&c.config, c.seed)?, &data, &c.out, c.workers)?;
            println!("manifest {h}");
        }
        Command::FilterCot { common: c, data } => {
            let h = commands::cmd_filter_cot(&load(&c.config, c.seed)?, &data, &c.out, c.workers)?;
            println!("manifest {h}");
        }
        Command::SftCot { common: c, data, init } => {
            let h = commands::cmd_sft_cot(&load(&c.config, c.seed)?, &data, init.as_deref(), &c.out)?;
            println!("manifest {h}");
        }
        Command::Rft { common: c, data, init } => {
            let h = commands::cmd_rft(&load(&c.config, c.seed)?, &data, init.as_deref(), &c.out)?;
            println!("manifest {h}");
        }
        Command::Pipeline(c) => {
            let run = commands::cmd_pipeline(&load(&c.config, c.seed)?, &c.out, c.workers)?;
            println!("kept {} of {} CoT records", run.audit.kept, run.audit.total());
            println!("manifest {}", run.manifest_hash);
        }
        Command::Evaluate {
            config,
            seed,
            checkpoint,
            data,
            out,
            name,
        } => {
            let r = commands::cmd_evaluate(&load(&config, seed)?, &checkpoint, &data, &out, &name)?;
            println!("{}", r.csv_row(&name));
        }
        Command::Ablate(c) => {
            let (h, rows) = commands::cmd_ablate(&load(&c.config, c.seed)?, &c.out, c.workers)?;
            for row in rows {
                println!(
                    "{} {:<11} bleu1 {:.4} r_acc {:.4} r_format {:.4}",
                    row.variant, row.model, row.report.bleu1, row.probe.mean_r_acc, row.probe.mean_r_format
                );
            }
            println!("manifest {h}");
        }
        Command::Metrics { kind } => match kind {
            MetricsKind::Text { hyp, reference } => {
                let r = metrics::text(&hyp, &reference)?;
                println!("{}", cotforge::metrics::REPORT_CSV_HEADER);
                println!("{}", r.csv_row("input"));
            }
            MetricsKind::Auc { input } => println!("auc {:.6}", metrics::auc_file(&input)?),
            MetricsKind::Iou { input, threshold } => {
                let s = metrics::iou_file(&input, threshold)?;
                println!("miou {:.6} acc {:.6}", s.miou, s.acc);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
