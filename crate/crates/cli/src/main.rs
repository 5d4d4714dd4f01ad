//! `cfwgan`: train and evaluate the CFWGAN-GP recommender and its
//! baselines from flat key-value configs.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfwgan_core::dataio::DatasetFormat;
use cfwgan_core::error::Error;
use cfwgan_core::evaluation::MetricsReport;
use cfwgan_core::experiment::{
    comparison_csv, evaluate_checkpoint, load_config, run_experiment, RunConfig,
};

#[derive(Parser)]
#[command(name = "cfwgan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation; 1 is the deterministic reference.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the config, evaluate, and write reports + checkpoint.
    Train(ConfigArgs),
    /// Re-evaluate a saved checkpoint on the config's test split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to load; defaults to <out_dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rewrite the comparison table for an existing final metrics file.
    Compare {
        /// final.csv produced by a train run.
        #[arg(long)]
        r#final: PathBuf,
        /// Dataset the run used (ml100k or ml1m).
        #[arg(long)]
        dataset: String,
        /// Where to write comparison.csv (defaults next to final.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_overrides(mut cfg: RunConfig, args: &ConfigArgs) -> RunConfig {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.gan.seed = seed;
        cfg.mlc.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label}: P@5={:.4} P@20={:.4} R@5={:.4} R@20={:.4} N@5={:.4} N@20={:.4} \
         (evaluated {}, skipped {})",
        r.p5, r.p20, r.r5, r.r20, r.n5, r.n20, r.evaluated, r.skipped
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = apply_overrides(load_config(&args.config)?, &args);
            println!(
                "training {} on {} (seed {}) -> {}",
                cfg.model.name(),
                cfg.dataset_path.display(),
                cfg.seed,
                cfg.out_dir.display()
            );
            let outcome = run_experiment(&cfg)?;
            if let Some(r) = &outcome.trainonly_report {
                print_report("test (train-only model)", r);
            }
            print_report("test (final model)", &outcome.final_report);
            println!(
                "best validation epoch {}; artifacts in {}",
                outcome.best_epoch,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = apply_overrides(load_config(&config.config)?, &config);
            let ckpt_path = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
            let report = evaluate_checkpoint(&cfg, &ckpt_path)?;
            print_report("test (checkpoint)", &report);
            Ok(())
        }
        Command::Compare {
            r#final,
            dataset,
            out,
        } => {
            let format = DatasetFormat::parse_name(&dataset)?;
            let text = std::fs::read_to_string(&r#final)?;
            let line = text.lines().nth(1).ok_or_else(|| {
                Error::Config(format!("{} has no data row", r#final.display()))
            })?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Config(format!(
                    "{} is not a final metrics file",
                    r#final.display()
                )));
            }
            let parse = |i: usize| -> Result<f64, Error> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad metric field '{}'", fields[i])))
            };
            let report = MetricsReport {
                p5: parse(2)?,
                p20: parse(3)?,
                r5: parse(4)?,
                r20: parse(5)?,
                n5: parse(6)?,
                n20: parse(7)?,
                evaluated: 0,
                skipped: 0,
            };
            let csv = comparison_csv(format, fields[0], &report);
            let out_path =
                out.unwrap_or_else(|| r#final.with_file_name("comparison.csv"));
            std::fs::write(&out_path, csv)?;
            println!("wrote {}", out_path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
