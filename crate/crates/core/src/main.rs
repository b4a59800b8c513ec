use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use streamlearn::experiment::{run_experiment, ExperimentConfig, RunOptions};
use streamlearn::feature_io::{gen_synthetic_gaussian, gen_synthetic_holdout, load_dataset, save_dataset, SyntheticSpec};
use streamlearn::metrics::relative_improvement;
use streamlearn::offline_linear::{evaluate_topk, train_linear_offline, OfflineTrainConfig};
use streamlearn::{Error, Result};

#[derive(Parser)]
#[command(name = "streamlearn", version, about = "Online continual learning over embedding files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian dataset in FSET format.
    Gen {
        #[arg(long, default_value_t = 20)]
        num_classes: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        examples_per_class: usize,
        #[arg(long, default_value_t = 4.0)]
        class_separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a held-out set drawn from the same class means.
        #[arg(long, requires = "eval_per_class")]
        eval_out: Option<PathBuf>,
        #[arg(long)]
        eval_per_class: Option<usize>,
    },
    /// Run a pre-train + stream experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a post-init learner snapshot instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the post-init snapshot and exit.
        #[arg(long)]
        stop_after_init: bool,
    },
    /// Offline linear evaluation: train a softmax head and report top-k accuracy.
    EvalOffline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        /// Comma-separated decay epochs.
        #[arg(long, default_value = "60,80")]
        decay_epochs: String,
        #[arg(long, default_value_t = 1e-5)]
        weight_decay: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the trained head snapshot here.
        #[arg(long)]
        head_out: Option<PathBuf>,
    },
    /// Relative final top-1 improvement of each run over the first.
    Report {
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Deserialize)]
struct ReportSummary {
    final_top1: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            num_classes,
            dim,
            examples_per_class,
            class_separation,
            noise_scale,
            seed,
            out,
            eval_out,
            eval_per_class,
        } => {
            let spec = SyntheticSpec {
                num_classes,
                dim,
                examples_per_class,
                class_separation,
                noise_scale,
                seed,
            };
            save_dataset(&gen_synthetic_gaussian(&spec)?, &out)?;
            if let (Some(path), Some(n)) = (eval_out, eval_per_class) {
                save_dataset(&gen_synthetic_holdout(&spec, n)?, &path)?;
            }
        }
        Command::Run {
            config,
            overrides,
            resume,
            stop_after_init,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            for o in &overrides {
                cfg.set_pair(o)?;
            }
            let outcome = run_experiment(
                &cfg,
                &RunOptions {
                    resume_from: resume,
                    stop_after_init,
                },
            )?;
            match outcome.report {
                Some(r) => println!(
                    "{{\"output_dir\":{:?},\"final_top1\":{},\"final_top5\":{},\"average_top5\":{}}}",
                    outcome.output_dir.display().to_string(),
                    r.final_top1,
                    r.final_top5,
                    r.average_top5
                ),
                None => println!("{{\"output_dir\":{:?},\"stopped\":\"after_init\"}}", outcome.output_dir.display().to_string()),
            }
        }
        Command::EvalOffline {
            train,
            eval,
            k,
            epochs,
            batch_size,
            lr,
            decay_epochs,
            weight_decay,
            seed,
            head_out,
        } => {
            let decay_epochs = decay_epochs
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad decay epoch {s:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            let cfg = OfflineTrainConfig {
                epochs,
                batch_size,
                learning_rate: lr,
                decay_epochs,
                decay_factor: 10.0,
                weight_decay,
                seed,
            };
            let train_ds = load_dataset(&train)?;
            let eval_ds = load_dataset(&eval)?;
            let head = train_linear_offline(&train_ds, &cfg)?;
            let acc = evaluate_topk(&head, &eval_ds, k, None)?;
            if let Some(p) = head_out {
                head.save(&p)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "k": k,
                    "accuracy": acc,
                    "train_examples": train_ds.len(),
                    "eval_examples": eval_ds.len(),
                    "epochs": epochs,
                    "seed": seed,
                })
            );
        }
        Command::Report { inputs } => {
            let mut rows = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let s: ReportSummary = serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
                rows.push((path, s.final_top1));
            }
            let baseline = rows[0].1;
            println!("input,final_top1,relative_improvement_pct");
            for (path, top1) in rows {
                let rel = relative_improvement(top1, baseline)?;
                println!("{},{},{:.4}", path.display(), top1, rel);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid usage");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", e.kind(), line);
            ExitCode::FAILURE
        }
    }
}
