use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiqa::{commands, Failure, RunConfig};

#[derive(Parser)]
#[command(name = "hiqa", version, about = "Reasoning-aligned image quality assessment training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML). Every key is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set grpo.learning_rate=2.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check an annotation JSONL file; exits 1 if any line is rejected.
    Validate {
        data: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rating statistics and scale/quality correlations of an annotation file.
    Stats {
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Also write the correlation table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// ROUGE-1 recall of a candidate text file against a reference text file.
    Rouge { reference: PathBuf, candidate: PathBuf },
    /// Reward breakdown of one transcript.
    Reward {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Ground-truth rating on the raw scale.
        #[arg(long)]
        truth: f64,
        /// Caption-only transcript supplying the self-consistency rating.
        #[arg(long)]
        caption_only: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the policy on the synthetic corpus.
    Train {
        /// Run directory; falls back to `out_dir` from the config.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a snapshot on held-out samples, or score a predictions file.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        snapshot: Option<PathBuf>,
        /// JSONL with sample_id, ground_truth, predicted, caption_only_predicted,
        /// candidate_text, reference_text.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Directory for predictions.jsonl and metrics.json.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Also write the metrics table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { data, cfg } => {
            let report = commands::validate(&data, &cfg.load()?.dataset)?;
            print!("{}", commands::render_validation(&report));
            if !report.rejected.is_empty() {
                return Err(Failure::Validation(format!("{} line(s) rejected", report.rejected.len())));
            }
        }
        Command::Stats { data, top, csv, json: as_json, cfg } => {
            let report = commands::stats(&data, &cfg.load()?.dataset, top)?;
            if let Some(p) = csv {
                std::fs::write(&p, commands::stats_csv(&report))
                    .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            }
            if as_json {
                println!("{}", json(&report)?);
            } else {
                print!("{}", commands::render_stats(&report));
            }
        }
        Command::Rouge { reference, candidate } => {
            println!("{}", json(&commands::rouge(&reference, &candidate)?)?);
        }
        Command::Reward {
            transcript,
            reference,
            truth,
            caption_only,
            cfg,
        } => {
            let report = commands::reward(&cfg.load()?, &transcript, &reference, truth, caption_only.as_deref())?;
            println!("{}", json(&report)?);
        }
        Command::Train { out, cfg } => {
            let config = cfg.load()?;
            let dir = commands::run_dir(&config, out.as_deref())?;
            let summary = commands::train(&config, &dir)?;
            println!("{}", summary.dir.join(commands::FINAL_SNAPSHOT).display());
        }
        Command::Eval {
            snapshot,
            predictions,
            out,
            csv,
            json: as_json,
            cfg,
        } => {
            let metrics = match (snapshot, predictions) {
                (_, Some(p)) => commands::eval_predictions(&p)?,
                (Some(s), None) => {
                    let outcome = commands::eval_snapshot(&cfg.load()?, &s)?;
                    if let Some(dir) = out {
                        commands::write_eval(&dir, &outcome)?;
                    }
                    outcome.metrics
                }
                (None, None) => unreachable!("clap requires --snapshot or --predictions"),
            };
            if let Some(p) = csv {
                std::fs::write(&p, commands::metrics_csv(&metrics))
                    .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            }
            if as_json {
                println!("{}", json(&metrics)?);
            } else {
                print!("{}", commands::render_metrics(&metrics));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are config failures; help and version are not errors.
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
