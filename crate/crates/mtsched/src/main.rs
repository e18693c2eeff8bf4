use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mtsched::ablation::{run_ablation, Suite};
use mtsched::config::ExperimentConfig;
use mtsched::experiment::{finetune_from, run_experiment, ExperimentError, RunMode, CONFIG_FILE};
use mtsched::report::emit_report;
use mtsched::splits_io::{clean_report_csv, load_registry, matrix_csv, save_registry};
use mtsched_core::audit::{clean_registry, compute_overlap_matrix};

#[derive(Parser)]
#[command(name = "mtsched", version, about = "Multi-task scheduling lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test-image overlap matrix of a registry directory.
    Audit {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove every test image from all train and val splits.
    Clean {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Multi-task training, or single-task with --single-task.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        single_task: Option<String>,
        /// Defaults to the config's output_dir, then `runs/<run>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-task training from a multi-task checkpoint.
    Finetune {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        task: String,
        /// Defaults to the config.toml stored next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One multi-task run per variant of a suite.
    Ablate {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/ablations")]
        out: PathBuf,
    },
    /// CSV tables and timelines from completed runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_failure(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        err: err.into(),
    }
}

fn runtime_failure(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        err: err.into(),
    }
}

fn experiment_failure(e: ExperimentError) -> Failure {
    Failure {
        code: e.exit_code() as u8,
        err: e.into(),
    }
}

fn output_dir(explicit: Option<PathBuf>, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    explicit
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(fallback))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Audit { dir, out } => {
            let reg = load_registry(&dir).map_err(config_failure)?;
            let m = compute_overlap_matrix(&reg).map_err(config_failure)?;
            fs::write(&out, matrix_csv(&m))
                .with_context(|| format!("writing {}", out.display()))
                .map_err(runtime_failure)?;
            println!(
                "{} datasets, contaminated cells: {}",
                m.tasks.len(),
                m.cells.iter().flatten().filter(|c| !c.is_zero()).count()
            );
        }
        Command::Clean { dir, out, report } => {
            let reg = load_registry(&dir).map_err(config_failure)?;
            let (clean, rep) = clean_registry(&reg).map_err(config_failure)?;
            save_registry(&clean, &out).map_err(runtime_failure)?;
            fs::write(&report, clean_report_csv(&rep))
                .with_context(|| format!("writing {}", report.display()))
                .map_err(runtime_failure)?;
            println!(
                "removed {} images (union of test sets: {})",
                rep.total_removed(),
                rep.union_test_size
            );
        }
        Command::Train {
            config,
            single_task,
            out,
        } => {
            let cfg = ExperimentConfig::load_with_env(&config).map_err(config_failure)?;
            let (mode, name) = match single_task {
                Some(t) => (RunMode::SingleTask(t.clone()), format!("single_task_{t}")),
                None => (RunMode::MultiTask, "multi_task".to_string()),
            };
            let dir = output_dir(out, &cfg, &name);
            let res = run_experiment(&cfg, &mode, &dir).map_err(experiment_failure)?;
            println!(
                "{}: test average {:.4} -> {}",
                res.run,
                res.test.average,
                dir.display()
            );
        }
        Command::Finetune {
            from,
            task,
            config,
            out,
        } => {
            let config = config.unwrap_or_else(|| from.with_file_name(CONFIG_FILE));
            let cfg = ExperimentConfig::load_with_env(&config).map_err(config_failure)?;
            let dir = out.unwrap_or_else(|| from.with_file_name(format!("finetune_{task}")));
            let res = finetune_from(&from, &cfg, &task, &dir).map_err(experiment_failure)?;
            println!(
                "{}: test average {:.4} -> {}",
                res.run,
                res.test.average,
                dir.display()
            );
        }
        Command::Ablate { suite, config, out } => {
            let cfg = ExperimentConfig::load_with_env(&config).map_err(config_failure)?;
            let res = run_ablation(suite, &cfg, &out).map_err(|e| Failure {
                code: e.exit_code() as u8,
                err: e.into(),
            })?;
            for r in res {
                println!("{suite}/{}: test average {:.4}", r.variant, r.test.average);
            }
        }
        Command::Report { runs, out } => {
            let runs = emit_report(&runs, &out).map_err(runtime_failure)?;
            println!("{} runs -> {}", runs.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
