use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use shaped_pick_cli::commands;
use shaped_pick_core::analysis::Subject;

/// Train and analyze shaped-reward pick-and-place agents.
#[derive(Debug, Parser)]
#[command(name = "shaped-pick", version)]
struct Cli {
    /// Default output root for commands that write files.
    #[arg(long, env = "SHAPED_PICK_RUN_ROOT", global = true)]
    run_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubjectArg {
    Gripper,
    Object,
}

impl From<SubjectArg> for Subject {
    fn from(s: SubjectArg) -> Self {
        match s {
            SubjectArg::Gripper => Subject::Gripper,
            SubjectArg::Object => Subject::Object,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to <run root>/<config stem>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Record greedy episodes from a checkpoint.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config to roll out on; defaults to the checkpoint's run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Output directory; defaults to the run's traces/ directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SubjectArg::Gripper)]
        subject: SubjectArg,
    },
    /// Compare convergence across run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long, default_value_t = 5)]
        window: usize,
        /// Where to write comparison.csv and eval_success_merged.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute trajectory reports for trace CSVs (files or directories).
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = SubjectArg::Gripper)]
        subject: SubjectArg,
    },
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.run_root.unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Train { config, out, seed } => {
            let out = match out {
                Some(o) => o,
                None => {
                    let stem = config
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "run".into());
                    let seed = match seed {
                        Some(s) => s,
                        None => shaped_pick_core::TrainConfig::load(&config)?.seed,
                    };
                    root.join(format!("{stem}-seed{seed}"))
                }
            };
            let metrics = commands::train(&config, &out, seed)?;
            if let Some(last) = metrics.rows.last() {
                println!(
                    "{}: {} epochs, final eval success {}",
                    out.display(),
                    metrics.rows.len(),
                    last.eval_success
                );
            }
        }
        Command::Rollout {
            checkpoint,
            config,
            n,
            out,
            seed,
            subject,
        } => {
            let out = match out {
                Some(o) => o,
                None => checkpoint
                    .parent()
                    .and_then(|p| p.parent())
                    .map(|run| run.join("traces"))
                    .context("cannot infer output directory; pass --out")?,
            };
            let written = commands::rollout(&checkpoint, config.as_deref(), n, &out, seed, subject.into())?;
            println!("wrote {} traces to {}", written.len(), out.display());
        }
        Command::Compare {
            runs,
            threshold,
            window,
            out,
        } => {
            let out = out.unwrap_or(root);
            let (_, table) = commands::compare(&runs, threshold, window, &out)?;
            print!("{table}");
        }
        Command::Analyze {
            traces,
            tol,
            subject,
        } => {
            for (path, report) in commands::analyze(&traces, tol, subject.into())? {
                let steps: Vec<String> = report
                    .attainment_steps
                    .iter()
                    .map(|s| s.map_or_else(|| "-".into(), |v| v.to_string()))
                    .collect();
                println!(
                    "{}: attain x/y/z {} seq {} l1 {:.4} l2 {:.4}",
                    path.display(),
                    steps.join("/"),
                    report
                        .sequentiality_index
                        .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
                    report.l1_path_length,
                    report.l2_path_length
                );
            }
        }
    }
    Ok(())
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
