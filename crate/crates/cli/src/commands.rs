use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use shaped_pick_core::agent::{DdpgAgent, Greedy};
use shaped_pick_core::analysis::{self, Subject, TrajectoryReport};
use shaped_pick_core::rng::{label, stream};
use shaped_pick_core::rollout::rollout as run_episode;
use shaped_pick_core::trainer::{self, convergence_epoch, RunDir, RunMetrics, TrainConfig};
use shaped_pick_core::Error;

/// Loads `config_path`, applies the seed override, trains, and writes the run
/// directory at `out_dir`.
pub fn train(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<RunMetrics> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = trainer::run(&config, Some(out_dir))
        .with_context(|| format!("training run in {}", out_dir.display()))?;
    Ok(outcome.metrics)
}

/// Config for a checkpoint: explicit path, else the run directory's
/// `config.json` two levels above `checkpoints/epoch_<N>.json`.
fn config_for_checkpoint(checkpoint: &Path, config: Option<&Path>) -> Result<TrainConfig> {
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .and_then(Path::parent)
            .map(|run| RunDir::new(run).config())
            .context("cannot locate config.json for checkpoint; pass --config")?,
    };
    Ok(TrainConfig::load(&path)?)
}

/// Records `n` greedy episodes from a checkpoint as trace CSVs plus report
/// JSONs. Returns the written trace paths.
pub fn rollout(
    checkpoint: &Path,
    config: Option<&Path>,
    n: usize,
    out_dir: &Path,
    seed: u64,
    subject: Subject,
) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let agent = DdpgAgent::from_json(&text)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let config = config_for_checkpoint(checkpoint, config)?;
    if agent.task != config.task {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: checkpoint was trained on the {} task but the config selects {}",
            agent.task.name(),
            config.task.name()
        ))
        .into());
    }
    let env = config.env()?;
    let tol = config.reward.success_threshold;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, &[label::ROLLOUT_CMD, i as u64]);
        let episode = run_episode(&env, &config.reward, &Greedy(&agent), &mut rng)?;
        let trace_path = out_dir.join(format!("trace_{i:03}.csv"));
        analysis::export_trace(&episode.trace, &trace_path)?;
        write_report(&analysis::report(&episode.trace, tol, subject), &trace_path)?;
        written.push(trace_path);
    }
    Ok(written)
}

fn report_path(trace: &Path) -> PathBuf {
    trace.with_extension("report.json")
}

fn write_report(report: &TrajectoryReport, trace: &Path) -> Result<()> {
    let path = report_path(trace);
    fs::write(&path, serde_json::to_string_pretty(report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Expands directories into their `*.csv` trace files (sorted).
fn collect_traces(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("listing {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

/// Re-runs the trajectory diagnostics over existing trace CSVs, writing a
/// report JSON next to each.
pub fn analyze(inputs: &[PathBuf], tol: f64, subject: Subject) -> Result<Vec<(PathBuf, TrajectoryReport)>> {
    if !(tol > 0.0) {
        bail!("--tol must be positive, got {tol}");
    }
    let mut out = Vec::new();
    for path in collect_traces(inputs)? {
        let trace = analysis::import_trace(&path)?;
        let report = analysis::report(&trace, tol, subject);
        write_report(&report, &path)?;
        out.push((path, report));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub name: String,
    pub convergence_epoch: Option<usize>,
    pub final_eval_success: Option<f64>,
    pub mean_sequentiality: Option<f64>,
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn mean_sequentiality(dir: &RunDir) -> Result<Option<f64>> {
    let traces = dir.traces();
    if !traces.is_dir() {
        return Ok(None);
    }
    let mut values = Vec::new();
    for entry in fs::read_dir(&traces).with_context(|| format!("listing {}", traces.display()))? {
        let path = entry?.path();
        if !path.to_string_lossy().ends_with(".report.json") {
            continue;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report: TrajectoryReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        values.extend(report.sequentiality_index);
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Builds the convergence table across runs and writes `comparison.csv` and
/// `eval_success_merged.csv` into `out_dir`. Returns the rows and the
/// rendered table.
pub fn compare(run_dirs: &[PathBuf], threshold: f64, window: usize, out_dir: &Path) -> Result<(Vec<CompareRow>, String)> {
    if run_dirs.is_empty() {
        bail!("compare needs at least one run directory");
    }
    if window == 0 || !(threshold > 0.0 && threshold <= 1.0) {
        bail!("--window must be >= 1 and --threshold in (0, 1]");
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for dir in run_dirs {
        let rd = RunDir::new(dir);
        let metrics_path = rd.metrics();
        if !metrics_path.is_file() {
            bail!("missing metrics file {}", metrics_path.display());
        }
        let metrics = RunMetrics::load(&metrics_path)?;
        let eval = metrics.eval_series();
        rows.push(CompareRow {
            name: run_name(dir),
            convergence_epoch: convergence_epoch(&eval, threshold, window),
            final_eval_success: eval.last().copied(),
            mean_sequentiality: mean_sequentiality(&rd)?,
        });
        series.push(eval);
    }

    let mut table = String::new();
    let name_width = rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let _ = writeln!(
        table,
        "{:<name_width$}  {:>11}  {:>10}  {:>13}",
        "run", "convergence", "final_eval", "sequentiality"
    );
    let mut csv = String::from("run,convergence_epoch,final_eval_success,mean_sequentiality\n");
    for r in &rows {
        let seq = r.mean_sequentiality.map(|s| format!("{s:.4}"));
        let _ = writeln!(
            table,
            "{:<name_width$}  {:>11}  {:>10}  {:>13}",
            r.name,
            fmt_opt(r.convergence_epoch),
            fmt_opt(r.final_eval_success),
            fmt_opt(seq)
        );
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.name,
            fmt_opt(r.convergence_epoch),
            fmt_opt(r.final_eval_success),
            fmt_opt(r.mean_sequentiality)
        );
    }

    let mut merged = String::from("epoch");
    for r in &rows {
        merged.push(',');
        merged.push_str(&r.name);
    }
    merged.push('\n');
    let epochs = series.iter().map(Vec::len).max().unwrap_or(0);
    for e in 0..epochs {
        merged.push_str(&e.to_string());
        for s in &series {
            merged.push(',');
            if let Some(v) = s.get(e) {
                merged.push_str(&v.to_string());
            }
        }
        merged.push('\n');
    }

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (name, body) in [("comparison.csv", &csv), ("eval_success_merged.csv", &merged)] {
        let path = out_dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok((rows, table))
}
