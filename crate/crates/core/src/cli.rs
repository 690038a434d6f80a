//! The `rtentropy` command line.
//!
//! Every subcommand writes its primary output to a file or stdout and its
//! diagnostics to stderr. [`run`] takes the streams explicitly so tests can
//! drive it in-process.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::c45::{TrainConfig, TreeModel};
use crate::dataset::{self, Class, Dataset, FeatureRow, SmoteConfig};
use crate::entropy::{self, EntropyFeatures};
use crate::metrics::{self, CvConfig, SmoteMode, SweepRow};
use crate::synthload::{self, FaultSpec, WorkloadSpec};
use crate::trace::{self, BalanceMode, RootSplitter};

#[derive(Debug, Parser)]
#[command(name = "rtentropy", version, about = "Runtime-entropy failure detection from execution traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute (h_a, h_b, h) for every trace file in a directory.
    Featurize(FeaturizeArgs),
    /// Generate synthetic traces with optional fault injection.
    Synth(SynthArgs),
    /// Oversample the minority class of a feature CSV.
    Smote(SmoteArgs),
    /// Train a decision tree on a labeled feature CSV.
    Train(TrainArgs),
    /// Classify the rows of a feature CSV with a trained model.
    Predict(PredictArgs),
    /// Cross-validate over a list of M values, with and without SMOTE.
    Sweep(SweepArgs),
    /// Classify each completed root invocation read from stdin.
    Stream(StreamArgs),
}

fn parse_min_leaf(s: &str) -> Result<usize, String> {
    let m: usize = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    if (2..=1_000_000).contains(&m) {
        Ok(m)
    } else {
        Err(format!("M={m} outside [2, 1000000]"))
    }
}

fn parse_cf(s: &str) -> Result<f64, String> {
    let cf: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if cf > 0.0 && cf <= 0.5 {
        Ok(cf)
    } else {
        Err(format!("confidence factor {cf} outside (0, 0.5]"))
    }
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if r > 0.0 && r < 1.0 {
        Ok(r)
    } else {
        Err(format!("ratio {r} outside (0, 1)"))
    }
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Directory of trace files (`.csv` and hidden files are skipped).
    #[arg(long)]
    pub traces: PathBuf,
    /// `trace_id,label` manifest; unlisted traces get label `unknown`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Repair unbalanced traces instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Workload config (key = value lines).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub runs: u64,
    /// Index of the first run; run ids continue from here.
    #[arg(long, default_value_t = 0)]
    pub run_offset: u64,
    /// `mode:target:intensity:probability`; may be repeated.
    #[arg(long = "fault")]
    pub faults: Vec<FaultSpec>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SmoteOpts {
    /// Target share of the minority class after oversampling.
    #[arg(long, default_value_t = 0.2, value_parser = parse_ratio)]
    pub ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Force this many synthetic copies per minority instance.
    #[arg(long)]
    pub smote_amount: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SmoteArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub smote: SmoteOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum instances per branch (M).
    #[arg(short = 'm', long = "min-leaf", default_value_t = 2, value_parser = parse_min_leaf)]
    pub min_leaf: usize,
    /// Pruning confidence factor.
    #[arg(long, default_value_t = 0.25, value_parser = parse_cf)]
    pub cf: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmoteSwitch {
    On,
    Off,
    Both,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated M values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 10, 50, 100, 200], value_parser = parse_min_leaf)]
    pub m_list: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SmoteSwitch::Both)]
    pub smote: SmoteSwitch,
    #[command(flatten)]
    pub smote_opts: SmoteOpts,
    /// Oversample the whole dataset before splitting into folds.
    #[arg(long)]
    pub smote_before_cv: bool,
    #[arg(long, default_value_t = 0.25, value_parser = parse_cf)]
    pub cf: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Table destination; defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the machine-readable report here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Skip malformed or unmatched lines instead of aborting.
    #[arg(long)]
    pub lenient: bool,
}

/// Runs one parsed command; returns the process exit code.
pub fn run(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Featurize(a) => cmd_featurize(&a, stderr),
        Command::Synth(a) => cmd_synth(&a, stderr),
        Command::Smote(a) => cmd_smote(&a, stderr),
        Command::Train(a) => cmd_train(&a, stderr),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Sweep(a) => cmd_sweep(&a, stdout, stderr),
        Command::Stream(a) => cmd_stream(&a, stdin, stdout, stderr),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

type CmdResult = Result<i32, String>;

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<TreeModel, String> {
    TreeModel::from_text(&read_text(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset, String> {
    Dataset::read_csv(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Trace files in `dir`, sorted by trace id (file stem).
fn trace_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, String> {
    let entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| format!("{}: {e}", dir.display()))?.path();
        if !path.is_file() {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') || path.extension().is_some_and(|e| e == "csv") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| format!("{}: non UTF-8 file name", path.display()))?
            .to_string();
        files.push((stem, path));
    }
    files.sort();
    Ok(files)
}

fn featurize_file(path: &Path, id: &str, mode: BalanceMode) -> Result<(EntropyFeatures, trace::RepairReport), String> {
    let text = read_text(path)?;
    let trace = trace::parse_trace(&text, id).map_err(|e| e.to_string())?;
    entropy::featurize_with(&trace, mode).map_err(|e| e.to_string())
}

pub fn cmd_featurize(a: &FeaturizeArgs, stderr: &mut dyn Write) -> CmdResult {
    let labels: BTreeMap<String, Class> = match &a.manifest {
        Some(p) => synthload::parse_manifest(&read_text(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => BTreeMap::new(),
    };
    let mode = if a.lenient {
        BalanceMode::Lenient
    } else {
        BalanceMode::Strict
    };
    let files = trace_files(&a.traces)?;
    if files.is_empty() {
        let _ = writeln!(stderr, "warning: no trace files in {}", a.traces.display());
    }

    let mut rows = Vec::with_capacity(files.len());
    let mut failures = 0;
    for (id, path) in &files {
        match featurize_file(path, id, mode) {
            Ok((features, report)) => {
                if !report.is_clean() {
                    let _ = writeln!(
                        stderr,
                        "warning: {}: repaired ({} unmatched OUT dropped, {} open frame(s) closed)",
                        path.display(),
                        report.dropped_outs,
                        report.closed_frames
                    );
                }
                rows.push(FeatureRow {
                    trace_id: id.clone(),
                    features: features.to_vec(),
                    label: labels.get(id).copied(),
                    synthetic: false,
                });
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(stderr, "error: {}: {e}", path.display());
            }
        }
    }

    let mut buf = Vec::new();
    dataset::write_rows(&mut buf, &rows, false).map_err(|e| e.to_string())?;
    fs::write(&a.out, buf).map_err(|e| format!("{}: {e}", a.out.display()))?;
    if failures > 0 {
        let _ = writeln!(stderr, "{failures} of {} trace file(s) failed", files.len());
        return Ok(1);
    }
    Ok(0)
}

pub fn cmd_synth(a: &SynthArgs, stderr: &mut dyn Write) -> CmdResult {
    let spec = WorkloadSpec::from_config_str(&read_text(&a.config)?)
        .map_err(|e| format!("{}: {e}", a.config.display()))?;
    let runs = synthload::generate(&spec, a.run_offset..a.run_offset + a.runs, &a.faults)
        .map_err(|e| e.to_string())?;
    synthload::write_runs(&a.out, &runs).map_err(|e| e.to_string())?;
    let failed = runs.iter().filter(|r| r.label == Class::Failed).count();
    let _ = writeln!(
        stderr,
        "wrote {} run(s) to {} ({failed} failed)",
        runs.len(),
        a.out.display()
    );
    Ok(0)
}

impl SmoteOpts {
    fn config(&self, seed: u64) -> SmoteConfig {
        SmoteConfig {
            target_minority_fraction: self.ratio,
            k: self.k,
            seed,
            amount: self.smote_amount,
        }
    }
}

pub fn cmd_smote(a: &SmoteArgs, stderr: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.input)?;
    let outcome = dataset::smote(&data, &a.smote.config(a.seed)).map_err(|e| e.to_string())?;
    if outcome.already_balanced() {
        let _ = writeln!(stderr, "notice: minority class already meets the target; output unchanged");
    } else {
        let _ = writeln!(
            stderr,
            "SMOTE {}%: {} minority {} -> {}",
            outcome.multiplier * 100,
            outcome.minority,
            data.class_counts()[outcome.minority.index()],
            outcome.data.class_counts()[outcome.minority.index()]
        );
    }
    outcome.data.write_csv(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    Ok(0)
}

pub fn cmd_train(a: &TrainArgs, stderr: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.input)?;
    let cfg = TrainConfig {
        min_leaf: a.min_leaf,
        confidence_factor: a.cf,
        seed: a.seed,
    };
    let model = TreeModel::train(&data, &cfg).map_err(|e| e.to_string())?;
    if model.is_single_leaf() {
        let _ = writeln!(stderr, "notice: trained model is a single leaf");
    }
    write_text(&a.out, &model.to_text())?;
    Ok(0)
}

pub fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write) -> CmdResult {
    let model = load_model(&a.model)?;
    let file = fs::File::open(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let rows = dataset::read_rows(file, true).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let mut out = String::from("trace_id,predicted,confidence\n");
    for row in rows {
        let (class, conf) = model.predict(&row.features).map_err(|e| e.to_string())?;
        out.push_str(&format!("{},{class},{conf:?}\n", row.trace_id));
    }
    match &a.out {
        Some(p) => write_text(p, &out)?,
        None => stdout.write_all(out.as_bytes()).map_err(|e| e.to_string())?,
    }
    Ok(0)
}

/// An (M × SMOTE) cross-validation grid.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub m_list: Vec<usize>,
    pub smote: SmoteSwitch,
    pub smote_cfg: SmoteConfig,
    pub before_cv: bool,
    pub cf: f64,
    pub folds: usize,
    pub seed: u64,
}

impl SweepPlan {
    /// Rows are ordered by M, then SMOTE off before on.
    pub fn run(&self, data: &Dataset) -> Result<Vec<SweepRow>, metrics::EvalError> {
        let on = if self.before_cv {
            SmoteMode::BeforeCv(self.smote_cfg)
        } else {
            SmoteMode::PerFold(self.smote_cfg)
        };
        let modes = match self.smote {
            SmoteSwitch::Off => vec![SmoteMode::Off],
            SmoteSwitch::On => vec![on],
            SmoteSwitch::Both => vec![SmoteMode::Off, on],
        };
        let mut rows = Vec::new();
        for &m in &self.m_list {
            for &mode in &modes {
                let cfg = CvConfig {
                    tree: TrainConfig {
                        min_leaf: m,
                        confidence_factor: self.cf,
                        seed: self.seed,
                    },
                    folds: self.folds,
                    seed: self.seed,
                    smote: mode,
                };
                rows.push(SweepRow {
                    min_leaf: m,
                    report: metrics::crossval(data, &cfg)?,
                });
            }
        }
        Ok(rows)
    }
}

pub fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let data = load_dataset(&a.input)?;
    let plan = SweepPlan {
        m_list: a.m_list.clone(),
        smote: a.smote,
        smote_cfg: a.smote_opts.config(a.seed),
        before_cv: a.smote_before_cv,
        cf: a.cf,
        folds: a.folds,
        seed: a.seed,
    };
    let rows = plan.run(&data).map_err(|e| e.to_string())?;
    for row in rows.iter().filter(|r| r.degenerate()) {
        let _ = writeln!(
            stderr,
            "notice: M={} ({}) produced a single-leaf model in every fold",
            row.min_leaf,
            row.report.config.smote.label()
        );
    }
    let table = metrics::render_table(&rows);
    match &a.out {
        Some(p) => write_text(p, &table)?,
        None => stdout.write_all(table.as_bytes()).map_err(|e| e.to_string())?,
    }
    if let Some(p) = &a.csv {
        write_text(p, &metrics::render_csv(&rows))?;
    }
    Ok(0)
}

fn emit_verdict(model: &TreeModel, root: &trace::Trace, stdout: &mut dyn Write) -> Result<(), String> {
    let features = entropy::featurize(root).map_err(|e| format!("root {}: {e}", root.source_id))?;
    let (class, conf) = model.predict(&features.to_vec()).map_err(|e| e.to_string())?;
    writeln!(stdout, "{} {class} {conf:.4}", root.source_id)
        .and_then(|_| stdout.flush())
        .map_err(|e| e.to_string())
}

pub fn cmd_stream(
    a: &StreamArgs,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let model = load_model(&a.model)?;
    let mut splitter = RootSplitter::new();
    let mut last: Option<(u64, u64)> = None;
    let mut skipped = 0usize;

    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if stdin.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            break;
        }
        line_no += 1;
        if trace::is_ignorable(&line) {
            continue;
        }
        let checked = trace::parse_event_line(&line, line_no).and_then(|ev| match last {
            Some((_, ts)) if ev.timestamp < ts => Err(trace::TraceError::NonMonotonicTimestamp(line_no)),
            Some((id, _)) if ev.id <= id => Err(trace::TraceError::NonIncreasingId(line_no)),
            _ => Ok(ev),
        });
        let outcome = checked.and_then(|ev| {
            let key = (ev.id, ev.timestamp);
            splitter.push(ev).map(|done| (key, done))
        });
        match outcome {
            Ok((key, done)) => {
                last = Some(key);
                if let Some(root) = done {
                    match emit_verdict(&model, &root, stdout) {
                        Ok(()) => {}
                        Err(e) if a.lenient => {
                            skipped += 1;
                            let _ = writeln!(stderr, "warning: {e}");
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Err(e) if a.lenient => {
                skipped += 1;
                let _ = writeln!(stderr, "warning: line {line_no}: {e}; skipped");
            }
            Err(e) => return Err(format!("line {line_no}: {e}")),
        }
    }

    if splitter.depth() > 0 {
        if !a.lenient {
            return Err(format!("stream ended with {} open frame(s)", splitter.depth()));
        }
        if let Some(root) = splitter.flush() {
            let _ = writeln!(stderr, "warning: closing open frames of {} at end of stream", root.source_id);
            if let Err(e) = emit_verdict(&model, &root, stdout) {
                let _ = writeln!(stderr, "warning: {e}");
            }
        }
    }
    if skipped > 0 {
        let _ = writeln!(stderr, "{skipped} line(s) or root(s) skipped");
    }
    Ok(0)
}
