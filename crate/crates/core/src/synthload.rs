//! Synthetic call-tree workloads with fault injection.
//!
//! Each run is a random call tree rooted at `main` over a fixed static call
//! graph (callees always have a higher index). `main` calls each of its
//! callees once, in order, and then a Poisson number of extra calls; every
//! other frame makes a Poisson number of calls, cycling through its callee
//! list, until `max_depth`. Every frame gets a sampled exclusive duration and timestamps are laid out so that the trace's
//! exclusive durations equal the sampled values exactly. Faults rewrite the
//! tree before it is emitted; a run is labeled `failed` iff some fault fired
//! and changed the tree.
//!
//! Config file format (one `key = value` per line, `#` comments):
//!
//! ```text
//! n_functions = 8
//! max_depth = 3
//! branching = 2.0
//! callees_per_function = 2
//! base_duration_range = 20,400
//! jitter = 0.8,1.2
//! max_frames = 5000
//! seed = 7
//! ```
//!
//! `base_durations = 100,250,...` (one per function) may replace
//! `base_duration_range`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::dataset::Class;
use crate::trace::{CallCountTable, DurationTable, Label, Trace, TraceEvent};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_functions: usize,
    pub max_depth: usize,
    /// Mean number of children per frame (Poisson).
    pub branching: f64,
    /// Size of each function's static callee list.
    pub callees_per_function: usize,
    pub base_durations: BaseDurations,
    /// Multiplicative jitter factor range `[lo, hi]` applied per frame.
    pub jitter: (f64, f64),
    /// Hard cap on frames per run.
    pub max_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaseDurations {
    Explicit(Vec<u64>),
    /// Drawn once per function from `[lo, hi]` with the workload seed.
    Range(u64, u64),
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_functions: 8,
            max_depth: 3,
            branching: 2.0,
            callees_per_function: 2,
            base_durations: BaseDurations::Range(20, 400),
            jitter: (0.8, 1.2),
            max_frames: 5000,
            seed: 0,
        }
    }
}

pub fn function_name(index: usize) -> String {
    if index == 0 {
        "main".to_string()
    } else {
        format!("fn{index}")
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_functions < 2 {
            return Err(invalid("n_functions must be at least 2"));
        }
        if self.max_depth < 1 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if !(self.branching > 0.0 && self.branching.is_finite()) {
            return Err(invalid("branching must be a positive real"));
        }
        if self.callees_per_function < 1 {
            return Err(invalid("callees_per_function must be at least 1"));
        }
        match &self.base_durations {
            BaseDurations::Explicit(v) => {
                if v.len() != self.n_functions {
                    return Err(invalid(format!(
                        "base_durations has {} entries, n_functions is {}",
                        v.len(),
                        self.n_functions
                    )));
                }
                if v.contains(&0) {
                    return Err(invalid("base durations must be positive"));
                }
            }
            BaseDurations::Range(lo, hi) => {
                if *lo == 0 || lo > hi {
                    return Err(invalid("base_duration_range must satisfy 0 < lo <= hi"));
                }
            }
        }
        let (lo, hi) = self.jitter;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid("jitter must satisfy 0 < lo <= hi"));
        }
        if self.max_frames < 1 {
            return Err(invalid("max_frames must be positive"));
        }
        Ok(())
    }

    pub fn from_config_str(text: &str) -> Result<WorkloadSpec, SynthError> {
        let mut spec = WorkloadSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || invalid(format!("line {}: bad value for {key}: `{value}`", i + 1));
            let pair = || -> Result<(&str, &str), SynthError> {
                value
                    .split_once(',')
                    .map(|(a, b)| (a.trim(), b.trim()))
                    .ok_or_else(bad)
            };
            match key {
                "n_functions" => spec.n_functions = value.parse().map_err(|_| bad())?,
                "max_depth" => spec.max_depth = value.parse().map_err(|_| bad())?,
                "branching" => spec.branching = value.parse().map_err(|_| bad())?,
                "callees_per_function" => {
                    spec.callees_per_function = value.parse().map_err(|_| bad())?
                }
                "max_frames" => spec.max_frames = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "jitter" => {
                    let (a, b) = pair()?;
                    spec.jitter = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                }
                "base_duration_range" => {
                    let (a, b) = pair()?;
                    spec.base_durations =
                        BaseDurations::Range(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                }
                "base_durations" => {
                    let v = value
                        .split(',')
                        .map(|s| s.trim().parse::<u64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad())?;
                    spec.base_durations = BaseDurations::Explicit(v);
                }
                other => return Err(invalid(format!("line {}: unknown key `{other}`", i + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = format!(
            "n_functions = {}\nmax_depth = {}\nbranching = {}\ncallees_per_function = {}\n",
            self.n_functions, self.max_depth, self.branching, self.callees_per_function
        );
        match &self.base_durations {
            BaseDurations::Range(lo, hi) => s.push_str(&format!("base_duration_range = {lo},{hi}\n")),
            BaseDurations::Explicit(v) => {
                let list: Vec<String> = v.iter().map(u64::to_string).collect();
                s.push_str(&format!("base_durations = {}\n", list.join(",")));
            }
        }
        s.push_str(&format!(
            "jitter = {},{}\nmax_frames = {}\nseed = {}\n",
            self.jitter.0, self.jitter.1, self.max_frames, self.seed
        ));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// Multiplies the target's per-frame durations by `intensity`.
    DurationSkew,
    /// Removes every call to the target, with its subtree.
    DroppedCall,
    /// Repeats each call to the target `max(1, round(intensity))` more times.
    ExtraCall,
    /// Redirects each call to the target to the next function in the table.
    WrongTarget,
}

impl FaultMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultMode::DurationSkew => "duration_skew",
            FaultMode::DroppedCall => "dropped_call",
            FaultMode::ExtraCall => "extra_call",
            FaultMode::WrongTarget => "wrong_target",
        }
    }
}

impl FromStr for FaultMode {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duration_skew" => Ok(FaultMode::DurationSkew),
            "dropped_call" => Ok(FaultMode::DroppedCall),
            "extra_call" => Ok(FaultMode::ExtraCall),
            "wrong_target" => Ok(FaultMode::WrongTarget),
            other => Err(invalid(format!("unknown fault mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub mode: FaultMode,
    pub target_function: String,
    pub intensity: f64,
    pub activation_probability: f64,
}

impl FaultSpec {
    pub fn new(mode: FaultMode, target: impl Into<String>, intensity: f64, activation: f64) -> Self {
        Self {
            mode,
            target_function: target.into(),
            intensity,
            activation_probability: activation,
        }
    }

    pub fn validate(&self, spec: &WorkloadSpec) -> Result<usize, SynthError> {
        if !(self.intensity > 0.0 && self.intensity.is_finite()) {
            return Err(invalid("fault intensity must be a positive real"));
        }
        if !(self.activation_probability > 0.0 && self.activation_probability <= 1.0) {
            return Err(invalid("activation probability must be in (0, 1]"));
        }
        (0..spec.n_functions)
            .find(|&i| function_name(i) == self.target_function)
            .ok_or_else(|| invalid(format!("unknown target function `{}`", self.target_function)))
    }
}

/// `mode:target:intensity:probability`, e.g. `duration_skew:fn2:3.0:1.0`.
impl FromStr for FaultSpec {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [mode, target, intensity, prob] = parts[..] else {
            return Err(invalid(format!("fault `{s}` is not mode:target:intensity:probability")));
        };
        Ok(FaultSpec {
            mode: mode.parse()?,
            target_function: target.to_string(),
            intensity: intensity.parse().map_err(|_| invalid(format!("bad intensity in `{s}`")))?,
            activation_probability: prob
                .parse()
                .map_err(|_| invalid(format!("bad probability in `{s}`")))?,
        })
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.mode.as_str(),
            self.target_function,
            self.intensity,
            self.activation_probability
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CallNode {
    function: usize,
    exclusive: u64,
    children: Vec<CallNode>,
}

impl CallNode {
    fn frames(&self) -> usize {
        1 + self.children.iter().map(CallNode::frames).sum::<usize>()
    }
}

/// Static structure shared by all runs of a spec.
struct Program {
    bases: Vec<u64>,
    callees: Vec<Vec<usize>>,
}

impl Program {
    fn build(spec: &WorkloadSpec) -> Program {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(u64::MAX);
        let n = spec.n_functions;
        let bases = match &spec.base_durations {
            BaseDurations::Explicit(v) => v.clone(),
            BaseDurations::Range(lo, hi) => (0..n).map(|_| rng.random_range(*lo..=*hi)).collect(),
        };
        // Callees always have a higher index, so the static graph is acyclic;
        // `main` always calls fn1 first.
        let callees = (0..n)
            .map(|f| {
                let pool: Vec<usize> = (f + 1..n).collect();
                if pool.is_empty() {
                    return Vec::new();
                }
                let want = spec.callees_per_function.min(pool.len());
                let mut chosen: Vec<usize> =
                    rand::seq::index::sample(&mut rng, pool.len(), want)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect();
                chosen.sort_unstable();
                if f == 0 && !chosen.contains(&1) {
                    chosen[0] = 1;
                    chosen.sort_unstable();
                }
                chosen
            })
            .collect();
        Program { bases, callees }
    }
}

struct TreeBuilder<'a> {
    spec: &'a WorkloadSpec,
    program: &'a Program,
    poisson: Poisson<f64>,
    frames: usize,
}

impl TreeBuilder<'_> {
    fn duration(&self, function: usize, rng: &mut ChaCha8Rng) -> u64 {
        let (lo, hi) = self.spec.jitter;
        let factor = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        ((self.program.bases[function] as f64 * factor).round() as u64).max(1)
    }

    fn frame(&mut self, function: usize, depth: usize, rng: &mut ChaCha8Rng) -> CallNode {
        self.frames += 1;
        let exclusive = self.duration(function, rng);
        let callees = &self.program.callees[function];
        let mut children = Vec::new();
        if depth < self.spec.max_depth && !callees.is_empty() {
            let mut count = self.poisson.sample(rng) as usize;
            if function == 0 {
                // `main` drives every phase once before any extra calls.
                count += callees.len();
            }
            for c in 0..count {
                if self.frames >= self.spec.max_frames {
                    break;
                }
                let callee = callees[c % callees.len()];
                children.push(self.frame(callee, depth + 1, rng));
            }
        }
        CallNode {
            function,
            exclusive,
            children,
        }
    }
}

fn run_rng(seed: u64, run_index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index.wrapping_mul(2).wrapping_add(stream));
    rng
}

/// Applies one fault to the children of `node` (recursively). Returns whether
/// anything changed.
fn apply_fault(
    node: &mut CallNode,
    mode: FaultMode,
    target: usize,
    intensity: f64,
    builder: &mut TreeBuilder<'_>,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut changed = false;
    if mode == FaultMode::DurationSkew && node.function == target {
        let skewed = ((node.exclusive as f64 * intensity).round() as u64).max(1);
        changed |= skewed != node.exclusive;
        node.exclusive = skewed;
    }
    match mode {
        FaultMode::DroppedCall => {
            let before = node.children.len();
            node.children.retain(|c| c.function != target);
            changed |= node.children.len() != before;
        }
        FaultMode::ExtraCall => {
            let extra = (intensity.round() as usize).max(1);
            let mut expanded = Vec::with_capacity(node.children.len());
            for child in node.children.drain(..) {
                let repeat = child.function == target;
                if repeat {
                    for _ in 0..extra {
                        expanded.push(child.clone());
                    }
                    changed = true;
                }
                expanded.push(child);
            }
            node.children = expanded;
        }
        FaultMode::WrongTarget => {
            let n = builder.spec.n_functions;
            let wrong = if target + 1 < n { target + 1 } else { 1 };
            for child in node.children.iter_mut() {
                if child.function == target && wrong != target {
                    *child = builder.frame(wrong, depth + 1, rng);
                    changed = true;
                }
            }
        }
        FaultMode::DurationSkew => {}
    }
    for child in node.children.iter_mut() {
        changed |= apply_fault(child, mode, target, intensity, builder, depth + 1, rng);
    }
    changed
}

fn emit(node: &CallNode, t: &mut u64, next_id: &mut u64, events: &mut Vec<TraceEvent>) {
    let name = function_name(node.function);
    events.push(TraceEvent::new(*next_id, Label::In, name.clone(), *t));
    *next_id += 1;
    for child in &node.children {
        emit(child, t, next_id, events);
    }
    *t += node.exclusive;
    events.push(TraceEvent::new(*next_id, Label::Out, name, *t));
    *next_id += 1;
}

fn tally(node: &CallNode, durations: &mut DurationTable, calls: &mut CallCountTable) {
    *durations
        .entries
        .entry(function_name(node.function))
        .or_insert(0) += node.exclusive;
    for child in &node.children {
        *calls
            .entries
            .entry((function_name(node.function), function_name(child.function)))
            .or_insert(0) += 1;
        tally(child, durations, calls);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRun {
    pub run_index: u64,
    pub trace_id: String,
    pub label: Class,
    pub trace: Trace,
    /// Faults that fired and changed this run.
    pub fired: Vec<FaultMode>,
    /// Exclusive durations and call counts known by construction.
    pub expected_durations: DurationTable,
    pub expected_calls: CallCountTable,
}

pub fn trace_id(run_index: u64) -> String {
    format!("run{run_index:06}")
}

/// Generates runs `runs`, each a deterministic function of
/// `(spec, run_index, faults)`.
pub fn generate(
    spec: &WorkloadSpec,
    runs: Range<u64>,
    faults: &[FaultSpec],
) -> Result<Vec<GeneratedRun>, SynthError> {
    spec.validate()?;
    let targets = faults
        .iter()
        .map(|f| f.validate(spec))
        .collect::<Result<Vec<_>, _>>()?;
    let program = Program::build(spec);
    let poisson = Poisson::new(spec.branching).map_err(|e| invalid(e.to_string()))?;

    let mut out = Vec::with_capacity(runs.end.saturating_sub(runs.start) as usize);
    for run_index in runs {
        let mut builder = TreeBuilder {
            spec,
            program: &program,
            poisson,
            frames: 0,
        };
        let mut tree_rng = run_rng(spec.seed, run_index, 0);
        let mut tree = builder.frame(0, 0, &mut tree_rng);

        let mut fault_rng = run_rng(spec.seed, run_index, 1);
        let mut fired = Vec::new();
        for (fault, &target) in faults.iter().zip(&targets) {
            let active = fault_rng.random::<f64>() < fault.activation_probability;
            if active
                && apply_fault(
                    &mut tree,
                    fault.mode,
                    target,
                    fault.intensity,
                    &mut builder,
                    0,
                    &mut fault_rng,
                )
            {
                fired.push(fault.mode);
            }
        }
        debug_assert!(tree.frames() >= 1);

        let mut events = Vec::new();
        emit(&tree, &mut 0, &mut 1, &mut events);
        let mut expected_durations = DurationTable::default();
        let mut expected_calls = CallCountTable::default();
        tally(&tree, &mut expected_durations, &mut expected_calls);

        let id = trace_id(run_index);
        out.push(GeneratedRun {
            run_index,
            label: if fired.is_empty() {
                Class::Normal
            } else {
                Class::Failed
            },
            trace: Trace::new(id.clone(), events),
            trace_id: id,
            fired,
            expected_durations,
            expected_calls,
        });
    }
    Ok(out)
}

/// Workload used by the end-to-end benchmark: the default spec at seed 0.
pub fn benchmark_spec() -> WorkloadSpec {
    WorkloadSpec::default()
}

/// Faults for the benchmark's failed runs: `main` runs three times slower
/// and the always-executed `fn1` is never called.
pub fn benchmark_faults() -> Vec<FaultSpec> {
    vec![
        FaultSpec::new(FaultMode::DurationSkew, "main", 3.0, 1.0),
        FaultSpec::new(FaultMode::DroppedCall, "fn1", 1.0, 1.0),
    ]
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn manifest_text(runs: &[GeneratedRun]) -> String {
    let mut s = String::from("trace_id,label\n");
    for r in runs {
        s.push_str(&format!("{},{}\n", r.trace_id, r.label));
    }
    s
}

/// Writes `<trace_id>.trace` per run plus `manifest.csv` into `dir`.
pub fn write_runs(dir: &Path, runs: &[GeneratedRun]) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    for r in runs {
        let mut f = fs::File::create(dir.join(format!("{}.trace", r.trace_id)))?;
        f.write_all(r.trace.to_text().as_bytes())?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest_text(runs))?;
    Ok(())
}

/// Parses a `trace_id,label` manifest. A leading `trace_id,label` header is
/// optional.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, Class>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "trace_id,label") {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| format!("manifest line {}: expected `trace_id,label`", i + 1))?;
        let label: Class = label
            .trim()
            .parse()
            .map_err(|_| format!("manifest line {}: bad label `{}`", i + 1, label.trim()))?;
        out.insert(id.trim().to_string(), label);
    }
    Ok(out)
}
