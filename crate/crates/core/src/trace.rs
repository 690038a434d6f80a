//! Execution traces: parsing, call-stack reconstruction, exclusive durations
//! and caller→callee invocation counts.
//!
//! A trace file holds one event per line:
//!
//! ```text
//! # id label function timestamp
//! 1 IN  Main  10728
//! 2 IN  FuncA 10750
//! 3 OUT FuncA 10830
//! 8 OUT Main  11290
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. Timestamps are opaque
//! integer ticks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("malformed trace line {0}")]
    MalformedLine(usize),
    #[error("timestamp decreases at line {0}")]
    NonMonotonicTimestamp(usize),
    #[error("event id does not increase at line {0}")]
    NonIncreasingId(usize),
    #[error("unbalanced trace: {0}")]
    UnbalancedTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    In,
    Out,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::In => "IN",
            Label::Out => "OUT",
        })
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "IN" => Ok(Label::In),
            "OUT" => Ok(Label::Out),
            _ => Err(()),
        }
    }
}

/// One function entry or exit record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub id: u64,
    pub label: Label,
    pub function: String,
    pub timestamp: u64,
}

impl TraceEvent {
    pub fn new(id: u64, label: Label, function: impl Into<String>, timestamp: u64) -> Self {
        Self {
            id,
            label,
            function: function.into(),
            timestamp,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.id, self.label, self.function, self.timestamp)
    }
}

/// Parses a single data line. `line_no` is only used for error reporting.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<TraceEvent, TraceError> {
    let mut fields = line.split_whitespace();
    let (Some(id), Some(label), Some(function), Some(ts), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(TraceError::MalformedLine(line_no));
    };
    let id = id.parse::<u64>().map_err(|_| TraceError::MalformedLine(line_no))?;
    let label = label
        .parse::<Label>()
        .map_err(|_| TraceError::MalformedLine(line_no))?;
    let timestamp = ts.parse::<u64>().map_err(|_| TraceError::MalformedLine(line_no))?;
    Ok(TraceEvent::new(id, label, function, timestamp))
}

/// True for lines the parser skips (blank or `#` comments).
pub fn is_ignorable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// An ordered list of events from one run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub source_id: String,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(source_id: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        Self {
            source_id: source_id.into(),
            events,
        }
    }

    /// Serializes back into the line format accepted by [`parse_trace`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&ev.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses a trace file body.
pub fn parse_trace(text: &str, source_id: &str) -> Result<Trace, TraceError> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if is_ignorable(line) {
            continue;
        }
        let ev = parse_event_line(line, line_no)?;
        if let Some(prev) = events.last() {
            if ev.timestamp < prev.timestamp {
                return Err(TraceError::NonMonotonicTimestamp(line_no));
            }
            if ev.id <= prev.id {
                return Err(TraceError::NonIncreasingId(line_no));
            }
        }
        events.push(ev);
    }
    Ok(Trace::new(source_id, events))
}

/// Exclusive duration per function name, in ticks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DurationTable {
    pub entries: BTreeMap<String, u64>,
}

impl DurationTable {
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn get(&self, function: &str) -> Option<u64> {
        self.entries.get(function).copied()
    }
}

/// Invocation count per (caller, callee) edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CallCountTable {
    pub entries: BTreeMap<(String, String), u64>,
}

impl CallCountTable {
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn get(&self, caller: &str, callee: &str) -> Option<u64> {
        self.entries
            .get(&(caller.to_string(), callee.to_string()))
            .copied()
    }

    /// Number of distinct callers (m).
    pub fn caller_count(&self) -> usize {
        let mut callers: Vec<&str> = self.entries.keys().map(|(c, _)| c.as_str()).collect();
        callers.dedup();
        callers.len()
    }
}

/// Both tables plus the number of top-level frames, from a single stack walk.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceProfile {
    pub durations: DurationTable,
    pub calls: CallCountTable,
    pub root_frames: usize,
}

struct Frame<'a> {
    function: &'a str,
    start: u64,
    child_span: u64,
}

/// Walks a properly nested trace once, accumulating exclusive durations
/// (`OUT − IN − Σ child spans` per frame, summed per name) and call edges.
pub fn profile(trace: &Trace) -> Result<TraceProfile, TraceError> {
    let mut out = TraceProfile::default();
    let mut stack: Vec<Frame<'_>> = Vec::new();

    for ev in &trace.events {
        match ev.label {
            Label::In => {
                match stack.last() {
                    Some(top) => {
                        *out
                            .calls
                            .entries
                            .entry((top.function.to_string(), ev.function.clone()))
                            .or_insert(0) += 1;
                    }
                    None => out.root_frames += 1,
                }
                stack.push(Frame {
                    function: &ev.function,
                    start: ev.timestamp,
                    child_span: 0,
                });
            }
            Label::Out => {
                let Some(frame) = stack.pop() else {
                    return Err(TraceError::UnbalancedTrace(format!(
                        "OUT {} (id {}) with empty stack",
                        ev.function, ev.id
                    )));
                };
                if frame.function != ev.function {
                    return Err(TraceError::UnbalancedTrace(format!(
                        "OUT {} (id {}) while {} is on top of the stack",
                        ev.function, ev.id, frame.function
                    )));
                }
                let span = ev.timestamp.saturating_sub(frame.start);
                let exclusive = span.saturating_sub(frame.child_span);
                *out
                    .durations
                    .entries
                    .entry(ev.function.clone())
                    .or_insert(0) += exclusive;
                if let Some(parent) = stack.last_mut() {
                    parent.child_span += span;
                }
            }
        }
    }

    if let Some(open) = stack.last() {
        return Err(TraceError::UnbalancedTrace(format!(
            "{} frame(s) still open at end of trace (innermost {})",
            stack.len(),
            open.function
        )));
    }
    Ok(out)
}

pub fn compute_durations(trace: &Trace) -> Result<DurationTable, TraceError> {
    profile(trace).map(|p| p.durations)
}

pub fn compute_call_counts(trace: &Trace) -> Result<CallCountTable, TraceError> {
    profile(trace).map(|p| p.calls)
}

/// How unbalanced traces are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BalanceMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RepairReport {
    pub dropped_outs: usize,
    pub closed_frames: usize,
}

impl RepairReport {
    pub fn is_clean(&self) -> bool {
        self.dropped_outs == 0 && self.closed_frames == 0
    }
}

/// Lenient repair: drops every OUT that does not name the function on top of
/// the stack, then closes still-open frames at the final event's timestamp.
pub fn repair(trace: &Trace) -> (Trace, RepairReport) {
    let mut report = RepairReport::default();
    let mut events = Vec::with_capacity(trace.events.len());
    let mut stack: Vec<&str> = Vec::new();

    for ev in &trace.events {
        match ev.label {
            Label::In => {
                stack.push(&ev.function);
                events.push(ev.clone());
            }
            Label::Out => {
                if stack.last() == Some(&ev.function.as_str()) {
                    stack.pop();
                    events.push(ev.clone());
                } else {
                    report.dropped_outs += 1;
                }
            }
        }
    }

    let last_ts = trace.events.last().map_or(0, |e| e.timestamp);
    let mut next_id = trace.events.last().map_or(1, |e| e.id + 1);
    while let Some(function) = stack.pop() {
        events.push(TraceEvent::new(next_id, Label::Out, function, last_ts));
        next_id += 1;
        report.closed_frames += 1;
    }

    (Trace::new(trace.source_id.clone(), events), report)
}

/// Applies the balance policy, returning a trace that [`profile`] accepts
/// (in lenient mode) or the original trace unchanged (strict mode).
pub fn balanced(trace: &Trace, mode: BalanceMode) -> Result<(Trace, RepairReport), TraceError> {
    match mode {
        BalanceMode::Strict => {
            profile(trace)?;
            Ok((trace.clone(), RepairReport::default()))
        }
        BalanceMode::Lenient => Ok(repair(trace)),
    }
}

/// Incrementally splits an event stream into completed root invocations.
///
/// Each call to [`RootSplitter::push`] returns the full event list of a
/// top-level frame once its closing OUT arrives.
#[derive(Debug, Default)]
pub struct RootSplitter {
    stack: Vec<String>,
    pending: Vec<TraceEvent>,
}

impl RootSplitter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn push(&mut self, ev: TraceEvent) -> Result<Option<Trace>, TraceError> {
        match ev.label {
            Label::In => {
                self.stack.push(ev.function.clone());
            }
            Label::Out => {
                if self.stack.last() != Some(&ev.function) {
                    return Err(TraceError::UnbalancedTrace(format!(
                        "OUT {} (id {}) does not match top of stack",
                        ev.function, ev.id
                    )));
                }
                self.stack.pop();
            }
        }
        self.pending.push(ev);
        if self.stack.is_empty() {
            let events = std::mem::take(&mut self.pending);
            let root = events[0].function.clone();
            return Ok(Some(Trace::new(root, events)));
        }
        Ok(None)
    }

    /// Closes whatever is still open at the last seen timestamp.
    pub fn flush(&mut self) -> Option<Trace> {
        if self.pending.is_empty() {
            return None;
        }
        let events = std::mem::take(&mut self.pending);
        self.stack.clear();
        let trace = Trace::new(events[0].function.clone(), events);
        Some(repair(&trace).0)
    }
}
