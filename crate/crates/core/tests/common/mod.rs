//! Independent reference computations for tests. Nothing here calls into the
//! code paths it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtentropy::dataset::{Class, Dataset, LabeledInstance};
use rtentropy::trace::{Label, Trace, TraceEvent};

pub const SAMPLE_TRACE: &str = "\
# ID Label Function Timestamp
1 IN Main 10728
2 IN FuncA 10750
3 OUT FuncA 10830
4 IN FuncB 10850
5 IN FuncC 10900
6 OUT FuncC 11000
7 OUT FuncB 11200
8 OUT Main 11290
";

/// A matched IN/OUT pair, with its position in the event list.
#[derive(Debug, Clone)]
pub struct Interval {
    pub function: String,
    pub open_pos: usize,
    pub close_pos: usize,
    pub t_in: u64,
    pub t_out: u64,
}

/// Pairs every IN with its OUT by scanning forward for the first OUT of the
/// same function at the same nesting level. Assumes a well-nested trace.
pub fn intervals(trace: &Trace) -> Vec<Interval> {
    let ev = &trace.events;
    let mut out = Vec::new();
    for (i, e) in ev.iter().enumerate() {
        if e.label != Label::In {
            continue;
        }
        let mut level = 0i64;
        for (j, f) in ev.iter().enumerate().skip(i + 1) {
            match f.label {
                Label::In => level += 1,
                Label::Out if level == 0 => {
                    assert_eq!(f.function, e.function, "oracle expects a nested trace");
                    out.push(Interval {
                        function: e.function.clone(),
                        open_pos: i,
                        close_pos: j,
                        t_in: e.timestamp,
                        t_out: f.timestamp,
                    });
                    break;
                }
                Label::Out => level -= 1,
            }
        }
    }
    out
}

/// Innermost interval strictly containing `iv`, if any.
fn parent_of<'a>(all: &'a [Interval], iv: &Interval) -> Option<&'a Interval> {
    all.iter()
        .filter(|p| p.open_pos < iv.open_pos && p.close_pos > iv.close_pos)
        .max_by_key(|p| p.open_pos)
}

/// Exclusive durations by interval subtraction: each interval's span minus
/// the spans of the intervals whose innermost container it is.
pub fn oracle_durations(trace: &Trace) -> BTreeMap<String, u64> {
    let all = intervals(trace);
    let mut out = BTreeMap::new();
    for iv in &all {
        let children: u64 = all
            .iter()
            .filter(|c| parent_of(&all, c).is_some_and(|p| p.open_pos == iv.open_pos))
            .map(|c| c.t_out - c.t_in)
            .sum();
        *out.entry(iv.function.clone()).or_insert(0) += (iv.t_out - iv.t_in) - children;
    }
    out
}

pub fn oracle_calls(trace: &Trace) -> BTreeMap<(String, String), u64> {
    let all = intervals(trace);
    let mut out = BTreeMap::new();
    for iv in &all {
        if let Some(p) = parent_of(&all, iv) {
            *out.entry((p.function.clone(), iv.function.clone())).or_insert(0) += 1;
        }
    }
    out
}

/// `-Σ p ln p / ln 2` with zero weights skipped.
pub fn naive_entropy(weights: &[u64]) -> f64 {
    let total: u64 = weights.iter().sum();
    let mut h = 0.0;
    for &w in weights {
        if w > 0 {
            let p = w as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h / std::f64::consts::LN_2
}

/// (h_a, h_b, h) recomputed from scratch.
pub fn oracle_features(trace: &Trace) -> (f64, f64, f64) {
    let d: Vec<u64> = oracle_durations(trace).into_values().collect();
    let c: Vec<u64> = oracle_calls(trace).into_values().collect();
    let h_a = naive_entropy(&d);
    let h_b = if c.is_empty() { 0.0 } else { naive_entropy(&c) };
    (h_a, h_b, (h_a + h_b) / 2.0)
}

/// Random well-nested trace with at most `max_functions` names and at most
/// `max_events` events; always at least one frame with positive duration.
pub fn random_trace(rng: &mut ChaCha8Rng, max_functions: usize, max_events: usize) -> Trace {
    let n_funcs = rng.random_range(1..=max_functions);
    let frames = rng.random_range(1..=max_events / 2);
    let mut events = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut t: u64 = rng.random_range(0..1000);
    let mut opened = 0;
    while opened < frames || !stack.is_empty() {
        let can_open = opened < frames;
        let open = can_open && (stack.is_empty() || rng.random_bool(0.55));
        t += rng.random_range(0..50);
        if open {
            let f = format!("f{}", rng.random_range(0..n_funcs));
            events.push(TraceEvent::new(events.len() as u64 + 1, Label::In, f.clone(), t));
            stack.push(f);
            opened += 1;
        } else {
            let f = stack.pop().unwrap();
            events.push(TraceEvent::new(events.len() as u64 + 1, Label::Out, f, t));
        }
    }
    // Guarantee a positive total span.
    let last = events.len() - 1;
    events[last].timestamp += 1;
    Trace::new("rand", events)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exhaustive split search: every midpoint of adjacent distinct values of
/// every attribute, scored by gain ratio with natural-log entropies.
/// Returns `(attribute, threshold, gain_ratio)`.
pub fn oracle_root_split(data: &Dataset, min_leaf: usize) -> Option<(usize, f64, f64)> {
    fn h(counts: [usize; 2]) -> f64 {
        let n = (counts[0] + counts[1]) as f64;
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln() / std::f64::consts::LN_2
            })
            .sum()
    }
    let n = data.len();
    let mut parent = [0usize; 2];
    for i in &data.instances {
        parent[i.label.index()] += 1;
    }
    let mut candidates = Vec::new();
    for a in 0..data.n_features() {
        let mut values: Vec<f64> = data.instances.iter().map(|i| i.features[a]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut left = [0usize; 2];
            let mut right = [0usize; 2];
            for inst in &data.instances {
                if inst.features[a] <= t {
                    left[inst.label.index()] += 1;
                } else {
                    right[inst.label.index()] += 1;
                }
            }
            let (nl, nr) = (left[0] + left[1], right[0] + right[1]);
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let gain = h(parent) - nl as f64 / n as f64 * h(left) - nr as f64 / n as f64 * h(right);
            if gain <= 1e-12 {
                continue;
            }
            let split_info = h([nl, nr]);
            candidates.push((a, t, gain / split_info));
        }
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    candidates.into_iter().find(|c| c.2 >= best - 1e-12)
}

/// Small dataset with ≤ 8 instances, 1–2 features drawn from a coarse grid
/// (so value ties are common).
pub fn tiny_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(2..=8);
    let width = rng.random_range(1..=2);
    let instances = (0..n)
        .map(|i| {
            let features = (0..width).map(|_| rng.random_range(0..6) as f64 * 0.25).collect();
            let label = if rng.random_bool(0.5) { Class::Failed } else { Class::Normal };
            LabeledInstance::new(format!("t{i}"), features, label)
        })
        .collect();
    let names = (0..width).map(|i| format!("x{i}")).collect();
    Dataset::with_features(instances, names)
}

/// Overlapping two-class data over the standard three features.
pub fn noisy_dataset(seed: u64, n: usize, failed_share: f64) -> Dataset {
    let mut r = rng(seed);
    let instances = (0..n)
        .map(|i| {
            let failed = r.random_bool(failed_share);
            let shift = if failed { 0.6 } else { 0.0 };
            let h_a: f64 = r.random_range(0.0..2.0) + shift;
            let h_b: f64 = r.random_range(0.0..2.5) + 0.5 * shift;
            let label = if failed { Class::Failed } else { Class::Normal };
            LabeledInstance::new(format!("n{i}"), vec![h_a, h_b, (h_a + h_b) / 2.0], label)
        })
        .collect();
    Dataset::new(instances)
}

/// Confirms that `s` equals `x + u·(y − x)` for some original minority `y`
/// and one `u ∈ [0, 1)` shared by all coordinates (within `tol`). Returns the
/// recovered `u`.
pub fn convex_witness(s: &[f64], x: &[f64], minority: &[&[f64]], tol: f64) -> Option<f64> {
    if s.iter().zip(x).all(|(a, b)| (a - b).abs() <= tol) {
        return Some(0.0);
    }
    for y in minority {
        let (k, span) = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| b - a)
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
        if span == 0.0 {
            continue;
        }
        let u = (s[k] - x[k]) / span;
        if !(0.0..1.0).contains(&u) {
            continue;
        }
        if s.iter()
            .zip(x.iter().zip(y.iter()))
            .all(|(sv, (xv, yv))| (xv + u * (yv - xv) - sv).abs() <= tol)
        {
            return Some(u);
        }
    }
    None
}
