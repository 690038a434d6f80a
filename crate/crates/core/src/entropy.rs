//! Runtime entropy features.
//!
//! `h_a` is the Shannon entropy (bits) of the share of exclusive execution
//! time spent in each function, `h_b` the entropy of the caller→callee edge
//! frequencies, and `h` their arithmetic mean.

use thiserror::Error;

use crate::trace::{self, BalanceMode, CallCountTable, DurationTable, Trace, TraceError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("degenerate trace: all exclusive durations are zero")]
    DegenerateTrace,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Feature triple for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyFeatures {
    pub h_a: f64,
    pub h_b: f64,
    pub h: f64,
}

impl EntropyFeatures {
    pub const NAMES: [&'static str; 3] = ["h_a", "h_b", "h"];

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.h_a, self.h_b, self.h]
    }
}

/// Shannon entropy in bits of the distribution proportional to `weights`,
/// with `0·log 0 = 0`. Returns `None` when the weights sum to zero.
fn entropy_bits<I>(weights: I) -> Option<f64>
where
    I: IntoIterator<Item = u64> + Clone,
{
    let total: u64 = weights.clone().into_iter().sum();
    if total == 0 {
        return None;
    }
    let total = total as f64;
    let h = weights
        .into_iter()
        .filter(|&w| w > 0)
        .map(|w| {
            let p = w as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // A single outcome yields -1·log2(1) = -0.0.
    Some(h.max(0.0))
}

/// Per-function time shares α_i, in key order.
pub fn duration_shares(durations: &DurationTable) -> Vec<f64> {
    let total = durations.total() as f64;
    durations
        .entries
        .values()
        .map(|&d| d as f64 / total)
        .collect()
}

/// Per-edge call shares β_{i→j}, in key order.
pub fn call_shares(calls: &CallCountTable) -> Vec<f64> {
    let total = calls.total() as f64;
    calls.entries.values().map(|&n| n as f64 / total).collect()
}

pub fn execution_time_entropy(durations: &DurationTable) -> Result<f64, EntropyError> {
    entropy_bits(durations.entries.values().copied()).ok_or(EntropyError::DegenerateTrace)
}

/// An empty table has entropy 0.
pub fn call_entropy(calls: &CallCountTable) -> f64 {
    entropy_bits(calls.entries.values().copied()).unwrap_or(0.0)
}

pub fn runtime_entropy(h_a: f64, h_b: f64) -> f64 {
    0.5 * (h_a + h_b)
}

/// Strict-mode featurization.
pub fn featurize(trace: &Trace) -> Result<EntropyFeatures, EntropyError> {
    let profile = trace::profile(trace)?;
    let h_a = execution_time_entropy(&profile.durations)?;
    let h_b = call_entropy(&profile.calls);
    Ok(EntropyFeatures {
        h_a,
        h_b,
        h: runtime_entropy(h_a, h_b),
    })
}

/// Featurizes after applying the balance policy; also returns how many
/// events the lenient repair touched.
pub fn featurize_with(
    trace: &Trace,
    mode: BalanceMode,
) -> Result<(EntropyFeatures, trace::RepairReport), EntropyError> {
    let (balanced, report) = trace::balanced(trace, mode)?;
    Ok((featurize(&balanced)?, report))
}
