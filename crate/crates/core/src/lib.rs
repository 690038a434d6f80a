//! Failure detection from execution traces via runtime-entropy features.
//!
//! Pipeline: [`trace`] files → [`entropy`] features → [`dataset`] (SMOTE,
//! folds) → [`c45`] decision tree → [`metrics`]. [`synthload`] produces
//! fault-injected synthetic traces; [`cli`] wires everything to the
//! `rtentropy` binary.

pub mod c45;
pub mod cli;
pub mod dataset;
pub mod entropy;
pub mod metrics;
pub mod synthload;
pub mod trace;

pub use c45::{TrainConfig, TreeModel};
pub use dataset::{Class, Dataset, LabeledInstance, SmoteConfig};
pub use entropy::{featurize, EntropyFeatures};
pub use metrics::{ConfusionMatrix, CvConfig, EvalReport, Scores, SmoteMode};
pub use trace::{parse_trace, BalanceMode, Trace, TraceEvent};
