//! C4.5-style decision tree over continuous features.
//!
//! Growth picks the binary split `x[a] <= t` with the highest gain ratio among
//! candidates that have positive information gain and leave at least `M`
//! training instances on each side. Pruning is pessimistic-error subtree
//! replacement driven by the confidence factor.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::{Class, Dataset};

/// Gains (and gain-ratio differences) below this are treated as zero.
pub const GAIN_EPSILON: f64 = 1e-12;

const FORMAT_HEADER: &str = "c45-model v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum C45Error {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("schema mismatch: model expects {expected} features, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("model parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Minimum training instances on each side of a split (M).
    pub min_leaf: usize,
    /// Pruning confidence factor (CF); smaller prunes harder.
    pub confidence_factor: f64,
    /// Echoed into reports; growth and pruning are deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            min_leaf: 2,
            confidence_factor: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), C45Error> {
        if self.min_leaf < 1 {
            return Err(C45Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if !(self.confidence_factor > 0.0 && self.confidence_factor <= 0.5) {
            return Err(C45Error::InvalidConfig(format!(
                "confidence factor {} not in (0, 0.5]",
                self.confidence_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        attribute: usize,
        threshold: f64,
        /// Training class counts that reached this node.
        counts: [f64; 2],
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        counts: [f64; 2],
        predicted: Class,
    },
}

fn majority(counts: &[f64; 2]) -> Class {
    if counts[1] > counts[0] {
        Class::Failed
    } else {
        Class::Normal
    }
}

impl Node {
    fn leaf(counts: [f64; 2]) -> Node {
        Node::Leaf {
            counts,
            predicted: majority(&counts),
        }
    }

    pub fn counts(&self) -> [f64; 2] {
        match self {
            Node::Internal { counts, .. } | Node::Leaf { counts, .. } => *counts,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Class entropy in bits of a count vector.
pub fn class_entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// A scored candidate split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub attribute: usize,
    pub threshold: f64,
    pub gain: f64,
    pub gain_ratio: f64,
    /// Instances with `x[attribute] <= threshold`.
    pub left_size: usize,
}

/// Midpoint of two adjacent distinct values, kept in `[lo, hi)` so that
/// `lo <= t < hi` survives rounding.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

/// Best admissible split of `indices` (ties: lowest attribute, then lowest
/// threshold), or `None`.
pub fn best_split(data: &Dataset, indices: &[usize], min_leaf: usize) -> Option<Split> {
    let n = indices.len();
    if n < 2 * min_leaf {
        return None;
    }
    let mut parent = [0.0; 2];
    for &i in indices {
        parent[data.instances[i].label.index()] += 1.0;
    }
    let parent_entropy = class_entropy(&parent);
    if parent_entropy <= 0.0 {
        return None;
    }
    let total = n as f64;

    let mut best: Option<Split> = None;
    let mut sorted = indices.to_vec();
    for attribute in 0..data.n_features() {
        let value = |i: usize| data.instances[i].features[attribute];
        sorted.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));

        let mut left = [0.0; 2];
        for pos in 0..n - 1 {
            left[data.instances[sorted[pos]].label.index()] += 1.0;
            let left_size = pos + 1;
            if left_size < min_leaf {
                continue;
            }
            if n - left_size < min_leaf {
                break;
            }
            let (lo, hi) = (value(sorted[pos]), value(sorted[pos + 1]));
            if lo >= hi {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let (nl, nr) = (left_size as f64, (n - left_size) as f64);
            let gain = parent_entropy
                - (nl / total) * class_entropy(&left)
                - (nr / total) * class_entropy(&right);
            if gain <= GAIN_EPSILON {
                continue;
            }
            let split_info = class_entropy(&[nl, nr]);
            let gain_ratio = gain / split_info;
            if best.is_none_or(|b| gain_ratio > b.gain_ratio + GAIN_EPSILON) {
                best = Some(Split {
                    attribute,
                    threshold: midpoint(lo, hi),
                    gain,
                    gain_ratio,
                    left_size,
                });
            }
        }
    }
    best
}

/// Upper-confidence extra errors for a leaf covering `n` instances with `e`
/// misclassified, at confidence factor `cf` (normal approximation to the
/// binomial, with the classic small-count corrections).
pub fn added_errors(n: f64, e: f64, cf: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    if e < 1.0 {
        let base = n * (1.0 - cf.powf(1.0 / n));
        if e == 0.0 {
            return base;
        }
        return base + e * (added_errors(n, 1.0, cf) - base);
    }
    if e + 0.5 >= n {
        return (n - e).max(0.0);
    }
    let z = Normal::standard().inverse_cdf(1.0 - cf);
    let f = (e + 0.5) / n;
    let r = (f + z * z / (2.0 * n) + z * (f / n - f * f / n + z * z / (4.0 * n * n)).sqrt())
        / (1.0 + z * z / n);
    r * n - e
}

fn leaf_errors(counts: &[f64; 2]) -> f64 {
    let n = counts[0] + counts[1];
    n - counts[majority(counts).index()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub feature_names: Vec<String>,
    pub root: Node,
}

fn validate_data(data: &Dataset) -> Result<(), C45Error> {
    if data.is_empty() {
        return Err(C45Error::EmptyDataset);
    }
    let width = data.n_features();
    for (i, inst) in data.instances.iter().enumerate() {
        if inst.features.len() != width {
            return Err(C45Error::InvalidData(format!(
                "instance {i} has {} features, schema has {width}",
                inst.features.len()
            )));
        }
        if inst.features.iter().any(|v| !v.is_finite()) {
            return Err(C45Error::InvalidData(format!("instance {i} has a non-finite feature")));
        }
    }
    Ok(())
}

fn grow_node(data: &Dataset, indices: &mut [usize], min_leaf: usize) -> Node {
    let mut counts = [0.0; 2];
    for &i in indices.iter() {
        counts[data.instances[i].label.index()] += 1.0;
    }
    let Some(split) = best_split(data, indices, min_leaf) else {
        return Node::leaf(counts);
    };
    let attr = split.attribute;
    let (mut left, mut right): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| data.instances[i].features[attr] <= split.threshold);
    debug_assert_eq!(left.len(), split.left_size);
    Node::Internal {
        attribute: attr,
        threshold: split.threshold,
        counts,
        left: Box::new(grow_node(data, &mut left, min_leaf)),
        right: Box::new(grow_node(data, &mut right, min_leaf)),
    }
}

/// Returns the estimated error count of the (possibly replaced) subtree.
fn prune_node(node: &mut Node, cf: f64) -> f64 {
    match node {
        Node::Leaf { counts, .. } => {
            let n = counts[0] + counts[1];
            let e = leaf_errors(counts);
            e + added_errors(n, e, cf)
        }
        Node::Internal {
            counts,
            left,
            right,
            ..
        } => {
            let subtree = prune_node(left, cf) + prune_node(right, cf);
            let n = counts[0] + counts[1];
            let e = leaf_errors(counts);
            let as_leaf = e + added_errors(n, e, cf);
            if as_leaf <= subtree + 1e-9 {
                *node = Node::leaf(*counts);
                as_leaf
            } else {
                subtree
            }
        }
    }
}

impl TreeModel {
    /// Unpruned tree.
    pub fn grow(data: &Dataset, cfg: &TrainConfig) -> Result<TreeModel, C45Error> {
        cfg.validate()?;
        validate_data(data)?;
        let [normal, failed] = data.class_counts();
        if normal == 0 || failed == 0 {
            log::warn!("training data holds a single class; model is one leaf");
        }
        let mut indices: Vec<usize> = (0..data.len()).collect();
        Ok(TreeModel {
            feature_names: data.feature_names.clone(),
            root: grow_node(data, &mut indices, cfg.min_leaf),
        })
    }

    /// Pessimistic-error subtree replacement at confidence factor `cf`.
    pub fn pruned(&self, cf: f64) -> TreeModel {
        let mut out = self.clone();
        prune_node(&mut out.root, cf);
        out
    }

    pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TreeModel, C45Error> {
        Ok(Self::grow(data, cfg)?.pruned(cfg.confidence_factor))
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn is_single_leaf(&self) -> bool {
        matches!(self.root, Node::Leaf { .. })
    }

    /// `(class, share of that class at the reached leaf)`.
    pub fn predict(&self, features: &[f64]) -> Result<(Class, f64), C45Error> {
        if features.len() != self.feature_names.len() {
            return Err(C45Error::SchemaMismatch {
                expected: self.feature_names.len(),
                got: features.len(),
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Internal {
                    attribute,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if features[*attribute] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
                Node::Leaf { counts, predicted } => {
                    let total = counts[0] + counts[1];
                    let confidence = if total > 0.0 {
                        counts[predicted.index()] / total
                    } else {
                        0.0
                    };
                    return Ok((*predicted, confidence));
                }
            }
        }
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// c45-model v1 features=h_a,h_b,h
    /// split h <= 0.5
    ///   leaf normal [5,0]
    ///   leaf failed [0,5]
    /// ```
    ///
    /// Children follow their split line (left, then right) indented by two
    /// more spaces. Numbers use the shortest exact decimal form.
    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_HEADER} features={}\n", self.feature_names.join(","));
        self.write_node(&self.root, 0, &mut out);
        out
    }

    fn write_node(&self, node: &Node, depth: usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        match node {
            Node::Internal {
                attribute,
                threshold,
                left,
                right,
                ..
            } => {
                let _ = writeln!(out, "{indent}split {} <= {threshold}", self.feature_names[*attribute]);
                self.write_node(left, depth + 1, out);
                self.write_node(right, depth + 1, out);
            }
            Node::Leaf { counts, predicted } => {
                let _ = writeln!(out, "{indent}leaf {predicted} [{},{}]", counts[0], counts[1]);
            }
        }
    }

    pub fn from_text(text: &str) -> Result<TreeModel, C45Error> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let err = |line: usize, message: &str| C45Error::ParseError {
            line,
            message: message.to_string(),
        };

        let (hline, header) = lines.next().ok_or_else(|| err(1, "empty model file"))?;
        let features = header
            .strip_prefix(FORMAT_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("features="))
            .ok_or_else(|| err(hline, "expected `c45-model v1 features=...` header"))?;
        let feature_names: Vec<String> = features.split(',').map(str::to_string).collect();
        if feature_names.iter().any(|f| f.is_empty()) {
            return Err(err(hline, "empty feature name"));
        }

        let mut parser = Parser {
            lines: lines.collect(),
            pos: 0,
            feature_names: &feature_names,
            last_line: hline,
        };
        let root = parser.node(0)?;
        if let Some((line, _)) = parser.lines.get(parser.pos) {
            return Err(err(*line, "trailing content after complete tree"));
        }
        Ok(TreeModel {
            feature_names,
            root,
        })
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    feature_names: &'a [String],
    last_line: usize,
}

impl Parser<'_> {
    fn node(&mut self, depth: usize) -> Result<Node, C45Error> {
        let Some(&(line, raw)) = self.lines.get(self.pos) else {
            return Err(C45Error::ParseError {
                line: self.last_line + 1,
                message: "unexpected end of model (truncated file?)".into(),
            });
        };
        self.pos += 1;
        self.last_line = line;
        let err = |message: String| C45Error::ParseError { line, message };

        let indent = raw.len() - raw.trim_start_matches(' ').len();
        if indent != 2 * depth {
            return Err(err(format!("expected indent {}, found {indent}", 2 * depth)));
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            ["split", name, "<=", threshold] => {
                let attribute = self
                    .feature_names
                    .iter()
                    .position(|f| f == name)
                    .ok_or_else(|| err(format!("unknown feature `{name}`")))?;
                let threshold: f64 = threshold
                    .parse()
                    .map_err(|_| err(format!("bad threshold `{threshold}`")))?;
                if !threshold.is_finite() {
                    return Err(err("threshold must be finite".into()));
                }
                let left = self.node(depth + 1)?;
                let right = self.node(depth + 1)?;
                let (l, r) = (left.counts(), right.counts());
                Ok(Node::Internal {
                    attribute,
                    threshold,
                    counts: [l[0] + r[0], l[1] + r[1]],
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            ["leaf", class, counts] => {
                let predicted: Class = class
                    .parse()
                    .map_err(|_| err(format!("unknown class `{class}`")))?;
                let inner = counts
                    .strip_prefix('[')
                    .and_then(|c| c.strip_suffix(']'))
                    .ok_or_else(|| err("leaf counts must look like [n,f]".into()))?;
                let parsed: Vec<f64> = inner
                    .split(',')
                    .map(|c| c.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(format!("bad leaf counts `{counts}`")))?;
                let [n, f] = parsed[..] else {
                    return Err(err("leaf needs exactly two counts".into()));
                };
                if !(n >= 0.0 && f >= 0.0 && n.is_finite() && f.is_finite()) {
                    return Err(err("leaf counts must be finite and non-negative".into()));
                }
                let counts = [n, f];
                if majority(&counts) != predicted {
                    return Err(err(format!("leaf class {predicted} is not the majority of {counts:?}")));
                }
                Ok(Node::Leaf { counts, predicted })
            }
            _ => Err(err(format!("unrecognised line `{}`", raw.trim()))),
        }
    }
}
