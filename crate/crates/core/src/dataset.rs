//! Labeled feature instances, the feature CSV, SMOTE oversampling and
//! stratified k-fold splitting.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::entropy::EntropyFeatures;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bad label on line {0}")]
    BadLabel(u64),
    #[error("non-finite or unparsable feature on line {0}")]
    BadFeature(u64),
    #[error("minority class has {0} instance(s); SMOTE needs at least 2")]
    MinorityTooSmall(usize),
    #[error("class {class} has {count} instance(s), fewer than {folds} folds")]
    ClassTooSmall {
        class: Class,
        count: usize,
        folds: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Run outcome. `Failed` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Normal,
    Failed,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Normal, Class::Failed];

    pub fn index(self) -> usize {
        match self {
            Class::Normal => 0,
            Class::Failed => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::Failed => "failed",
        }
    }

    pub fn other(self) -> Class {
        match self {
            Class::Normal => Class::Failed,
            Class::Failed => Class::Normal,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Class::Normal),
            "failed" => Ok(Class::Failed),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub trace_id: String,
    pub features: Vec<f64>,
    pub label: Class,
    pub synthetic: bool,
}

impl LabeledInstance {
    pub fn new(trace_id: impl Into<String>, features: Vec<f64>, label: Class) -> Self {
        Self {
            trace_id: trace_id.into(),
            features,
            label,
            synthetic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<LabeledInstance>,
    pub feature_names: Vec<String>,
}

pub const CSV_HEADER: [&str; 5] = ["trace_id", "h_a", "h_b", "h", "label"];

impl Default for Dataset {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Dataset {
    /// Dataset over the standard `h_a, h_b, h` feature schema.
    pub fn new(instances: Vec<LabeledInstance>) -> Self {
        Self {
            instances,
            feature_names: EntropyFeatures::NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_features(instances: Vec<LabeledInstance>, feature_names: Vec<String>) -> Self {
        Self {
            instances,
            feature_names,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// `[normal, failed]`
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for inst in &self.instances {
            counts[inst.label.index()] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
        Self::from_reader(File::open(path)?)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
        let rows = read_rows(reader, false)?;
        Ok(Dataset::new(
            rows.into_iter()
                .map(|r| LabeledInstance {
                    trace_id: r.trace_id,
                    features: r.features,
                    label: r.label.expect("labels checked by read_rows"),
                    synthetic: r.synthetic,
                })
                .collect(),
        ))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut f = File::create(path)?;
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Always writes the optional `synthetic` column.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        if self.feature_names != CSV_HEADER[1..4] {
            return Err(DatasetError::SchemaMismatch(format!(
                "features {:?} cannot be written to the entropy CSV",
                self.feature_names
            )));
        }
        let rows: Vec<FeatureRow> = self
            .instances
            .iter()
            .map(|i| FeatureRow {
                trace_id: i.trace_id.clone(),
                features: i.features.clone(),
                label: Some(i.label),
                synthetic: i.synthetic,
            })
            .collect();
        write_rows(writer, &rows, true)
    }
}

/// A CSV row whose label may be `unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub trace_id: String,
    pub features: Vec<f64>,
    pub label: Option<Class>,
    pub synthetic: bool,
}

/// Reads feature rows. With `allow_unknown`, the label `unknown` maps to
/// `None`; otherwise only `normal` and `failed` are accepted.
pub fn read_rows<R: Read>(reader: R, allow_unknown: bool) -> Result<Vec<FeatureRow>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let with_synthetic = match names.as_slice() {
        h if h == CSV_HEADER => false,
        [base @ .., "synthetic"] if *base == CSV_HEADER => true,
        _ => {
            return Err(DatasetError::SchemaMismatch(format!(
                "expected header `trace_id,h_a,h_b,h,label[,synthetic]`, got `{}`",
                names.join(",")
            )))
        }
    };

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => {
                DatasetError::SchemaMismatch(format!("row has wrong field count: {e}"))
            }
            _ => DatasetError::Csv(e),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut features = Vec::with_capacity(3);
        for field in record.iter().skip(1).take(3) {
            let v: f64 = field.trim().parse().map_err(|_| DatasetError::BadFeature(line))?;
            if !v.is_finite() {
                return Err(DatasetError::BadFeature(line));
            }
            features.push(v);
        }
        let label = match (&record[4], allow_unknown) {
            ("unknown", true) => None,
            (s, _) => Some(s.parse::<Class>().map_err(|_| DatasetError::BadLabel(line))?),
        };
        let synthetic = if with_synthetic {
            match &record[5] {
                "true" => true,
                "false" => false,
                _ => {
                    return Err(DatasetError::SchemaMismatch(format!(
                        "synthetic flag on line {line} must be true or false"
                    )))
                }
            }
        } else {
            false
        };
        rows.push(FeatureRow {
            trace_id: record[0].to_string(),
            features,
            label,
            synthetic,
        });
    }
    Ok(rows)
}

/// Floats use the shortest representation that parses back to the same bits.
pub fn write_rows<W: Write>(
    writer: W,
    rows: &[FeatureRow],
    with_synthetic: bool,
) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_synthetic {
        header.push("synthetic");
    }
    wtr.write_record(&header)?;
    for row in rows {
        let mut rec = Vec::with_capacity(6);
        rec.push(row.trace_id.clone());
        rec.extend(row.features.iter().map(|v| format!("{v:?}")));
        rec.push(row.label.map_or("unknown", Class::as_str).to_string());
        if with_synthetic {
            rec.push(row.synthetic.to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteConfig {
    /// Desired share of the (originally) minority class after oversampling.
    pub target_minority_fraction: f64,
    pub k: usize,
    pub seed: u64,
    /// Forces the number of synthetic copies per minority instance.
    pub amount: Option<usize>,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            target_minority_fraction: 0.2,
            k: 5,
            seed: 0,
            amount: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutcome {
    pub data: Dataset,
    pub minority: Class,
    /// Synthetic copies per minority instance; 0 when the input already met
    /// the target and was returned unchanged.
    pub multiplier: usize,
}

impl SmoteOutcome {
    pub fn already_balanced(&self) -> bool {
        self.multiplier == 0
    }
}

/// Smallest `g ≥ 1` such that `m·(1+g) / (total + m·g) ≥ target`, or `None`
/// when `m / total` already meets it.
pub fn smote_multiplier(minority: usize, majority: usize, target: f64) -> Option<usize> {
    let fraction = |m: usize| m as f64 / (m + majority) as f64;
    if fraction(minority) >= target {
        return None;
    }
    let mut g = 1;
    while fraction(minority * (1 + g)) < target {
        g += 1;
    }
    Some(g)
}

/// Minority class (ties resolve to `Failed`) and its size.
fn minority_of(data: &Dataset) -> (Class, usize, usize) {
    let [normal, failed] = data.class_counts();
    if normal < failed {
        (Class::Normal, normal, failed)
    } else {
        (Class::Failed, failed, normal)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// SMOTE oversampling of the minority class.
///
/// Each synthetic point is `x + u·(nn − x)` where `nn` is drawn uniformly from
/// the `k` nearest minority neighbours of `x` (Euclidean, ties by lower index)
/// and `u ~ U[0, 1)`. Originals come first, unchanged.
pub fn smote(data: &Dataset, cfg: &SmoteConfig) -> Result<SmoteOutcome, DatasetError> {
    if !(cfg.target_minority_fraction > 0.0 && cfg.target_minority_fraction < 1.0) {
        return Err(DatasetError::InvalidParameter(format!(
            "target minority fraction {} not in (0,1)",
            cfg.target_minority_fraction
        )));
    }
    if cfg.k == 0 {
        return Err(DatasetError::InvalidParameter("k must be positive".into()));
    }
    let (minority, m, majority) = minority_of(data);
    if m < 2 {
        return Err(DatasetError::MinorityTooSmall(m));
    }

    let multiplier = match cfg.amount {
        Some(g) => g,
        None => smote_multiplier(m, majority, cfg.target_minority_fraction).unwrap_or(0),
    };
    if multiplier == 0 {
        log::info!(
            "SMOTE: {minority} share {m}/{} already meets target {}; no oversampling",
            m + majority,
            cfg.target_minority_fraction
        );
        return Ok(SmoteOutcome {
            data: data.clone(),
            minority,
            multiplier: 0,
        });
    }

    let members: Vec<usize> = data
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.label == minority)
        .map(|(i, _)| i)
        .collect();
    let k = cfg.k.min(m - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut synthetics = Vec::with_capacity(m * multiplier);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(m);
    for &i in &members {
        let x = &data.instances[i].features;
        dists.clear();
        dists.extend(
            members
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (squared_distance(x, &data.instances[j].features), j)),
        );
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbours = &dists[..k];

        for copy in 0..multiplier {
            let nn = &data.instances[neighbours[rng.random_range(0..k)].1].features;
            let u: f64 = rng.random();
            let features = x.iter().zip(nn).map(|(a, b)| a + u * (b - a)).collect();
            synthetics.push(LabeledInstance {
                trace_id: format!("{}~smote{}", data.instances[i].trace_id, copy + 1),
                features,
                label: minority,
                synthetic: true,
            });
        }
    }

    let mut instances = data.instances.clone();
    instances.extend(synthetics);
    Ok(SmoteOutcome {
        data: Dataset::with_features(instances, data.feature_names.clone()),
        minority,
        multiplier,
    })
}

/// Index partition for one cross-validation fold; both lists ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Each class is shuffled independently, the shuffled classes are concatenated
/// and dealt round-robin across folds, so every fold holds ⌊n_c/k⌋ or ⌈n_c/k⌉
/// instances of class c and fold sizes differ by at most one (larger folds
/// first).
pub fn stratified_kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::InvalidParameter(format!("k={k}; need at least 2 folds")));
    }
    if data.len() < k {
        return Err(DatasetError::InvalidParameter(format!(
            "{} instances cannot fill {k} folds",
            data.len()
        )));
    }
    let counts = data.class_counts();
    for class in Class::ALL {
        let count = counts[class.index()];
        if count > 0 && count < k {
            return Err(DatasetError::ClassTooSmall {
                class,
                count,
                folds: k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(data.len());
    for class in Class::ALL {
        let mut members: Vec<usize> = data
            .instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.label == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }

    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        tests[pos % k].push(idx);
    }
    let mut fold_of = vec![0usize; data.len()];
    for (f, test) in tests.iter_mut().enumerate() {
        test.sort_unstable();
        for &i in test.iter() {
            fold_of[i] = f;
        }
    }
    Ok(tests
        .into_iter()
        .enumerate()
        .map(|(f, test)| Fold {
            train: (0..data.len()).filter(|&i| fold_of[i] != f).collect(),
            test,
        })
        .collect())
}
