//! Confusion matrices, rate metrics and k-fold cross-validation.
//!
//! `failed` is the positive class. A metric whose denominator is zero is
//! `None` ("undefined"), never silently 0.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use thiserror::Error;

use crate::c45::{C45Error, TrainConfig, TreeModel};
use crate::dataset::{self, Class, Dataset, DatasetError, LabeledInstance, SmoteConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] C45Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, actual: Class, predicted: Class) {
        match (actual, predicted) {
            (Class::Failed, Class::Failed) => self.tp += 1,
            (Class::Failed, Class::Normal) => self.fn_ += 1,
            (Class::Normal, Class::Failed) => self.fp += 1,
            (Class::Normal, Class::Normal) => self.tn += 1,
        }
    }

    pub fn score(&self) -> Scores {
        score(self)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: Self) -> Self {
        ConfusionMatrix::new(self.tp + o.tp, self.fn_ + o.fn_, self.fp + o.fp, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub precision: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    if p + r == 0.0 {
        return Some(0.0);
    }
    Some(2.0 * p * r / (p + r))
}

pub fn score(m: &ConfusionMatrix) -> Scores {
    let precision = ratio(m.tp, m.tp + m.fp);
    let tpr = ratio(m.tp, m.tp + m.fn_);
    Scores {
        precision,
        tpr,
        fpr: ratio(m.fp, m.fp + m.tn),
        f1: f1_score(precision, tpr),
    }
}

pub fn confusion(model: &TreeModel, test: &[LabeledInstance]) -> Result<ConfusionMatrix, C45Error> {
    let mut m = ConfusionMatrix::default();
    for inst in test {
        let (predicted, _) = model.predict(&inst.features)?;
        m.record(inst.label, predicted);
    }
    Ok(m)
}

/// Where SMOTE runs relative to the fold split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoteMode {
    Off,
    /// Oversample each training fold only; test folds stay original.
    PerFold(SmoteConfig),
    /// Oversample the whole dataset, then split.
    BeforeCv(SmoteConfig),
}

impl SmoteMode {
    pub fn label(&self) -> &'static str {
        match self {
            SmoteMode::Off => "no",
            SmoteMode::PerFold(_) => "per-fold",
            SmoteMode::BeforeCv(_) => "before-cv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub tree: TrainConfig,
    pub folds: usize,
    pub seed: u64,
    pub smote: SmoteMode,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            tree: TrainConfig::default(),
            folds: 10,
            seed: 0,
            smote: SmoteMode::PerFold(SmoteConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub matrix: ConfusionMatrix,
    pub scores: Scores,
    pub leaves: usize,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: CvConfig,
    /// Sum of the per-fold test matrices.
    pub pooled: ConfusionMatrix,
    pub scores: Scores,
    /// Mean of each per-fold metric over the folds where it is defined.
    pub macro_scores: Scores,
    pub folds: Vec<FoldResult>,
}

impl EvalReport {
    pub fn single_leaf_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.leaves == 1).count()
    }

    pub fn mean_leaves(&self) -> f64 {
        self.folds.iter().map(|f| f.leaves as f64).sum::<f64>() / self.folds.len() as f64
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn macro_average(folds: &[FoldResult]) -> Scores {
    Scores {
        precision: mean_defined(folds.iter().map(|f| f.scores.precision)),
        tpr: mean_defined(folds.iter().map(|f| f.scores.tpr)),
        fpr: mean_defined(folds.iter().map(|f| f.scores.fpr)),
        f1: mean_defined(folds.iter().map(|f| f.scores.f1)),
    }
}

/// Stratified k-fold cross-validation of the C4.5 learner.
pub fn crossval(data: &Dataset, cfg: &CvConfig) -> Result<EvalReport, EvalError> {
    cfg.tree.validate()?;
    let data = match cfg.smote {
        SmoteMode::BeforeCv(smote) => dataset::smote(data, &smote)?.data,
        _ => data.clone(),
    };
    let splits = dataset::stratified_kfold(&data, cfg.folds, cfg.seed)?;

    let mut folds = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let mut train = data.subset(&split.train);
        if let SmoteMode::PerFold(smote) = cfg.smote {
            let fold_cfg = SmoteConfig {
                seed: smote.seed.wrapping_add(i as u64),
                ..smote
            };
            train = dataset::smote(&train, &fold_cfg)?.data;
        }
        let model = TreeModel::train(&train, &cfg.tree)?;
        let test: Vec<LabeledInstance> =
            split.test.iter().map(|&j| data.instances[j].clone()).collect();
        let matrix = confusion(&model, &test)?;
        folds.push(FoldResult {
            matrix,
            scores: matrix.score(),
            leaves: model.leaf_count(),
            train_size: train.len(),
        });
    }

    let pooled: ConfusionMatrix = folds.iter().map(|f| f.matrix).sum();
    Ok(EvalReport {
        config: *cfg,
        pooled,
        scores: pooled.score(),
        macro_scores: macro_average(&folds),
        folds,
    })
}

/// One line of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub min_leaf: usize,
    pub report: EvalReport,
}

impl SweepRow {
    /// Every fold collapsed to a single leaf.
    pub fn degenerate(&self) -> bool {
        self.report.single_leaf_folds() == self.report.folds.len()
    }
}

fn fmt_table(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn fmt_csv(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}

/// Fixed-width table with the columns
/// `Parameter M | If SMOTE | Precision | TPR | FPR | F1-measure`.
pub fn render_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<10} {:>9} {:>7} {:>7} {:>10}  notes",
        "Parameter M", "If SMOTE", "Precision", "TPR", "FPR", "F1-measure"
    );
    for row in rows {
        let s = &row.report.scores;
        let note = if row.degenerate() {
            "single-leaf model".to_string()
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>9} {:>7} {:>7} {:>10}  {}",
            format!("M={}", row.min_leaf),
            row.report.config.smote.label(),
            fmt_table(s.precision),
            fmt_table(s.tpr),
            fmt_table(s.fpr),
            fmt_table(s.f1),
            note
        );
    }
    out
}

pub const REPORT_CSV_HEADER: &str = "m,smote,cf,folds,seed,precision,tpr,fpr,f1,tp,fn,fp,tn,\
macro_precision,macro_tpr,macro_fpr,macro_f1,mean_leaves,single_leaf_folds";

/// Machine-readable form of [`render_table`], pooled and macro metrics.
pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let (s, m, p) = (&r.scores, &r.macro_scores, &r.pooled);
        let _ = writeln!(
            out,
            "{},{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:?},{}",
            row.min_leaf,
            r.config.smote.label(),
            r.config.tree.confidence_factor,
            r.config.folds,
            r.config.seed,
            fmt_csv(s.precision),
            fmt_csv(s.tpr),
            fmt_csv(s.fpr),
            fmt_csv(s.f1),
            p.tp,
            p.fn_,
            p.fp,
            p.tn,
            fmt_csv(m.precision),
            fmt_csv(m.tpr),
            fmt_csv(m.fpr),
            fmt_csv(m.f1),
            r.mean_leaves(),
            r.single_leaf_folds()
        );
    }
    out
}
