//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rtentropy::c45::{Node, TrainConfig, TreeModel};
use rtentropy::cli::{self, FeaturizeArgs, SmoteOpts, SmoteSwitch, SweepArgs};
use rtentropy::dataset::{self, Class, Dataset, LabeledInstance, SmoteConfig};
use rtentropy::entropy::{self, featurize};
use rtentropy::metrics::{self, ConfusionMatrix};
use rtentropy::synthload;
use rtentropy::trace::{self, parse_trace, Trace};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
    /// Primary outputs, compared byte-for-byte by the determinism check.
    artifact: Vec<u8>,
}

impl Outcome {
    fn new(failures: Vec<String>, summary: String, artifact: Vec<u8>) -> Self {
        let pass = failures.is_empty();
        let detail = if pass {
            summary
        } else {
            format!("{summary}; {}", failures.join("; "))
        };
        Outcome { pass, detail, artifact }
    }
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn within_budget(failures: &mut Vec<String>, start: Instant, budget: Duration) {
    let took = start.elapsed();
    check(failures, took < budget, || format!("took {took:?}, budget {budget:?}"));
}

fn sample_trace_worked_example() -> Outcome {
    let start = Instant::now();
    let mut f = Vec::new();
    let trace = parse_trace(SAMPLE_TRACE, "t1").expect("sample trace parses");
    let d = trace::compute_durations(&trace).expect("balanced");
    for (name, want) in [("Main", 132), ("FuncA", 80), ("FuncB", 250), ("FuncC", 100)] {
        check(&mut f, d.get(name) == Some(want), || {
            format!("{name} duration {:?} != {want}", d.get(name))
        });
    }
    check(&mut f, d.entries.len() == 4, || "extra functions in duration table".into());

    // Brute-force arithmetic over the four durations and three unit edges.
    let total = 562.0;
    let h_a_ref: f64 = [132.0, 80.0, 250.0, 100.0]
        .iter()
        .map(|t: &f64| -(t / total) * (t / total).log2())
        .sum();
    let h_b_ref = 3f64.log2();
    let feats = featurize(&trace).expect("featurize");
    check(&mut f, (feats.h_a - 1.8544).abs() <= 1e-3, || format!("h_a {} vs 1.8544", feats.h_a));
    check(&mut f, (feats.h_a - h_a_ref).abs() <= 1e-12, || {
        format!("h_a {} vs brute force {h_a_ref}", feats.h_a)
    });
    check(&mut f, (feats.h_b - h_b_ref).abs() <= 1e-9, || format!("h_b {} vs log2 3", feats.h_b));
    check(&mut f, (feats.h - (feats.h_a + feats.h_b) / 2.0).abs() <= 1e-12, || {
        format!("h {} is not the mean", feats.h)
    });
    within_budget(&mut f, start, Duration::from_secs(1));
    Outcome::new(
        f,
        format!("h_a={:.6} h_b={:.6} h={:.6}", feats.h_a, feats.h_b, feats.h),
        Vec::new(),
    )
}

fn scaled(trace: &Trace, factor: u64) -> Trace {
    let mut t = trace.clone();
    for e in &mut t.events {
        e.timestamp *= factor;
    }
    t
}

fn entropy_oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut f = Vec::new();
    let mut r = rng(2);
    let mut worst = 0f64;
    for i in 0..100 {
        let trace = random_trace(&mut r, 10, 50);
        let got = featurize(&trace).expect("random traces are balanced");
        let (a, b, h) = oracle_features(&trace);
        let err = (got.h_a - a).abs().max((got.h_b - b).abs()).max((got.h - h).abs());
        worst = worst.max(err);
        check(&mut f, err <= 1e-9, || format!("trace {i}: features differ by {err:e}"));

        let d = trace::compute_durations(&trace).unwrap();
        let c = trace::compute_call_counts(&trace).unwrap();
        let sa: f64 = entropy::duration_shares(&d).iter().sum();
        check(&mut f, (sa - 1.0).abs() <= 1e-12, || format!("trace {i}: Σα = {sa}"));
        if c.total() > 0 {
            let sb: f64 = entropy::call_shares(&c).iter().sum();
            check(&mut f, (sb - 1.0).abs() <= 1e-12, || format!("trace {i}: Σβ = {sb}"));
        }

        let factor = r.random_range(2..1000);
        let s = featurize(&scaled(&trace, factor)).unwrap();
        let serr = (s.h_a - got.h_a).abs().max((s.h_b - got.h_b).abs());
        check(&mut f, serr <= 1e-9, || format!("trace {i}: scaling by {factor} moved features {serr:e}"));
    }
    within_budget(&mut f, start, Duration::from_secs(5));
    Outcome::new(f, format!("100 traces, max deviation {worst:.1e}"), Vec::new())
}

fn random_points(seed: u64, counts: [usize; 2]) -> Dataset {
    let mut r = rng(seed);
    let mut instances = Vec::new();
    for class in Class::ALL {
        for i in 0..counts[class.index()] {
            let shift = if class == Class::Failed { 0.5 } else { 0.0 };
            let features = (0..3).map(|_| r.random_range(0.0..3.0) + shift).collect();
            instances.push(LabeledInstance::new(format!("{class}{i}"), features, class));
        }
    }
    Dataset::new(instances)
}

fn smote_counts() -> Outcome {
    let mut f = Vec::new();
    let mut artifact = Vec::new();
    let mut summary = Vec::new();
    // (failed, normal, expected multiplier, expected failed after)
    for (failed, normal, pct, after) in [(1119, 14227, 300, 4476), (185, 3025, 400, 925)] {
        let data = random_points(failed as u64, [normal, failed]);
        let cfg = SmoteConfig::default();
        let out = dataset::smote(&data, &cfg).expect("smote");
        check(&mut f, out.minority == Class::Failed, || "minority is not `failed`".into());
        check(&mut f, out.multiplier * 100 == pct, || {
            format!("({failed},{normal}) amount {}% != {pct}%", out.multiplier * 100)
        });
        let [n_after, f_after] = out.data.class_counts();
        check(&mut f, f_after == after && n_after == normal, || {
            format!("({failed},{normal}) gives {f_after} failed / {n_after} normal, want {after}")
        });
        summary.push(format!("{}%→{f_after}", out.multiplier * 100));

        let minority: Vec<&[f64]> = data
            .instances
            .iter()
            .filter(|i| i.label == Class::Failed)
            .map(|i| i.features.as_slice())
            .collect();
        let by_id: std::collections::HashMap<&str, &[f64]> = data
            .instances
            .iter()
            .map(|i| (i.trace_id.as_str(), i.features.as_slice()))
            .collect();
        let mut bad = 0;
        for s in out.data.instances.iter().filter(|i| i.synthetic) {
            let origin = s.trace_id.split("~smote").next().unwrap();
            let ok = by_id
                .get(origin)
                .and_then(|x| convex_witness(&s.features, x, &minority, 1e-12))
                .is_some();
            if !ok {
                bad += 1;
            }
        }
        check(&mut f, bad == 0, || format!("{bad} synthetic points fail the convex check"));
        out.data.to_writer(&mut artifact).expect("write csv");
    }
    Outcome::new(f, summary.join(", "), artifact)
}

/// Pushes training rows down the tree and checks that both branches of every
/// internal node receive at least `m` of them.
fn children_admissible(node: &Node, rows: &[&[f64]], m: usize) -> bool {
    match node {
        Node::Leaf { .. } => true,
        Node::Internal {
            attribute,
            threshold,
            left,
            right,
            ..
        } => {
            let (l, r): (Vec<&[f64]>, Vec<&[f64]>) = rows.iter().partition(|x| x[*attribute] <= *threshold);
            l.len() >= m && r.len() >= m && children_admissible(left, &l, m) && children_admissible(right, &r, m)
        }
    }
}

fn rows_of(data: &Dataset) -> Vec<&[f64]> {
    data.instances.iter().map(|i| i.features.as_slice()).collect()
}

fn c45_correctness() -> Outcome {
    let start = Instant::now();
    let mut f = Vec::new();
    let mut artifact = Vec::new();
    let mut r = rng(4);
    let mut splits = 0;
    for i in 0..50 {
        let data = tiny_dataset(&mut r);
        let m = 1 + i % 3;
        let cfg = TrainConfig {
            min_leaf: m,
            ..TrainConfig::default()
        };
        let grown = TreeModel::grow(&data, &cfg).expect("grow");
        let got = match &grown.root {
            Node::Internal {
                attribute, threshold, ..
            } => Some((*attribute, *threshold)),
            Node::Leaf { .. } => None,
        };
        let want = oracle_root_split(&data, m).map(|(a, t, _)| (a, t));
        let same = match (got, want) {
            (None, None) => true,
            (Some((ga, gt)), Some((wa, wt))) => ga == wa && (gt - wt).abs() <= 1e-12,
            _ => false,
        };
        splits += usize::from(want.is_some());
        check(&mut f, same, || format!("dataset {i} (M={m}): root {got:?}, oracle {want:?}"));

        let trained = TreeModel::train(&data, &cfg).expect("train");
        for (label, tree) in [("grown", &grown), ("pruned", &trained)] {
            check(&mut f, children_admissible(&tree.root, &rows_of(&data), m), || {
                format!("dataset {i}: {label} tree has a branch below M={m}")
            });
        }
        artifact.extend(trained.to_text().bytes());
    }

    let big = noisy_dataset(500, 500, 0.3);
    for m in [2, 5, 20] {
        let cfg = TrainConfig {
            min_leaf: m,
            ..TrainConfig::default()
        };
        let tree = TreeModel::train(&big, &cfg).unwrap();
        check(&mut f, children_admissible(&tree.root, &rows_of(&big), m), || {
            format!("500-instance tree has a branch below M={m}")
        });
        artifact.extend(tree.to_text().bytes());
    }

    let whole = TrainConfig {
        min_leaf: big.len(),
        ..TrainConfig::default()
    };
    let one = TreeModel::train(&big, &whole).unwrap();
    check(&mut f, one.is_single_leaf(), || format!("M=|data| gives {} leaves", one.leaf_count()));

    let leaves_at = |cf: f64| {
        let cfg = TrainConfig {
            confidence_factor: cf,
            ..TrainConfig::default()
        };
        TreeModel::train(&big, &cfg).unwrap().leaf_count()
    };
    let (tight, loose) = (leaves_at(0.01), leaves_at(0.5));
    check(&mut f, tight <= loose, || format!("CF=0.01 has {tight} leaves, CF=0.5 has {loose}"));
    within_budget(&mut f, start, Duration::from_secs(30));
    Outcome::new(
        f,
        format!("50 roots ({splits} split), leaves CF0.01={tight} CF0.5={loose}"),
        artifact,
    )
}

fn metric_arithmetic() -> Outcome {
    let mut f = Vec::new();
    let mut r = rng(5);
    for i in 0..1000 {
        let [tp, fn_, fp, tn]: [u64; 4] = std::array::from_fn(|_| r.random_range(0..50));
        let s = ConfusionMatrix::new(tp, fn_, fp, tn).score();
        let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        let (p, t, fpr) = (ratio(tp, fp), ratio(tp, fn_), ratio(fp, tn));
        check(&mut f, s.precision == p && s.tpr == t && s.fpr == fpr, || {
            format!("matrix {i} ({tp},{fn_},{fp},{tn}): rates {s:?}")
        });
        let f1 = match (p, t) {
            (Some(p), Some(t)) if p + t > 0.0 => Some(2.0 * p * t / (p + t)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        let ok = match (s.f1, f1) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (a, b) => a == b,
        };
        check(&mut f, ok, || format!("matrix {i}: f1 {:?} vs {f1:?}", s.f1));
    }
    let table = metrics::f1_score(Some(0.933), Some(0.932)).unwrap_or(f64::NAN);
    check(&mut f, (table - 0.932).abs() <= 5e-4, || format!("F1(0.933, 0.932) = {table}"));
    Outcome::new(f, format!("1000 matrices, F1(0.933,0.932)={table:.4}"), Vec::new())
}

struct Benchmark {
    table: String,
    artifact: Vec<u8>,
    f1: Option<f64>,
    fpr: Option<f64>,
    fpr_off: Option<f64>,
    elapsed: Duration,
}

fn csv_field(row: &str, header: &str, name: &str) -> Option<f64> {
    let col = header.split(',').position(|h| h == name)?;
    row.split(',').nth(col)?.parse().ok()
}

fn run_benchmark(dir: &Path) -> Result<Benchmark, String> {
    let start = Instant::now();
    let spec = synthload::benchmark_spec();
    let mut runs = synthload::generate(&spec, 0..2000, &[]).map_err(|e| e.to_string())?;
    runs.extend(
        synthload::generate(&spec, 2000..2500, &synthload::benchmark_faults()).map_err(|e| e.to_string())?,
    );
    let traces = dir.join("traces");
    synthload::write_runs(&traces, &runs).map_err(|e| e.to_string())?;

    let mut diag = Vec::new();
    let features = dir.join("features.csv");
    let code = cli::cmd_featurize(
        &FeaturizeArgs {
            traces: traces.clone(),
            manifest: Some(traces.join(synthload::MANIFEST_FILE)),
            out: features.clone(),
            lenient: false,
        },
        &mut diag,
    )?;
    if code != 0 {
        return Err(format!("featurize exited {code}"));
    }

    let report = dir.join("report.csv");
    let mut table = Vec::new();
    let args = SweepArgs {
        input: features.clone(),
        m_list: vec![2],
        smote: SmoteSwitch::Both,
        smote_opts: SmoteOpts {
            ratio: 0.2,
            k: 5,
            smote_amount: None,
        },
        smote_before_cv: false,
        cf: 0.25,
        folds: 10,
        seed: 0,
        out: None,
        csv: Some(report.clone()),
    };
    cli::cmd_sweep(&args, &mut table, &mut diag)?;
    let elapsed = start.elapsed();

    let csv = fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty report")?.to_string();
    let (mut on, mut off) = (None, None);
    for line in lines {
        match line.split(',').nth(1) {
            Some("per-fold") => on = Some(line.to_string()),
            Some("no") => off = Some(line.to_string()),
            _ => {}
        }
    }
    let on = on.ok_or("no per-fold SMOTE row")?;
    let off = off.ok_or("no SMOTE-off row")?;

    let mut artifact = fs::read(&features).map_err(|e| e.to_string())?;
    artifact.extend(&table);
    artifact.extend(csv.bytes());
    Ok(Benchmark {
        table: String::from_utf8_lossy(&table).into_owned(),
        artifact,
        f1: csv_field(&on, &header, "f1"),
        fpr: csv_field(&on, &header, "fpr"),
        fpr_off: csv_field(&off, &header, "fpr"),
        elapsed,
    })
}

fn end_to_end(bench: &Result<Benchmark, String>) -> Outcome {
    let mut f = Vec::new();
    let b = match bench {
        Ok(b) => b,
        Err(e) => return Outcome::new(vec![e.clone()], "benchmark did not run".into(), Vec::new()),
    };
    check(&mut f, b.f1.is_some_and(|x| x >= 0.90), || format!("F1 {:?} < 0.90", b.f1));
    check(&mut f, b.fpr.is_some_and(|x| x <= 0.15), || format!("FPR {:?} > 0.15", b.fpr));
    check(&mut f, b.elapsed < Duration::from_secs(120), || format!("took {:?}", b.elapsed));
    Outcome::new(
        f,
        format!("F1={:?} FPR={:?} in {:.1?}", b.f1, b.fpr, b.elapsed),
        Vec::new(),
    )
}

fn imbalance_trend(bench: &Result<Benchmark, String>) -> Outcome {
    let mut f = Vec::new();
    let b = match bench {
        Ok(b) => b,
        Err(e) => return Outcome::new(vec![e.clone()], "benchmark did not run".into(), Vec::new()),
    };
    let ok = matches!((b.fpr, b.fpr_off), (Some(on), Some(off)) if on <= off);
    check(&mut f, ok, || format!("FPR with SMOTE {:?} > without {:?}", b.fpr, b.fpr_off));
    Outcome::new(f, format!("FPR smote={:?} no-smote={:?}", b.fpr, b.fpr_off), Vec::new())
}

fn determinism(first: [&[u8]; 3]) -> Outcome {
    let mut f = Vec::new();
    let again_smote = smote_counts().artifact;
    let again_tree = c45_correctness().artifact;
    let dir = tempfile::tempdir().expect("tempdir");
    let again_bench = run_benchmark(dir.path()).map(|b| b.artifact).unwrap_or_default();
    for (name, a, b) in [
        ("smote", first[0], again_smote.as_slice()),
        ("c45", first[1], again_tree.as_slice()),
        ("benchmark", first[2], again_bench.as_slice()),
    ] {
        check(&mut f, !a.is_empty() && a == b, || format!("{name} output differs between runs"));
    }
    Outcome::new(
        f,
        format!(
            "compared {} + {} + {} bytes",
            first[0].len(),
            first[1].len(),
            first[2].len()
        ),
        Vec::new(),
    )
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut report = |n: usize, name: &str, o: &Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{tag}] {name}: {}", o.detail);
        results.push(o.pass);
    };

    report(1, "worked example", &sample_trace_worked_example());
    report(2, "entropy oracle", &entropy_oracle_suite());
    let smote = smote_counts();
    report(3, "SMOTE counts", &smote);
    let tree = c45_correctness();
    report(4, "C4.5 correctness", &tree);
    report(5, "metric arithmetic", &metric_arithmetic());
    let dir = tempfile::tempdir().expect("tempdir");
    let bench = run_benchmark(dir.path());
    if let Ok(b) = &bench {
        print!("{}", b.table);
    }
    report(6, "end-to-end benchmark", &end_to_end(&bench));
    report(7, "imbalance trend", &imbalance_trend(&bench));
    let bench_bytes = bench.as_ref().map(|b| b.artifact.clone()).unwrap_or_default();
    report(8, "determinism", &determinism([&smote.artifact, &tree.artifact, &bench_bytes]));

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
