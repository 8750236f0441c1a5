//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs with `harness = false` so the lines always reach stdout. Three
//! thresholds come from a committed pilot run (`tests/data/pilot_oracle.toml`);
//! set `EVENTVEC_WRITE_PILOT=1` to regenerate that file from the current
//! build instead of checking against it.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use eventvec::corpus::{ingest, Corpus, Vocabulary};
use eventvec::embedding::{HuffmanTree, Mode, Objective};
use eventvec::evalkit::{self, auc, calibration, fit_penalized, EvalConfig, EvalReport, TaskSpec};
use eventvec::evalkit::elastic_net::ElasticNetConfig;
use eventvec::inference::{infer_records, nearest, InferConfig};
use eventvec::projector::{checkpoints, fit_pca2, trajectories};
use eventvec::synthgen::{self, load_labels, Label, SynthSpec};
use eventvec::trainer::{self, TrainConfig};
use eventvec::util::rng_for;
use rand::Rng;
use serde::{Deserialize, Serialize};

const PILOT_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/pilot_oracle.toml");

#[derive(Debug, Default, Serialize, Deserialize)]
struct Pilot {
    strong_embedding_auc: f64,
    self_retrieval_rate: f64,
    trajectory_fraction: f64,
    /// Criteria known to fall short; they still print FAIL but do not fail the run.
    #[serde(default)]
    known_failures: Vec<String>,
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn eventvec(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_eventvec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run eventvec");
    assert!(
        out.status.success(),
        "eventvec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const DESK: &[&str] = &[
    "--seed", "1", "--preset", "strong", "--records", "5000", "--k", "50", "--epochs", "20",
    "--min-count", "250",
];

/// gen, train, eval at desk scale in `dir`; returns the wall time.
fn desk_pipeline(dir: &Path, extra: &[&str]) -> Duration {
    let t = Instant::now();
    let with = |args: &[&str]| -> Vec<String> {
        args.iter().chain(DESK).chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        eventvec(dir, &refs)
    };
    run(with(&["gen", "--events", "events.tsv", "--labels", "labels.tsv"]));
    run(with(&["train", "events.tsv", "--out", "model.bin"]));
    run(with(&["eval", "model.bin", "events.tsv", "labels.tsv", "--out", "report.json"]));
    t.elapsed()
}

fn read_report(path: &Path) -> EvalReport {
    EvalReport::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn onset_auc(report: &EvalReport, representation: &str) -> f64 {
    report
        .tasks
        .iter()
        .find(|t| t.name == "onset")
        .and_then(|t| t.representation(representation))
        .map(|r| r.test_auc)
        .expect("onset task in report")
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = rng_for(11, &[b"gradients"]);
    let mut worst = 0.0f64;
    let mut n = 0;
    for objective in [Objective::Hs, Objective::Ns] {
        for dm in [false, true] {
            for _ in 0..100 {
                worst = worst.max(common::gradient_instance(&mut rng, objective, dm));
                n += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("{n} instances (HS/NS x DBOW/DM), worst relative error {worst:.2e}, {secs:.1}s"),
    )
}

fn huffman_optimality() -> Outcome {
    let mut rng = rng_for(12, &[b"huffman"]);
    let mut cases = 0;
    let mut optimal = true;
    for v in 2..=6usize {
        for _ in 0..200 {
            let counts: Vec<u64> = (0..v).map(|_| rng.random_range(1..=50)).collect();
            let tree = HuffmanTree::build(&counts).unwrap();
            optimal &= common::huffman_cost(&tree, &counts) == common::exhaustive_code_cost(&counts);
            cases += 1;
        }
    }
    let mut structural = true;
    for v in [100usize, 5_000, 50_000] {
        let counts: Vec<u64> = (0..v).map(|_| rng.random_range(1..=1_000_000)).collect();
        let tree = HuffmanTree::build(&counts).unwrap();
        let (prefix_free, kraft) = common::prefix_and_kraft(&tree);
        structural &= prefix_free && kraft;
    }
    outcome(
        optimal && structural,
        format!("{cases} small vocabularies optimal={optimal}; prefix-free and Kraft-equal on 100/5000/50000 tokens={structural}"),
    )
}

fn noise_fidelity() -> Outcome {
    let mut rng = rng_for(13, &[b"noise"]);
    let counts: Vec<u64> = (0..50).map(|_| rng.random_range(1..=10_000)).collect();
    let gap = common::noise_max_gap(&counts, 1_000_000, &mut rng);
    outcome(gap < 0.01, format!("max |empirical - expected| = {gap:.4} over 10^6 draws"))
}

fn metric_oracles() -> Outcome {
    let mut rng = rng_for(14, &[b"metrics"]);
    let mut auc_exact = 0;
    for case in 0..200 {
        let n = rng.random_range(2..150usize);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // half the cases on a coarse grid so ties are common
        let scores: Vec<f64> = (0..n)
            .map(|_| if case % 2 == 0 { rng.random_range(0..5) as f64 } else { rng.random() })
            .collect();
        if auc(&scores, &labels).unwrap() == common::pairwise_auc(&scores, &labels) {
            auc_exact += 1;
        }
    }

    // bins of width 0.25: {0.1, 0.2} -> pred 0.15 obs 0.5; {0.6} -> 0.6 vs 1;
    // {0.9, 1.0} -> 0.95 vs 0.5
    let c = calibration(&[0.1, 0.2, 0.6, 0.9, 1.0], &[true, false, true, false, true], 4).unwrap();
    let manual = ((0.15f64 - 0.5).powi(2) + (0.6f64 - 1.0).powi(2) + (0.95f64 - 0.5).powi(2)) / 3.0;
    let c2 = calibration(&[0.05, 0.05, 0.55, 0.95], &[false, false, true, true], 2).unwrap();
    let manual2 = ((0.05f64 - 0.0).powi(2) + ((0.55 + 0.95) / 2.0 - 1.0f64).powi(2)) / 2.0;
    let calib_ok = (c.mse - manual).abs() < 1e-12 && (c2.mse - manual2).abs() < 1e-12;

    let x: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<bool> = x
        .iter()
        .map(|r| r[0] - 0.5 * r[1] + rng.random_range(-1.5..1.5) > 0.0)
        .collect();
    let cfg = ElasticNetConfig { tolerance: 1e-12, max_iter: 1000, ..ElasticNetConfig::default() };
    let mut enet_worst = 0.0f64;
    for (lambda, alpha) in [(0.05, 1.0), (0.02, 0.5), (0.1, 0.1)] {
        let m = fit_penalized(&x, &y, lambda, alpha, &cfg).unwrap();
        let solver = common::enet_objective(&x, &y, &m.std_weights, m.std_intercept, lambda, alpha);
        let oracle = common::enet_grid_oracle(&x, &y, lambda, alpha);
        enet_worst = enet_worst.max((solver - oracle).abs());
    }
    outcome(
        auc_exact == 200 && calib_ok && enet_worst < 1e-4,
        format!("AUC exact on {auc_exact}/200; calibration recount ok={calib_ok}; elastic-net objective gap {enet_worst:.2e}"),
    )
}

struct Desk {
    dir: tempfile::TempDir,
    report: EvalReport,
}

fn determinism() -> (Outcome, Desk) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = desk_pipeline(a.path(), &["--workers", "1"]);
    let tb = desk_pipeline(b.path(), &["--workers", "1"]);
    let same = |f: &str| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
    let model_same = same("model.bin");
    let report_same = same("report.json");
    let report = read_report(&a.path().join("report.json"));
    (
        outcome(
            model_same && report_same && ta.as_secs() < 600,
            format!(
                "model identical={model_same}, report identical={report_same}, pipeline {:.0}s / {:.0}s",
                ta.as_secs_f64(),
                tb.as_secs_f64()
            ),
        ),
        Desk { dir: a, report },
    )
}

fn embedding_quality(desk: &Desk, pilot: &Pilot) -> (Outcome, f64) {
    let strong = onset_auc(&desk.report, "embedding");
    let strong_bow = onset_auc(&desk.report, "bow");
    let threshold = 0.85f64.max(pilot.strong_embedding_auc - 0.02);

    let dir = tempfile::tempdir().unwrap();
    let null_args = [
        "--seed", "2", "--preset", "null", "--records", "12000", "--k", "50", "--epochs", "20",
        "--min-count", "250", "--task", "onset",
    ];
    let run = |head: &[&str]| {
        let args: Vec<&str> = head.iter().chain(null_args.iter()).copied().collect();
        eventvec(dir.path(), &args)
    };
    run(&["gen", "--events", "events.tsv", "--labels", "labels.tsv"]);
    run(&["train", "events.tsv", "--out", "model.bin"]);
    run(&["eval", "model.bin", "events.tsv", "labels.tsv", "--out", "report.json"]);
    let null = read_report(&dir.path().join("report.json"));
    let null_emb = onset_auc(&null, "embedding");
    let null_bow = onset_auc(&null, "bow");
    let null_ok = (null_emb - 0.5).abs() <= 0.05 && (null_bow - 0.5).abs() <= 0.05;
    (
        outcome(
            strong >= threshold && null_ok,
            format!(
                "strong embedding {strong:.3} (>= {threshold:.3}), bow {strong_bow:.3}; null embedding {null_emb:.3}, bow {null_bow:.3} (0.5 +/- 0.05)"
            ),
        ),
        strong,
    )
}

fn inference_contract(pilot: &Pilot) -> (Outcome, f64) {
    let cohort = synthgen::generate(&SynthSpec::strong(), 2000, 3650, 7).unwrap();
    let corpus = cohort.corpus(7);
    let vocab = Vocabulary::build(&corpus.records, 100, 1).unwrap();
    let cfg = TrainConfig { k: 50, epochs: 20, min_count: 100, ..TrainConfig::default() };
    let model = trainer::train(&corpus, &vocab, &cfg).unwrap();
    let snapshot = |m: &eventvec::embedding::EmbeddingModel| {
        (m.doc_vectors.to_bits(), m.token_vectors.to_bits(), m.output.to_bits())
    };
    let before = snapshot(&model);
    let inferred = infer_records(&model, &corpus.records, &InferConfig::default());
    let frozen = snapshot(&model) == before;
    let mut hits = 0usize;
    for (i, v) in inferred.iter().enumerate() {
        let v = v.as_ref().unwrap();
        if nearest(&model.doc_vectors, &v.vector, 1).unwrap()[0].0 == i {
            hits += 1;
        }
    }
    let rate = hits as f64 / corpus.records.len() as f64;
    let threshold = pilot.self_retrieval_rate - 0.05;
    (
        outcome(
            frozen && rate >= threshold,
            format!("frozen parameters unchanged={frozen}; self-retrieval {rate:.3} (>= {threshold:.3}) on 2000 documents"),
        ),
        rate,
    )
}

fn parallelism(desk: &Desk) -> Outcome {
    let dir = desk.dir.path();
    let mut args: Vec<&str> = vec!["train", "events.tsv", "--out", "model4.bin"];
    args.extend(DESK);
    args.extend(["--workers", "4"]);
    eventvec(dir, &args);
    let mut args: Vec<&str> = vec!["eval", "model4.bin", "events.tsv", "labels.tsv", "--out", "report4.json"];
    args.extend(DESK);
    args.extend(["--task", "onset"]);
    eventvec(dir, &args);
    let four = onset_auc(&read_report(&dir.join("report4.json")), "embedding");
    let one = onset_auc(&desk.report, "embedding");
    outcome(
        (four - one).abs() <= 0.02,
        format!("onset embedding AUC 1 worker {one:.3}, 4 workers {four:.3}"),
    )
}

fn trajectory_property(desk: &Desk, pilot: &Pilot) -> (Outcome, f64) {
    let dir = desk.dir.path();
    let corpus = ingest(&dir.join("events.tsv"), 1).unwrap();
    let labels: BTreeMap<String, Label> = load_labels(&dir.join("labels.tsv")).unwrap().labels;
    let model = trainer::load(&dir.join("model.bin")).unwrap();
    let vocab = Vocabulary::build(&corpus.records, 250, 1).unwrap();
    let cfg = EvalConfig::default();
    let run = evalkit::run_task(&corpus, &labels, &TaskSpec::onset(30), &model, &vocab, &cfg).unwrap();
    let f = &run.features;
    let proj = fit_pca2(&f.embedding).unwrap();
    let mut centroid = [0.0f64; 2];
    let mut n_pos = 0.0;
    for (v, &y) in f.embedding.iter().zip(&f.labels) {
        if y {
            let p = proj.project(v);
            centroid[0] += p[0];
            centroid[1] += p[1];
            n_pos += 1.0;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n_pos);

    let records: Vec<(&eventvec::corpus::Record, u32)> = f
        .record_ids
        .iter()
        .zip(&f.labels)
        .filter(|(_, &y)| y)
        .take(200)
        .map(|(id, _)| (corpus.get(id).unwrap(), labels[id].event_day.unwrap()))
        .collect();
    let jobs: Vec<_> = records
        .iter()
        .map(|&(r, ev)| (r, checkpoints(r, 90), Some(ev)))
        .collect();
    let traces = trajectories(&model, &jobs, &proj, &cfg.infer);
    let dist = |p: [f64; 2]| ((p[0] - centroid[0]).powi(2) + (p[1] - centroid[1]).powi(2)).sqrt();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (mut eligible, mut closer) = (0usize, 0usize);
    for (trace, &(_, ev)) in traces.iter().zip(&records) {
        let Ok(points) = trace else { continue };
        let pre: Vec<f64> = points.iter().filter(|p| p.day <= ev).map(|p| dist(p.pc)).collect();
        let post: Vec<f64> = points.iter().filter(|p| p.day > ev).map(|p| dist(p.pc)).collect();
        if pre.is_empty() || post.is_empty() {
            continue;
        }
        eligible += 1;
        closer += (mean(&post) < mean(&pre)) as usize;
    }
    let fraction = closer as f64 / eligible.max(1) as f64;
    let threshold = 0.8f64.max(pilot.trajectory_fraction - 0.05);
    (
        outcome(
            eligible > 0 && fraction >= threshold,
            format!("{closer}/{eligible} positives closer to the positive centroid after onset ({fraction:.3}, >= {threshold:.3})"),
        ),
        fraction,
    )
}

/// DBOW/DM x HS/NS at small k on the strong task; reported, not asserted.
fn architecture_grid() -> Vec<String> {
    let cohort = synthgen::generate(&SynthSpec::strong(), 3000, 3650, 5).unwrap();
    let corpus: Corpus = cohort.corpus(5);
    let vocab = Vocabulary::build(&corpus.records, 150, 1).unwrap();
    let mut lines = Vec::new();
    for mode in [Mode::Dbow, Mode::Dm] {
        for objective in [Objective::Hs, Objective::Ns] {
            let t = Instant::now();
            let cfg = TrainConfig { mode, objective, k: 10, epochs: 10, min_count: 150, ..TrainConfig::default() };
            let model = trainer::train(&corpus, &vocab, &cfg).unwrap();
            let eval = EvalConfig { infer: InferConfig { epochs: 10, ..InferConfig::default() }, ..EvalConfig::default() };
            let run = evalkit::run_task(&corpus, &cohort.labels, &TaskSpec::onset(30), &model, &vocab, &eval).unwrap();
            let emb = run.report.representation("embedding").unwrap();
            lines.push(format!(
                "{mode:?}/{objective:?} k=10: onset test AUC {:.3}, cv AUC {:.3} ({:.0}s)",
                emb.test_auc,
                emb.cv_auc,
                t.elapsed().as_secs_f64()
            ));
        }
    }
    lines
}

fn main() {
    let write_pilot = std::env::var_os("EVENTVEC_WRITE_PILOT").is_some();
    let pilot: Pilot = if write_pilot {
        Pilot::default()
    } else {
        toml::from_str(&std::fs::read_to_string(PILOT_PATH).expect("pilot oracle file")).unwrap()
    };
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let report = |name: &'static str, o: Outcome, results: &mut Vec<(&str, Outcome)>| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("gradient correctness", gradient_correctness(), &mut results);
    report("huffman optimality", huffman_optimality(), &mut results);
    report("noise-table fidelity", noise_fidelity(), &mut results);
    report("metric oracles", metric_oracles(), &mut results);
    let (o, desk) = determinism();
    report("determinism", o, &mut results);
    let (o, strong) = embedding_quality(&desk, &pilot);
    report("embedding quality", o, &mut results);
    let (o, retrieval) = inference_contract(&pilot);
    report("inference contract", o, &mut results);
    report("parallelism contract", parallelism(&desk), &mut results);
    let (o, fraction) = trajectory_property(&desk, &pilot);
    report("trajectory property", o, &mut results);

    for line in architecture_grid() {
        println!("NOTE architecture grid: {line}");
    }

    if write_pilot {
        let p = Pilot {
            strong_embedding_auc: strong,
            self_retrieval_rate: retrieval,
            trajectory_fraction: fraction,
            known_failures: pilot.known_failures.clone(),
        };
        std::fs::write(PathBuf::from(PILOT_PATH), toml::to_string(&p).unwrap()).unwrap();
        println!("wrote {PILOT_PATH}");
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    let unexpected: Vec<&str> = failed
        .iter()
        .copied()
        .filter(|n| !pilot.known_failures.iter().any(|k| k == n))
        .collect();
    println!(
        "acceptance: {} passed, {} failed ({} known) in {:.0}s",
        results.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        start.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
