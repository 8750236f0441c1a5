//! Evaluation protocol: cohorts with prediction horizons, covariate
//! matching, stratified splits, grouped bag-of-words baseline, elastic-net
//! classification and AUC/calibration reporting.

mod cohort;
pub mod elastic_net;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cohort::{
    build_cohort, match_negatives, smd, split, Cohort, CohortInstance, Exclusions, Matching, Split, TaskSpec,
    DEFAULT_RATIOS, HORIZONS,
};
pub use elastic_net::{fit_elastic_net, fit_penalized, CvResult, ElasticNetConfig, LinearModel};
pub use metrics::{auc, calibration, pair_counts, Calibration, CalibrationBin};

use crate::corpus::{group_code, Record, Vocabulary};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::inference::{infer_records, InferConfig};
use crate::synthgen::Label;
use crate::util::{fingerprint_hex, hash64};

/// Event counts per vocabulary group, indexed like `vocab.groups()`.
/// Codes outside the vocabulary still count when their group is known.
pub fn bow_features(record: &Record, vocab: &Vocabulary) -> Vec<f64> {
    let groups = vocab.groups();
    let mut counts = vec![0.0; groups.len()];
    for e in &record.events {
        let g = group_code(&e.code, vocab.group_depth);
        if let Ok(i) = groups.binary_search_by(|x| (**x).cmp(g)) {
            counts[i] += 1.0;
        }
    }
    counts
}

/// Drops columns whose total is zero; returns the surviving column indices.
pub fn drop_zero_columns(rows: &mut [Vec<f64>]) -> Vec<usize> {
    let p = rows.first().map_or(0, Vec::len);
    let keep: Vec<usize> = (0..p).filter(|&j| rows.iter().any(|r| r[j] != 0.0)).collect();
    for r in rows.iter_mut() {
        *r = keep.iter().map(|&j| r[j]).collect();
    }
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub elastic_net: ElasticNetConfig,
    pub split_seed: u64,
    pub ratios: [f64; 3],
    pub calibration_bins: usize,
    pub infer: InferConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            elastic_net: ElasticNetConfig::default(),
            split_seed: 1,
            ratios: DEFAULT_RATIOS,
            calibration_bins: 10,
            infer: InferConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub name: String,
    pub features: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub nonzero_weights: usize,
    pub cv_auc: f64,
    pub test_auc: f64,
    /// Absent when the validation part holds a single class.
    pub validation_auc: Option<f64>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub positives: usize,
    pub negatives_eligible: usize,
    pub negatives_used: usize,
    pub excluded: Exclusions,
    pub smd_before: Option<[f64; 2]>,
    pub smd_after: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    /// `[positives, negatives]` per part.
    pub train: [usize; 2],
    pub test: [usize; 2],
    pub validation: [usize; 2],
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub name: String,
    pub horizon_days: u32,
    pub cohort: CohortSummary,
    pub split: SplitSummary,
    /// Hash over the truncated inputs both representations were computed from.
    pub input_hash: String,
    pub infer_epochs: u32,
    pub representations: Vec<RepresentationReport>,
}

impl TaskReport {
    pub fn representation(&self, name: &str) -> Option<&RepresentationReport> {
        self.representations.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub model_fingerprint: String,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Both feature sets of one task, row-aligned.
#[derive(Debug, Clone)]
pub struct TaskFeatures {
    pub record_ids: Vec<String>,
    pub labels: Vec<bool>,
    pub cutoff_days: Vec<u32>,
    /// `train`, `test` or `validation` per row.
    pub parts: Vec<&'static str>,
    pub bow_columns: Vec<String>,
    pub bow: Vec<Vec<f64>>,
    pub embedding: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct TaskRun {
    pub report: TaskReport,
    pub features: TaskFeatures,
}

fn evaluate<X: Clone>(
    name: &str,
    rows: &[Vec<X>],
    labels: &[bool],
    split: &Split,
    config: &EvalConfig,
    widen: impl Fn(&X) -> f64,
) -> Result<RepresentationReport> {
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (
            idx.iter().map(|&i| rows[i].iter().map(&widen).collect()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (xt, yt) = pick(&split.train);
    let cv = fit_elastic_net(&xt, &yt, &config.elastic_net)?;
    let scores = |x: &[Vec<f64>]| -> Vec<f64> { x.iter().map(|r| cv.model.predict_proba(r)).collect() };
    let (xs, ys) = pick(&split.test);
    let test_scores = scores(&xs);
    let (xv, yv) = pick(&split.validation);
    let validation_auc = auc(&scores(&xv), &yv).ok();
    Ok(RepresentationReport {
        name: name.to_string(),
        features: rows.first().map_or(0, Vec::len),
        lambda: cv.model.lambda,
        alpha: cv.model.alpha,
        nonzero_weights: cv.model.std_weights.iter().filter(|w| **w != 0.0).count(),
        cv_auc: cv.cv_auc,
        test_auc: auc(&test_scores, &ys)?,
        validation_auc,
        calibration: calibration(&test_scores, &ys, config.calibration_bins)?,
    })
}

/// Builds the cohort for `task`, matches, splits, computes both
/// representations from the same truncated inputs and scores an elastic
/// net on each.
pub fn run_task(
    corpus: &crate::corpus::Corpus,
    labels: &BTreeMap<String, Label>,
    task: &TaskSpec,
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    config: &EvalConfig,
) -> Result<TaskRun> {
    let mut cohort = build_cohort(corpus, labels, task)?;
    let before = cohort.positives.len() + cohort.negatives.len();
    cohort.positives.retain(|i| !model.encode(&i.input).is_empty());
    cohort.negatives.retain(|i| !model.encode(&i.input).is_empty());
    cohort.excluded.unrepresentable = before - cohort.positives.len() - cohort.negatives.len();
    if cohort.positives.is_empty() {
        return Err(Error::Data(format!("task '{}' has no representable positives", task.name)));
    }
    let negatives_eligible = cohort.negatives.len();

    let (negatives, smd_before, smd_after) = if task.matching {
        let pc: Vec<[f64; 2]> = cohort.positives.iter().map(CohortInstance::covariates).collect();
        let nc: Vec<[f64; 2]> = cohort.negatives.iter().map(CohortInstance::covariates).collect();
        let m = match_negatives(&pc, &nc)?;
        let mut chosen: Vec<usize> = m.matched.clone();
        chosen.sort_unstable();
        let negs: Vec<CohortInstance> = chosen.iter().map(|&i| cohort.negatives[i].clone()).collect();
        (negs, Some(m.smd_before), Some(m.smd_after))
    } else {
        (std::mem::take(&mut cohort.negatives), None, None)
    };
    let instances: Vec<CohortInstance> = cohort.positives.iter().cloned().chain(negatives).collect();
    let labels_vec: Vec<bool> = instances.iter().map(|i| i.label).collect();
    let parts = split(&labels_vec, config.ratios, config.split_seed)?;

    let mut hash_bytes = Vec::with_capacity(instances.len() * 8);
    for i in &instances {
        hash_bytes.extend_from_slice(&i.input.content_hash().to_le_bytes());
    }
    let input_hash = fingerprint_hex(&hash_bytes);

    let inputs: Vec<Record> = instances.iter().map(|i| i.input.clone()).collect();
    let mut bow: Vec<Vec<f64>> = inputs.iter().map(|r| bow_features(r, vocab)).collect();
    let kept = drop_zero_columns(&mut bow);
    let bow_columns: Vec<String> = kept.iter().map(|&j| vocab.groups()[j].to_string()).collect();
    let embedding: Vec<Vec<f32>> = infer_records(model, &inputs, &config.infer)
        .into_iter()
        .map(|r| r.map(|v| v.vector))
        .collect::<Result<_>>()?;

    let representations = vec![
        evaluate("bow", &bow, &labels_vec, &parts, config, |v| *v)?,
        evaluate("embedding", &embedding, &labels_vec, &parts, config, |v| *v as f64)?,
    ];

    let count = |idx: &[usize]| {
        let pos = idx.iter().filter(|&&i| labels_vec[i]).count();
        [pos, idx.len() - pos]
    };
    let mut split_bytes = Vec::new();
    for part in [&parts.train, &parts.test, &parts.validation] {
        for &i in part {
            split_bytes.extend_from_slice(instances[i].record_id.as_bytes());
            split_bytes.push(0);
        }
        split_bytes.push(1);
    }
    let mut part_of = vec!["train"; instances.len()];
    parts.test.iter().for_each(|&i| part_of[i] = "test");
    parts.validation.iter().for_each(|&i| part_of[i] = "validation");

    let report = TaskReport {
        name: task.name.clone(),
        horizon_days: task.horizon_days,
        cohort: CohortSummary {
            positives: cohort.positives.len(),
            negatives_eligible,
            negatives_used: instances.len() - cohort.positives.len(),
            excluded: cohort.excluded,
            smd_before,
            smd_after,
        },
        split: SplitSummary {
            train: count(&parts.train),
            test: count(&parts.test),
            validation: count(&parts.validation),
            hash: format!("{:016x}", hash64(&split_bytes)),
        },
        input_hash,
        infer_epochs: config.infer.epochs,
        representations,
    };
    let features = TaskFeatures {
        record_ids: instances.iter().map(|i| i.record_id.clone()).collect(),
        labels: labels_vec,
        cutoff_days: instances.iter().map(|i| i.cutoff_day).collect(),
        parts: part_of,
        bow_columns,
        bow,
        embedding,
    };
    Ok(TaskRun { report, features })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `<prefix>.instances.tsv` (row, record_id, label, part,
/// cutoff_day), `<prefix>.bow.tsv` (sparse row, col, value),
/// `<prefix>.bow_columns.tsv` (col, group) and `<prefix>.embedding.tsv`
/// (row, k values).
pub fn export_features(dir: &Path, prefix: &str, f: &TaskFeatures, fingerprint: Option<&str>) -> Result<()> {
    let header = |w: &mut BufWriter<File>, cols: &str| -> std::io::Result<()> {
        if let Some(fp) = fingerprint {
            writeln!(w, "# fingerprint={fp}")?;
        }
        writeln!(w, "# {cols}")
    };
    let write = |name: &str, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(format!("{prefix}.{name}.tsv"));
        let mut w = create(&path)?;
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    write("instances", &|w| {
        header(w, "row\trecord_id\tlabel\tpart\tcutoff_day")?;
        for r in 0..f.record_ids.len() {
            writeln!(w, "{r}\t{}\t{}\t{}\t{}", f.record_ids[r], f.labels[r] as u8, f.parts[r], f.cutoff_days[r])?;
        }
        Ok(())
    })?;
    write("bow", &|w| {
        header(w, "row\tcol\tvalue")?;
        for (r, row) in f.bow.iter().enumerate() {
            for (c, v) in row.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                writeln!(w, "{r}\t{c}\t{v}")?;
            }
        }
        Ok(())
    })?;
    write("bow_columns", &|w| {
        header(w, "col\tgroup")?;
        for (c, g) in f.bow_columns.iter().enumerate() {
            writeln!(w, "{c}\t{g}")?;
        }
        Ok(())
    })?;
    write("embedding", &|w| {
        header(w, "row\tvalues...")?;
        for (r, row) in f.embedding.iter().enumerate() {
            write!(w, "{r}")?;
            for v in row {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}
