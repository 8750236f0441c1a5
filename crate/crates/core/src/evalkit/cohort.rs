//! Cohort construction, covariate matching and stratified splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{truncate, Channel, Corpus, Record};
use crate::error::{Error, Result};
use crate::synthgen::{Label, TARGET_DIAGNOSIS_CODE, TARGET_TREATMENT_CODE, WORKUP_CODE};
use crate::util::rng_for;

/// One day and roughly 1, 3, 6 and 12 months.
pub const HORIZONS: [u32; 5] = [1, 30, 91, 182, 365];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub horizon_days: u32,
    /// Positive cutoff: first event whose code starts with this prefix.
    pub target_code: String,
    /// When set, only records containing this code enter the cohort and
    /// everyone's cutoff is its first occurrence.
    pub anchor_code: Option<String>,
    pub matching: bool,
    pub min_dx_events: usize,
    pub min_history_days: u32,
    /// Negative cutoff; defaults to the corpus end day.
    pub pull_day: Option<u32>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::onset(365)
    }
}

impl TaskSpec {
    /// Predict the first target diagnosis.
    pub fn onset(horizon_days: u32) -> Self {
        TaskSpec {
            name: "onset".into(),
            horizon_days,
            target_code: TARGET_DIAGNOSIS_CODE.into(),
            anchor_code: None,
            matching: true,
            min_dx_events: 10,
            min_history_days: 730,
            pull_day: None,
        }
    }

    /// Predict the start of treatment.
    pub fn treatment(horizon_days: u32) -> Self {
        TaskSpec {
            name: "treatment".into(),
            target_code: TARGET_TREATMENT_CODE.into(),
            ..TaskSpec::onset(horizon_days)
        }
    }

    /// Predict the outcome of a workup procedure among records that had one.
    pub fn workup(horizon_days: u32) -> Self {
        TaskSpec {
            name: "workup".into(),
            anchor_code: Some(WORKUP_CODE.into()),
            matching: false,
            ..TaskSpec::onset(horizon_days)
        }
    }

    pub fn preset(name: &str, horizon_days: u32) -> Result<Self> {
        match name {
            "onset" => Ok(Self::onset(horizon_days)),
            "treatment" => Ok(Self::treatment(horizon_days)),
            "workup" => Ok(Self::workup(horizon_days)),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected onset, treatment or workup)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_days == 0 {
            return Err(Error::Config("horizon_days must be positive".into()));
        }
        if self.target_code.is_empty() {
            return Err(Error::Config("target_code must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortInstance {
    pub record_id: String,
    pub label: bool,
    pub cutoff_day: u32,
    /// Events on or before `cutoff_day - horizon`.
    pub input: Record,
    pub dx_count: usize,
    /// Days from the first to the last input event.
    pub history_days: u32,
}

impl CohortInstance {
    pub fn covariates(&self) -> [f64; 2] {
        [self.dx_count as f64, self.history_days as f64]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub unlabeled: usize,
    pub missing_target: usize,
    pub missing_anchor: usize,
    pub empty_input: usize,
    pub too_few_dx: usize,
    pub short_history: usize,
    pub unrepresentable: usize,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub positives: Vec<CohortInstance>,
    pub negatives: Vec<CohortInstance>,
    pub excluded: Exclusions,
}

fn first_day_with(record: &Record, prefix: &str) -> Option<u32> {
    record.events.iter().find(|e| e.code.starts_with(prefix)).map(|e| e.day)
}

/// Labels, cuts and filters every record of `corpus` for `task`.
pub fn build_cohort(corpus: &Corpus, labels: &BTreeMap<String, Label>, task: &TaskSpec) -> Result<Cohort> {
    task.validate()?;
    let pull_day = task.pull_day.unwrap_or_else(|| corpus.end_day());
    let mut cohort = Cohort {
        positives: Vec::new(),
        negatives: Vec::new(),
        excluded: Exclusions::default(),
    };
    let ex = &mut cohort.excluded;
    for record in &corpus.records {
        let Some(label) = labels.get(&record.record_id) else {
            ex.unlabeled += 1;
            continue;
        };
        let target = first_day_with(record, &task.target_code);
        let cutoff = match &task.anchor_code {
            Some(anchor) => match first_day_with(record, anchor) {
                Some(d) => d,
                None => {
                    ex.missing_anchor += 1;
                    continue;
                }
            },
            None if label.positive => match target {
                Some(d) => d,
                None => {
                    ex.missing_target += 1;
                    continue;
                }
            },
            None => {
                // A negative carrying the target code is mislabeled; drop it.
                if target.is_some() {
                    ex.missing_target += 1;
                    continue;
                }
                pull_day
            }
        };
        let Some(input_end) = cutoff.checked_sub(task.horizon_days) else {
            ex.empty_input += 1;
            continue;
        };
        let input = truncate(record, input_end + 1);
        let Some(first) = input.first_day() else {
            ex.empty_input += 1;
            continue;
        };
        let dx_count = input.count_channel(Channel::Diagnosis);
        let history_days = input.last_day().unwrap_or(first) - first;
        if dx_count < task.min_dx_events {
            ex.too_few_dx += 1;
            continue;
        }
        if history_days < task.min_history_days {
            ex.short_history += 1;
            continue;
        }
        let inst = CohortInstance {
            record_id: record.record_id.clone(),
            label: label.positive,
            cutoff_day: cutoff,
            input,
            dx_count,
            history_days,
        };
        if label.positive {
            cohort.positives.push(inst);
        } else {
            cohort.negatives.push(inst);
        }
    }
    if cohort.positives.is_empty() {
        return Err(Error::Data(format!("task '{}' has no eligible positives", task.name)));
    }
    Ok(cohort)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Matched negative index for each positive, in positive order.
    pub matched: Vec<usize>,
    pub smd_before: [f64; 2],
    pub smd_after: [f64; 2],
}

/// Standardized mean difference per covariate, pooled population variance.
pub fn smd(a: &[[f64; 2]], b: &[[f64; 2]]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (j, o) in out.iter_mut().enumerate() {
        let stats = |xs: &[[f64; 2]]| {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / xs.len() as f64;
            (m, v)
        };
        let ((ma, va), (mb, vb)) = (stats(a), stats(b));
        let diff = ma - mb;
        let sd = ((va + vb) / 2.0).sqrt();
        *o = if diff == 0.0 {
            0.0
        } else if sd == 0.0 {
            diff.signum() * f64::INFINITY
        } else {
            diff / sd
        };
    }
    out
}

/// Greedy nearest-neighbour matching without replacement on z-scored
/// covariates. Positives farthest from the pooled mean pick first; ties in
/// distance go to the lower negative index.
pub fn match_negatives(positives: &[[f64; 2]], negatives: &[[f64; 2]]) -> Result<Matching> {
    if positives.is_empty() {
        return Err(Error::Data("no positives to match".into()));
    }
    if negatives.len() < positives.len() {
        return Err(Error::Data(format!(
            "matching pool exhausted: {} negatives for {} positives",
            negatives.len(),
            positives.len()
        )));
    }
    let pooled: Vec<[f64; 2]> = positives.iter().chain(negatives).copied().collect();
    let mut mean = [0.0; 2];
    let mut sd = [0.0; 2];
    for j in 0..2 {
        mean[j] = pooled.iter().map(|x| x[j]).sum::<f64>() / pooled.len() as f64;
        let v = pooled.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / pooled.len() as f64;
        sd[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    let z = |x: &[f64; 2]| [(x[0] - mean[0]) / sd[0], (x[1] - mean[1]) / sd[1]];
    let zp: Vec<[f64; 2]> = positives.iter().map(z).collect();
    let zn: Vec<[f64; 2]> = negatives.iter().map(z).collect();

    let mut order: Vec<usize> = (0..zp.len()).collect();
    let norm = |v: &[f64; 2]| v[0] * v[0] + v[1] * v[1];
    order.sort_by(|&a, &b| norm(&zp[b]).total_cmp(&norm(&zp[a])).then(a.cmp(&b)));
    let mut used = vec![false; zn.len()];
    let mut matched = vec![usize::MAX; zp.len()];
    for p in order {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, n) in zn.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = (zp[p][0] - n[0]).powi(2) + (zp[p][1] - n[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        let i = best.expect("pool size checked above");
        used[i] = true;
        matched[p] = i;
    }
    let chosen: Vec<[f64; 2]> = matched.iter().map(|&i| negatives[i]).collect();
    Ok(Matching {
        smd_before: smd(positives, negatives),
        smd_after: smd(positives, &chosen),
        matched,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.75, 0.20, 0.05];

/// Stratified train/test/validation split; each label's share of a part is
/// its rounded exact share. Index lists come back sorted.
pub fn split(labels: &[bool], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let mut out = Split {
        train: Vec::new(),
        test: Vec::new(),
        validation: Vec::new(),
    };
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 3 {
            return Err(Error::Data(format!(
                "class {} has {} instances; at least 3 are needed to split",
                if class { "positive" } else { "negative" },
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_for(seed, &[b"split", &[class as u8]]));
        let n = idx.len() as f64;
        let n_train = ((ratios[0] * n).round() as usize).min(idx.len());
        let n_test = ((ratios[1] * n).round() as usize).min(idx.len() - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.test.extend_from_slice(&idx[n_train..n_train + n_test]);
        out.validation.extend_from_slice(&idx[n_train + n_test..]);
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    out.validation.sort_unstable();
    Ok(out)
}
