//! Seeded synthetic longitudinal records driven by latent "programs".
//!
//! Every record carries an always-on routine program plus a few background
//! programs drawn from a pool. Positive records additionally activate the
//! target program at an onset day: from then on it emits its tokens at the
//! target rate, a diagnosis marker appears after a delay, and a treatment
//! marker after a further delay. Codes are hierarchical (`dx:f03.2.4`) so
//! the vocabulary grouper has families to collapse.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Channel, Corpus, Event, Record};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// One latent process emitting codes at a constant daily rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub program_id: String,
    /// `(code, probability)`; probabilities sum to 1.
    pub tokens: Vec<(String, f64)>,
    /// Expected events per active day.
    pub rate: f64,
    /// Onset offset from the record's first day, inclusive range.
    pub onset: (u32, u32),
}

impl ProgramSpec {
    /// Program over its own code family `f{family:02}` in every channel.
    ///
    /// Channel shares follow a lab-heavy mix; inside a channel the 12 codes
    /// (3 sub-families × 4 leaves) get Zipf weights.
    pub fn family(family: u32, rate: f64) -> Self {
        let shares = [
            (Channel::Diagnosis, 0.25),
            (Channel::Lab, 0.55),
            (Channel::Medication, 0.20),
        ];
        let zipf_total: f64 = (1..=12).map(|r| 1.0 / r as f64).sum();
        let mut tokens = Vec::with_capacity(36);
        for (channel, share) in shares {
            for sub in 1..=3u32 {
                for leaf in 1..=4u32 {
                    let rank = (sub - 1) * 4 + leaf;
                    let p = share * (1.0 / rank as f64) / zipf_total;
                    tokens.push((format!("{}:f{family:02}.{sub}.{leaf}", channel.prefix()), p));
                }
            }
        }
        ProgramSpec {
            program_id: format!("f{family:02}"),
            tokens,
            rate,
            onset: (0, 0),
        }
    }

    /// Mixture of other programs' token distributions, `(program, weight)`;
    /// weights are normalized. Codes shared between parts are merged.
    pub fn mixture(program_id: impl Into<String>, parts: &[(&ProgramSpec, f64)], rate: f64) -> Self {
        let total: f64 = parts.iter().map(|(_, w)| w).sum();
        let mut merged: BTreeMap<String, f64> = BTreeMap::new();
        for (p, w) in parts {
            for (code, q) in &p.tokens {
                *merged.entry(code.clone()).or_insert(0.0) += q * w / total;
            }
        }
        ProgramSpec {
            program_id: program_id.into(),
            tokens: merged.into_iter().collect(),
            rate,
            onset: (0, 0),
        }
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.tokens.iter().map(|(_, p)| p).sum();
        if self.tokens.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "program {} token distribution sums to {total}, expected 1",
                self.program_id
            )));
        }
        if self.tokens.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::Config(format!("program {} has a negative probability", self.program_id)));
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("program {} has invalid rate {}", self.program_id, self.rate)));
        }
        if self.onset.0 > self.onset.1 {
            return Err(Error::Config(format!("program {} onset range is reversed", self.program_id)));
        }
        for (code, _) in &self.tokens {
            if Channel::of_code(code).is_none() {
                return Err(Error::Config(format!("code '{code}' lacks a channel prefix")));
            }
        }
        Ok(())
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut c: Vec<f64> = self
            .tokens
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = c.last_mut() {
            *last = 1.0;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// Index into `SynthSpec::programs`.
    pub program: usize,
    pub positive_fraction: f64,
    pub diagnosis_code: String,
    /// Days from onset to the first diagnosis marker.
    pub diagnosis_delay: (u32, u32),
    /// Repeat diagnosis markers per day after the first.
    pub diagnosis_rate: f64,
    pub treatment_code: String,
    /// Days from diagnosis to the first treatment marker.
    pub treatment_delay: (u32, u32),
    pub treatment_rate: f64,
}

/// Procedure-style anchor event used to select a cohort independently of
/// the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkupSpec {
    pub code: String,
    /// Positives get the anchor up to this many days before diagnosis.
    pub lead_days: u32,
    /// Fraction of negatives that also receive an anchor.
    pub negative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub programs: Vec<ProgramSpec>,
    pub always_on: Vec<usize>,
    pub background_pool: Vec<usize>,
    pub backgrounds_per_record: usize,
    pub target: TargetSpec,
    pub workup: Option<WorkupSpec>,
    /// Shortest follow-up of a negative record.
    pub min_span_days: u32,
}

pub const TARGET_DIAGNOSIS_CODE: &str = "dx:f07.9.1";
pub const TARGET_TREATMENT_CODE: &str = "med:f07.9.1";
pub const WORKUP_CODE: &str = "dx:f99.1.1";
/// Share of target-program events drawn from the target's own code family.
pub const TARGET_OWN_SHARE: f64 = 0.5;
/// Target rate of the strong-signal preset.
pub const STRONG_TARGET_RATE: f64 = 0.03;

impl SynthSpec {
    /// Routine family `f00`, background families `f01`–`f06`, target `f07`.
    /// `target_rate` controls how much the target program emits after onset;
    /// zero leaves only the markers.
    pub fn clinical(target_rate: f64) -> Self {
        let mut programs = vec![ProgramSpec::family(0, 0.1)];
        for f in 1..=6 {
            programs.push(ProgramSpec::family(f, 0.08));
        }
        // The target program mostly raises routine activity; only a share of
        // its events come from its own family.
        let own = ProgramSpec::family(7, target_rate);
        let mut target = ProgramSpec::mixture("f07", &[(&own, TARGET_OWN_SHARE), (&programs[0], 1.0 - TARGET_OWN_SHARE)], target_rate);
        target.onset = (400, 4000);
        programs.push(target);
        SynthSpec {
            programs,
            always_on: vec![0],
            background_pool: (1..=6).collect(),
            backgrounds_per_record: 2,
            target: TargetSpec {
                program: 7,
                positive_fraction: 0.2,
                diagnosis_code: TARGET_DIAGNOSIS_CODE.into(),
                diagnosis_delay: (180, 540),
                diagnosis_rate: 0.02,
                treatment_code: TARGET_TREATMENT_CODE.into(),
                treatment_delay: (30, 180),
                treatment_rate: 0.03,
            },
            workup: Some(WorkupSpec {
                code: WORKUP_CODE.into(),
                lead_days: 60,
                negative_fraction: 0.25,
            }),
            min_span_days: 365,
        }
    }

    /// Strong-signal preset.
    pub fn strong() -> Self {
        Self::clinical(STRONG_TARGET_RATE)
    }

    /// No target signal and no workup anchor: positives differ from
    /// negatives only after the diagnosis marker.
    pub fn null() -> Self {
        SynthSpec {
            workup: None,
            ..Self::clinical(0.0)
        }
    }

    /// Shortest positive record: room for the earliest onset plus the
    /// longest diagnosis delay.
    pub fn min_positive_span(&self) -> u32 {
        let onset = self.programs.get(self.target.program).map_or(0, |p| p.onset.0);
        onset + self.target.diagnosis_delay.1 + 1
    }

    pub fn validate(&self, history_length_days: u32) -> Result<()> {
        let n = self.programs.len();
        for p in &self.programs {
            p.validate()?;
        }
        let t = self.target.program;
        if t >= n {
            return Err(Error::Config(format!("target program index {t} out of range")));
        }
        if self.always_on.contains(&t) || self.background_pool.contains(&t) {
            return Err(Error::Config("the target program must not also be a background program".into()));
        }
        if self.always_on.iter().chain(&self.background_pool).any(|&i| i >= n) {
            return Err(Error::Config("program index out of range".into()));
        }
        if self.backgrounds_per_record > self.background_pool.len() {
            return Err(Error::Config("backgrounds_per_record exceeds the background pool".into()));
        }
        if !(0.0..=1.0).contains(&self.target.positive_fraction) {
            return Err(Error::Config("positive_fraction must lie in [0, 1]".into()));
        }
        let tgt = &self.target;
        if tgt.diagnosis_delay.0 > tgt.diagnosis_delay.1 || tgt.treatment_delay.0 > tgt.treatment_delay.1 {
            return Err(Error::Config("delay ranges are reversed".into()));
        }
        if Channel::of_code(&tgt.diagnosis_code).is_none() || Channel::of_code(&tgt.treatment_code).is_none() {
            return Err(Error::Config("marker codes need a channel prefix".into()));
        }
        if self.min_span_days == 0 {
            return Err(Error::Config("min_span_days must be positive".into()));
        }
        let need = self.min_span_days.max(self.min_positive_span());
        if history_length_days < need {
            return Err(Error::Config(format!(
                "history_length_days ({history_length_days}) cannot hold a {need}-day record"
            )));
        }
        if let Some(w) = &self.workup {
            if Channel::of_code(&w.code).is_none() || !(0.0..=1.0).contains(&w.negative_fraction) {
                return Err(Error::Config("invalid workup spec".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub positive: bool,
    /// Target onset day, positives only.
    pub event_day: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub records: Vec<Record>,
    pub labels: BTreeMap<String, Label>,
    /// The day the data was "pulled"; every event precedes it.
    pub end_day: u32,
}

impl GeneratedCohort {
    pub fn corpus(&self, seed: u64) -> Corpus {
        Corpus::from_records(self.records.clone(), seed)
    }

    pub fn positives(&self) -> usize {
        self.labels.values().filter(|l| l.positive).count()
    }
}

pub fn record_id(i: usize) -> String {
    format!("r{i:06}")
}

/// Generates `n_records` records spanning up to `history_length_days`.
pub fn generate(spec: &SynthSpec, n_records: usize, history_length_days: u32, seed: u64) -> Result<GeneratedCohort> {
    spec.validate(history_length_days)?;
    let n_pos = (n_records as f64 * spec.target.positive_fraction).round() as usize;
    let mut positive = vec![false; n_records];
    let mut label_rng = rng_for(seed, &[b"labels"]);
    for i in index::sample(&mut label_rng, n_records, n_pos.min(n_records)) {
        positive[i] = true;
    }
    let cumulative: Vec<Vec<f64>> = spec.programs.iter().map(ProgramSpec::cumulative).collect();

    let generated: Vec<(Record, Label)> = (0..n_records)
        .into_par_iter()
        .map(|i| {
            let id = record_id(i);
            let mut rng = rng_for(seed, &[b"record", id.as_bytes()]);
            let (events, label) =
                generate_record(spec, &cumulative, positive[i], history_length_days, &mut rng);
            (Record::from_events(id, events, seed), label)
        })
        .collect();

    let mut records = Vec::with_capacity(n_records);
    let mut labels = BTreeMap::new();
    for (r, l) in generated {
        labels.insert(r.record_id.clone(), l);
        records.push(r);
    }
    Ok(GeneratedCohort {
        records,
        labels,
        end_day: history_length_days,
    })
}

fn uniform_day(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> u32 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Poisson process of `rate` on days `[from, to)` drawing codes from `program`.
fn emit(
    program: &ProgramSpec,
    cumulative: &[f64],
    rate: f64,
    from: u32,
    to: u32,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Event>,
) {
    if to <= from || rate <= 0.0 {
        return;
    }
    let mean = rate * (to - from) as f64;
    let n = Poisson::new(mean).unwrap().sample(rng) as usize;
    let days = Uniform::new(from, to).unwrap();
    for _ in 0..n {
        let u: f64 = rng.random();
        let j = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        out.push(Event::new(days.sample(rng), &program.tokens[j].0).unwrap());
    }
}

fn emit_marker(code: &str, first: u32, rate: f64, end: u32, rng: &mut ChaCha8Rng, out: &mut Vec<Event>) {
    if first >= end {
        return;
    }
    out.push(Event::new(first, code).unwrap());
    if rate > 0.0 && first + 1 < end {
        let n = Poisson::new(rate * (end - first - 1) as f64).unwrap().sample(rng) as usize;
        for _ in 0..n {
            out.push(Event::new(rng.random_range(first + 1..end), code).unwrap());
        }
    }
}

fn generate_record(
    spec: &SynthSpec,
    cumulative: &[Vec<f64>],
    positive: bool,
    history: u32,
    rng: &mut ChaCha8Rng,
) -> (Vec<Event>, Label) {
    // Records enter and leave follow-up at random; events fall in [start, end).
    let span = if positive { spec.min_positive_span() } else { spec.min_span_days };
    let start = uniform_day(rng, 0, history - span);
    let end = uniform_day(rng, start + span, history);
    let mut events = Vec::new();

    let mut active: Vec<usize> = spec.always_on.clone();
    let mut pool = spec.background_pool.clone();
    pool.shuffle(rng);
    active.extend(pool.into_iter().take(spec.backgrounds_per_record));
    for p in active {
        let program = &spec.programs[p];
        let onset = start + uniform_day(rng, program.onset.0, program.onset.1);
        emit(program, &cumulative[p], program.rate, onset.min(end), end, rng, &mut events);
    }

    let tgt = &spec.target;
    let mut label = Label {
        positive,
        event_day: None,
    };
    let mut diagnosis_day = None;
    if positive {
        let program = &spec.programs[tgt.program];
        let lo = start + program.onset.0;
        let hi = (start + program.onset.1).min(end - 1 - tgt.diagnosis_delay.1);
        let onset = uniform_day(rng, lo, hi.max(lo));
        emit(program, &cumulative[tgt.program], program.rate, onset, end, rng, &mut events);
        let dx = onset + uniform_day(rng, tgt.diagnosis_delay.0, tgt.diagnosis_delay.1);
        emit_marker(&tgt.diagnosis_code, dx, tgt.diagnosis_rate, end, rng, &mut events);
        let tx = dx + uniform_day(rng, tgt.treatment_delay.0, tgt.treatment_delay.1);
        emit_marker(&tgt.treatment_code, tx, tgt.treatment_rate, end, rng, &mut events);
        label.event_day = Some(onset);
        diagnosis_day = Some(dx);
    }
    if let Some(w) = &spec.workup {
        let day = match diagnosis_day {
            Some(dx) => Some(dx.saturating_sub(uniform_day(rng, 0, w.lead_days)).max(start)),
            None if rng.random::<f64>() < w.negative_fraction => Some(uniform_day(rng, start, end - 1)),
            None => None,
        };
        if let Some(d) = day {
            events.push(Event::new(d, &w.code).unwrap());
        }
    }
    (events, label)
}

/// `record_id<TAB>label<TAB>event_day`, label `positive`/`negative`,
/// `event_day` `-` for negatives.
pub fn write_labels_tsv<W: Write>(
    mut out: W,
    labels: &BTreeMap<String, Label>,
    fingerprint: Option<&str>,
) -> std::io::Result<()> {
    if let Some(fp) = fingerprint {
        writeln!(out, "# fingerprint={fp}")?;
    }
    writeln!(out, "# record_id\tlabel\tevent_day")?;
    for (id, l) in labels {
        let label = if l.positive { "positive" } else { "negative" };
        match l.event_day {
            Some(d) => writeln!(out, "{id}\t{label}\t{d}")?,
            None => writeln!(out, "{id}\t{label}\t-")?,
        }
    }
    Ok(())
}

pub fn save_labels(path: &Path, labels: &BTreeMap<String, Label>, fingerprint: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_labels_tsv(&mut out, labels, fingerprint)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct LabelFile {
    pub labels: BTreeMap<String, Label>,
    pub fingerprint: Option<String>,
}

pub fn read_labels_tsv<R: BufRead>(reader: R) -> Result<LabelFile> {
    let mut file = LabelFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<labels>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            if let Some(fp) = c.trim().strip_prefix("fingerprint=") {
                file.fingerprint = Some(fp.trim().to_string());
            }
            continue;
        }
        let err = |m: String| Error::Parse { line: i + 1, message: m };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let positive = match f[1] {
            "positive" | "1" => true,
            "negative" | "0" => false,
            other => return Err(err(format!("invalid label '{other}'"))),
        };
        let event_day = match f[2] {
            "-" | "" => None,
            d => Some(d.parse().map_err(|_| err(format!("invalid event day '{d}'")))?),
        };
        file.labels.insert(f[0].to_string(), Label { positive, event_day });
    }
    Ok(file)
}

pub fn load_labels(path: &Path) -> Result<LabelFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels_tsv(BufReader::new(file))
}
