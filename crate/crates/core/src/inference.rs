//! Projection of new or time-truncated records into a trained space, and
//! cosine similarity queries.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Record;
use crate::embedding::step::{document_pass, Frozen, PassOptions, Workspace};
use crate::embedding::{init_doc_vector, EmbeddingModel, Matrix};
use crate::error::{Error, Result};
use crate::trainer::Schedule;
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub epochs: u32,
    /// Defaults to the model's training rates when unset.
    pub initial_alpha: Option<f32>,
    pub final_alpha: Option<f32>,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            epochs: 20,
            initial_alpha: None,
            final_alpha: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferredVector {
    pub vector: Vec<f32>,
    pub steps: u32,
    pub source_fingerprint: String,
}

/// Fits a fresh document vector for `tokens` with every other parameter
/// held fixed. `key` seeds both the initialization and the sampling stream.
pub fn infer(model: &EmbeddingModel, key: &str, tokens: &[u32], config: &InferConfig) -> Result<InferredVector> {
    if tokens.is_empty() {
        return Err(Error::Unrepresentable(format!(
            "record '{key}' has no in-vocabulary events"
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= model.vocab_len()) {
        return Err(Error::Config(format!("token index {t} outside model vocabulary")));
    }
    let mut doc = init_doc_vector(config.seed, key, model.k);
    let schedule = Schedule {
        initial_alpha: config.initial_alpha.unwrap_or(model.meta.initial_alpha),
        final_alpha: config.final_alpha.unwrap_or(model.meta.final_alpha),
        total: tokens.len() as u64 * config.epochs as u64,
    };
    let opts = PassOptions {
        mode: model.mode,
        window: model.window,
        train_words: false,
    };
    let mut rng = rng_for(config.seed, &[b"infer", key.as_bytes()]);
    let mut ws = Workspace::new(model.k);
    let mut tokens_view = Frozen(&model.token_vectors);
    let mut outputs_view = Frozen(&model.output);
    for epoch in 0..config.epochs as u64 {
        let base = epoch * tokens.len() as u64;
        document_pass(
            opts,
            model.head(),
            &mut doc,
            tokens,
            &mut tokens_view,
            &mut outputs_view,
            |p| schedule.alpha(base + p as u64),
            &mut rng,
            &mut ws,
        )?;
    }
    if !doc.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric(format!("inferred vector for '{key}' is not finite")));
    }
    Ok(InferredVector {
        vector: doc,
        steps: config.epochs,
        source_fingerprint: model.meta.fingerprint.clone(),
    })
}

pub fn infer_record(model: &EmbeddingModel, record: &Record, config: &InferConfig) -> Result<InferredVector> {
    infer(model, &record.record_id, &model.encode(record), config)
}

/// Infers many records in parallel; each result depends only on its record.
pub fn infer_records(model: &EmbeddingModel, records: &[Record], config: &InferConfig) -> Vec<Result<InferredVector>> {
    records
        .par_iter()
        .map(|r| infer_record(model, r, config))
        .collect()
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Rows of `vectors` ranked by cosine similarity to `query`, best first,
/// ties broken by row index.
pub fn nearest(vectors: &Matrix, query: &[f32], n: usize) -> Result<Vec<(usize, f64)>> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if query.len() != vectors.cols() {
        return Err(Error::Config(format!(
            "query has dimension {}, vectors have {}",
            query.len(),
            vectors.cols()
        )));
    }
    if norm(query) == 0.0 {
        return Err(Error::Data("zero-norm query vector".into()));
    }
    let mut scored: Vec<(usize, f64)> = (0..vectors.rows())
        .map(|i| (i, cosine(vectors.row(i), query)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

/// `record_id<TAB>v1<TAB>…<TAB>vk`, one row per vector.
pub fn write_vectors_tsv<W: Write>(
    mut out: W,
    rows: &[(String, Vec<f32>)],
    fingerprint: Option<&str>,
) -> std::io::Result<()> {
    if let Some(fp) = fingerprint {
        writeln!(out, "# fingerprint={fp}")?;
    }
    for (id, v) in rows {
        write!(out, "{id}")?;
        for x in v {
            write!(out, "\t{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_vectors_tsv<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<f32>)>> {
    let mut rows: Vec<(String, Vec<f32>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<vectors>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let v: std::result::Result<Vec<f32>, _> = fields.map(str::parse::<f32>).collect();
        let v = v.map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("invalid vector component: {e}"),
        })?;
        if let Some((_, first)) = rows.first() {
            if first.len() != v.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} components, found {}", first.len(), v.len()),
                });
            }
        }
        rows.push((id, v));
    }
    Ok(rows)
}
