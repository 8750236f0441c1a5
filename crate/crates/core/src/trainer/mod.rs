//! Epoch-based SGD over the corpus with a linearly decaying learning rate.
//!
//! Documents are visited in a per-epoch shuffled order and split into
//! contiguous shards, one per worker. Workers update the shared token and
//! output matrices without synchronization; each document vector has a
//! single writer because shards are disjoint. With one worker and a fixed
//! seed every run is bit-identical.

mod container;

pub use container::{load, read_model, save, write_model, MAGIC, VERSION};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::embedding::step::{document_pass, PassOptions, PassStats, Workspace};
use crate::embedding::{EmbeddingModel, Mode, ModelMeta, ModelSpec, Objective, SharedMatrix};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Context window sizes evaluated by the default hyperparameter grid.
pub const WINDOW_GRID: [usize; 5] = [5, 10, 20, 30, 50];
pub const DEFAULT_EPOCHS: u32 = 20;
/// Extra epochs given to the best models after the initial sweep.
pub const REFINEMENT_EPOCHS: u32 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub objective: Objective,
    pub k: usize,
    pub window: usize,
    pub epochs: u32,
    pub initial_alpha: f32,
    pub final_alpha: f32,
    pub num_negatives: u32,
    pub noise_exponent: f64,
    pub workers: usize,
    pub seed: u64,
    pub min_count: u64,
    /// Also train token vectors skip-gram style in DBOW mode.
    pub train_words: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Dbow,
            objective: Objective::Hs,
            k: 100,
            window: 5,
            epochs: DEFAULT_EPOCHS,
            initial_alpha: 0.025,
            final_alpha: 1e-4,
            num_negatives: 5,
            noise_exponent: crate::embedding::DEFAULT_NOISE_EXPONENT,
            workers: 1,
            seed: 1,
            min_count: 250,
            train_words: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.final_alpha > 0.0 && self.final_alpha <= self.initial_alpha) {
            return fail("learning rates must satisfy 0 < final_alpha <= initial_alpha");
        }
        if !self.initial_alpha.is_finite() {
            return fail("initial_alpha must be finite");
        }
        if self.window < 1 {
            return fail("window must be at least 1");
        }
        if self.k < 1 {
            return fail("k must be at least 1");
        }
        if self.workers < 1 {
            return fail("workers must be at least 1");
        }
        if self.objective == Objective::Ns && self.num_negatives < 1 {
            return fail("num_negatives must be at least 1");
        }
        if self.min_count < 1 {
            return fail("min_count must be at least 1");
        }
        Ok(())
    }
}

/// Linear learning-rate decay over `total` scheduled positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub initial_alpha: f32,
    pub final_alpha: f32,
    pub total: u64,
}

impl Schedule {
    pub fn alpha(&self, t: u64) -> f32 {
        let a0 = self.initial_alpha as f64;
        let a1 = self.final_alpha as f64;
        let frac = if self.total == 0 { 0.0 } else { t as f64 / self.total as f64 };
        (a0 + (a1 - a0) * frac) as f32
    }
}

/// Per-epoch progress, serialized one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    pub alpha: f32,
}

pub fn write_progress<W: Write>(mut out: W, stats: &EpochStats) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, stats)?;
    out.write_all(b"\n")
}

fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Vec<Vec<u32>> {
    corpus.records.iter().map(|r| vocab.encode(r)).collect()
}

pub fn train(corpus: &Corpus, vocab: &Vocabulary, config: &TrainConfig) -> Result<EmbeddingModel> {
    train_with_progress(corpus, vocab, config, |_| {})
}

pub fn train_with_progress(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<EmbeddingModel> {
    config.validate()?;
    let docs = encode_corpus(corpus, vocab);
    if docs.iter().all(Vec::is_empty) {
        return Err(Error::Config("corpus is empty after encoding".into()));
    }
    let spec = ModelSpec {
        mode: config.mode,
        objective: config.objective,
        k: config.k,
        window: config.window,
        meta: ModelMeta {
            seed: config.seed,
            epochs: 0,
            num_negatives: config.num_negatives,
            noise_exponent: config.noise_exponent,
            initial_alpha: config.initial_alpha,
            final_alpha: config.final_alpha,
            train_words: config.train_words,
            fingerprint: String::new(),
        },
    };
    let doc_ids = corpus.records.iter().map(|r| r.record_id.clone()).collect();
    let mut model = EmbeddingModel::new(spec, vocab, doc_ids)?;
    run_epochs(&mut model, &docs, config.epochs, config.workers, on_epoch)?;
    Ok(model)
}

/// Trains `extra_epochs` more, continuing the schedule as if the run had
/// been planned for `model.meta.epochs + extra_epochs` epochs from the start.
pub fn continue_training(
    mut model: EmbeddingModel,
    corpus: &Corpus,
    vocab: &Vocabulary,
    extra_epochs: u32,
    workers: usize,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<EmbeddingModel> {
    let found = vocab.fingerprint();
    let expected = model.vocab_fingerprint();
    if found != expected {
        return Err(Error::VocabMismatch { expected, found });
    }
    let same_docs = corpus.records.len() == model.doc_ids.len()
        && corpus
            .records
            .iter()
            .zip(&model.doc_ids)
            .all(|(r, id)| &r.record_id == id);
    if !same_docs {
        return Err(Error::Data("corpus documents differ from the model's documents".into()));
    }
    if workers < 1 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    if extra_epochs == 0 {
        return Ok(model);
    }
    let docs = encode_corpus(corpus, vocab);
    run_epochs(&mut model, &docs, extra_epochs, workers, on_epoch)?;
    Ok(model)
}

fn run_epochs(
    model: &mut EmbeddingModel,
    docs: &[Vec<u32>],
    extra_epochs: u32,
    workers: usize,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<()> {
    let start_epoch = model.meta.epochs;
    let end_epoch = start_epoch + extra_epochs;
    let positions_per_epoch: u64 = docs.iter().map(|d| d.len() as u64).sum();
    let schedule = Schedule {
        initial_alpha: model.meta.initial_alpha,
        final_alpha: model.meta.final_alpha,
        total: positions_per_epoch * end_epoch as u64,
    };
    let opts = PassOptions {
        mode: model.mode,
        window: model.window,
        train_words: model.meta.train_words && model.mode == Mode::Dbow,
    };
    let seed = model.meta.seed;
    let head = model.head().clone();
    let k = model.k;

    let doc_m = SharedMatrix::from_matrix(&model.doc_vectors);
    let tok_m = SharedMatrix::from_matrix(&model.token_vectors);
    let out_m = SharedMatrix::from_matrix(&model.output);

    for epoch in start_epoch..end_epoch {
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng_for(seed, &[b"epoch-order", &epoch.to_le_bytes()]));
        let mut offsets = Vec::with_capacity(order.len());
        let mut acc = epoch as u64 * positions_per_epoch;
        for &d in &order {
            offsets.push(acc);
            acc += docs[d].len() as u64;
        }

        let shard_len = order.len().div_ceil(workers).max(1);
        let run_shard = |w: usize| -> Result<PassStats> {
            let lo = (w * shard_len).min(order.len());
            let hi = ((w + 1) * shard_len).min(order.len());
            let mut rng = rng_for(seed, &[b"worker", &epoch.to_le_bytes(), &(w as u64).to_le_bytes()]);
            let mut ws = Workspace::new(k);
            let mut doc = vec![0.0f32; k];
            let mut total = PassStats::default();
            let mut tokens_view = &tok_m;
            let mut outputs_view = &out_m;
            for i in lo..hi {
                let d = order[i];
                let tokens = &docs[d];
                if tokens.is_empty() {
                    continue;
                }
                crate::embedding::RowRead::read_row(&&doc_m, d, &mut doc);
                let base = offsets[i];
                let stats = document_pass(
                    opts,
                    &head,
                    &mut doc,
                    tokens,
                    &mut tokens_view,
                    &mut outputs_view,
                    |p| schedule.alpha(base + p as u64),
                    &mut rng,
                    &mut ws,
                )?;
                doc_m.write_row(d, &doc);
                total.loss += stats.loss;
                total.predictions += stats.predictions;
            }
            Ok(total)
        };

        let shard_stats: Vec<Result<PassStats>> = if workers == 1 {
            vec![run_shard(0)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || run_shard(w))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let mut total = PassStats::default();
        for s in shard_stats {
            let s = s?;
            total.loss += s.loss;
            total.predictions += s.predictions;
        }
        let mean_loss = total.loss / total.predictions.max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss in epoch {} ({} predictions)",
                epoch + 1,
                total.predictions
            )));
        }
        for (name, m) in [("document", &doc_m), ("token", &tok_m), ("output", &out_m)] {
            if !m.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite {name} parameters after epoch {} (mean loss {mean_loss})",
                    epoch + 1
                )));
            }
        }
        model.meta.epochs = epoch + 1;
        on_epoch(&EpochStats {
            epoch: epoch + 1,
            mean_loss,
            alpha: schedule.alpha(acc),
        });
    }

    model.doc_vectors = doc_m.to_matrix();
    model.token_vectors = tok_m.to_matrix();
    model.output = out_m.to_matrix();
    Ok(())
}
