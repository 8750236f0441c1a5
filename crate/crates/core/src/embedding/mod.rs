//! Model parameters and the paragraph-vector objectives.
//!
//! Two architectures share one parameter layout:
//! * distributed memory (`Dm`): the target token is predicted from the mean
//!   of the document vector and the surrounding context token vectors;
//! * distributed bag of words (`Dbow`): every token in the window is
//!   predicted from the document vector alone.
//!
//! The output layer is either a hierarchical softmax over a Huffman tree
//! (`(V-1)×k` node weights) or negative sampling (`V×k` output vectors).

pub mod grads;
mod huffman;
mod matrix;
mod noise;
pub mod step;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use grads::{
    context_mean, dm_loss_and_grads, loss_and_grads, loss_and_grads_hs, loss_and_grads_ns,
    Decision, DmGradients, Gradients,
};
pub use huffman::HuffmanTree;
pub use matrix::{Matrix, RowRead, RowWrite, SharedMatrix};
pub use noise::{NoiseTable, DEFAULT_NOISE_EXPONENT};
pub use step::window_range;

use crate::corpus::{vocab_fingerprint, Vocabulary};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Embedding dimensions evaluated by the default hyperparameter grid.
pub const DIMENSION_GRID: [usize; 6] = [10, 50, 100, 300, 500, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dm,
    Dbow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Hs,
    Ns,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Dm => "dm",
            Mode::Dbow => "dbow",
        })
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Hs => "hs",
            Objective::Ns => "ns",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dm" => Ok(Mode::Dm),
            "dbow" => Ok(Mode::Dbow),
            _ => Err(format!("unknown mode '{s}' (expected dm or dbow)")),
        }
    }
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hs" => Ok(Objective::Hs),
            "ns" => Ok(Objective::Ns),
            _ => Err(format!("unknown objective '{s}' (expected hs or ns)")),
        }
    }
}

/// Output-layer structure derived from the vocabulary counts.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Hierarchical(HuffmanTree),
    Negative {
        table: NoiseTable,
        num_negatives: usize,
    },
}

impl Head {
    pub fn build(objective: Objective, counts: &[u64], num_negatives: usize, exponent: f64) -> Result<Self> {
        match objective {
            Objective::Hs => Ok(Head::Hierarchical(HuffmanTree::build(counts)?)),
            Objective::Ns => {
                if num_negatives == 0 {
                    return Err(Error::Config("num_negatives must be at least 1".into()));
                }
                if counts.len() < 2 {
                    return Err(Error::Config("negative sampling needs at least 2 tokens".into()));
                }
                Ok(Head::Negative {
                    table: NoiseTable::build(counts, exponent)?,
                    num_negatives,
                })
            }
        }
    }

    pub fn output_rows(&self) -> usize {
        match self {
            Head::Hierarchical(tree) => tree.internal_nodes(),
            Head::Negative { table, .. } => table.len(),
        }
    }

    #[inline]
    pub fn decisions<R: Rng + ?Sized>(&self, target: usize, rng: &mut R, out: &mut Vec<Decision>) -> Result<()> {
        match self {
            Head::Hierarchical(tree) => {
                grads::hs_decisions(tree, target, out);
                Ok(())
            }
            Head::Negative {
                table,
                num_negatives,
            } => grads::ns_decisions(table, target, *num_negatives, rng, out),
        }
    }
}

/// Training bookkeeping carried with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub seed: u64,
    /// Completed epochs, including any continuation runs.
    pub epochs: u32,
    pub num_negatives: u32,
    pub noise_exponent: f64,
    pub initial_alpha: f32,
    pub final_alpha: f32,
    pub train_words: bool,
    /// Configuration fingerprint of the run that produced the model.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub mode: Mode,
    pub objective: Objective,
    pub k: usize,
    pub window: usize,
    /// `(code, count)` in token-index order.
    pub vocab: Vec<(String, u64)>,
    pub doc_ids: Vec<String>,
    pub doc_vectors: Matrix,
    pub token_vectors: Matrix,
    /// Huffman node weights (HS) or output vectors (NS).
    pub output: Matrix,
    pub meta: ModelMeta,
    head: Head,
    token_index: HashMap<String, u32>,
}

/// Fresh document vector, uniform in `(-0.5/k, 0.5/k)`, keyed on the
/// document id so training and inference agree.
pub fn init_doc_vector(seed: u64, doc_id: &str, k: usize) -> Vec<f32> {
    let mut rng = rng_for(seed, &[b"doc-init", doc_id.as_bytes()]);
    let half = 0.5 / k as f32;
    let dist = Uniform::new(-half, half).unwrap();
    (0..k).map(|_| dist.sample(&mut rng)).collect()
}

pub struct ModelSpec {
    pub mode: Mode,
    pub objective: Objective,
    pub k: usize,
    pub window: usize,
    pub meta: ModelMeta,
}

impl EmbeddingModel {
    pub fn new(spec: ModelSpec, vocab: &Vocabulary, doc_ids: Vec<String>) -> Result<Self> {
        let ModelSpec {
            mode,
            objective,
            k,
            window,
            meta,
        } = spec;
        if k == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let counts = vocab.counts();
        let head = Head::build(objective, &counts, meta.num_negatives as usize, meta.noise_exponent)?;

        let mut doc_vectors = Matrix::zeros(doc_ids.len(), k);
        for (i, id) in doc_ids.iter().enumerate() {
            doc_vectors
                .row_mut(i)
                .copy_from_slice(&init_doc_vector(meta.seed, id, k));
        }
        let half = 0.5 / k as f32;
        let dist = Uniform::new(-half, half).unwrap();
        let mut rng = rng_for(meta.seed, &[b"token-init"]);
        let token_data = (0..vocab.len() * k).map(|_| dist.sample(&mut rng)).collect();
        let token_vectors = Matrix::from_vec(vocab.len(), k, token_data);
        let output = Matrix::zeros(head.output_rows(), k);

        let vocab: Vec<(String, u64)> = vocab
            .tokens()
            .iter()
            .map(|t| (t.code.to_string(), t.count))
            .collect();
        let token_index = index_tokens(&vocab);
        Ok(EmbeddingModel {
            mode,
            objective,
            k,
            window,
            vocab,
            doc_ids,
            doc_vectors,
            token_vectors,
            output,
            meta,
            head,
            token_index,
        })
    }

    /// Reassembles a model from stored parts, rebuilding the output head.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mode: Mode,
        objective: Objective,
        window: usize,
        vocab: Vec<(String, u64)>,
        doc_ids: Vec<String>,
        doc_vectors: Matrix,
        token_vectors: Matrix,
        output: Matrix,
        meta: ModelMeta,
    ) -> Result<Self> {
        let counts: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();
        let head = Head::build(objective, &counts, meta.num_negatives as usize, meta.noise_exponent)?;
        let k = doc_vectors.cols();
        let shapes_ok = doc_vectors.rows() == doc_ids.len()
            && token_vectors.rows() == vocab.len()
            && token_vectors.cols() == k
            && output.rows() == head.output_rows()
            && output.cols() == k;
        if !shapes_ok {
            return Err(Error::Config("model matrices do not match vocabulary/document counts".into()));
        }
        let token_index = index_tokens(&vocab);
        Ok(EmbeddingModel {
            mode,
            objective,
            k,
            window,
            vocab,
            doc_ids,
            doc_vectors,
            token_vectors,
            output,
            meta,
            head,
            token_index,
        })
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        vocab_fingerprint(self.vocab.iter().map(|(c, n)| (c.as_str(), *n)))
    }

    pub fn token_index(&self, code: &str) -> Option<u32> {
        self.token_index.get(code).copied()
    }

    /// Token indices of the in-vocabulary events of `record`.
    pub fn encode(&self, record: &crate::corpus::Record) -> Vec<u32> {
        record
            .events
            .iter()
            .filter_map(|e| self.token_index(&e.code))
            .collect()
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn all_finite(&self) -> bool {
        self.doc_vectors.all_finite() && self.token_vectors.all_finite() && self.output.all_finite()
    }

    /// Hidden vector for a distributed-memory prediction.
    pub fn context_vector_dm(&self, doc_id: usize, context: &[u32]) -> Vec<f32> {
        let rows: Vec<&[f32]> = context
            .iter()
            .map(|&c| self.token_vectors.row(c as usize))
            .collect();
        context_mean(self.doc_vectors.row(doc_id), &rows)
    }
}

fn index_tokens(vocab: &[(String, u64)]) -> HashMap<String, u32> {
    vocab
        .iter()
        .enumerate()
        .map(|(i, (c, _))| (c.clone(), i as u32))
        .collect()
}
