use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use super::Record;
use crate::error::{Error, Result};
use crate::util::hash64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub code: Arc<str>,
    pub count: u64,
    pub group: Arc<str>,
}

/// Frequency-filtered token inventory with a hierarchical grouping map.
///
/// Tokens are ordered by descending count, ties broken by code, so indices
/// are dense and reproducible for a given corpus.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index_of: HashMap<Arc<str>, u32>,
    groups: Vec<Arc<str>>,
    group_index: Vec<u32>,
    pub min_count: u64,
    pub group_depth: usize,
    pub total_events: u64,
}

/// Truncates `channel:a.b.c` to its first `depth` dot-separated levels.
pub fn group_code(code: &str, depth: usize) -> &str {
    let body_start = code.find(':').map_or(0, |i| i + 1);
    let body = &code[body_start..];
    match body.match_indices('.').nth(depth.saturating_sub(1)) {
        Some((i, _)) if depth > 0 => &code[..body_start + i],
        _ => code,
    }
}

impl Vocabulary {
    pub fn build(records: &[Record], min_count: u64, group_depth: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<Arc<str>, u64> = HashMap::new();
        for record in records {
            for e in &record.events {
                *counts.entry(e.code.clone()).or_insert(0) += 1;
            }
        }
        let pairs = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(code, count)| (code, count))
            .collect();
        Ok(Self::from_counts(pairs, min_count, group_depth))
    }

    /// Builds a vocabulary from explicit `(code, count)` pairs, all retained.
    pub fn from_counts(mut pairs: Vec<(Arc<str>, u64)>, min_count: u64, group_depth: usize) -> Self {
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut group_ids: BTreeMap<Arc<str>, u32> = BTreeMap::new();
        for (code, _) in &pairs {
            group_ids.entry(Arc::from(group_code(code, group_depth))).or_insert(0);
        }
        for (i, v) in group_ids.values_mut().enumerate() {
            *v = i as u32;
        }
        let groups: Vec<Arc<str>> = group_ids.keys().cloned().collect();

        let mut tokens = Vec::with_capacity(pairs.len());
        let mut index_of = HashMap::with_capacity(pairs.len());
        let mut group_index = Vec::with_capacity(pairs.len());
        let mut total_events = 0;
        for (i, (code, count)) in pairs.into_iter().enumerate() {
            let gi = group_ids[group_code(&code, group_depth)];
            index_of.insert(code.clone(), i as u32);
            group_index.push(gi);
            total_events += count;
            tokens.push(Token {
                code,
                count,
                group: groups[gi as usize].clone(),
            });
        }
        Vocabulary {
            tokens,
            index_of,
            groups,
            group_index,
            min_count,
            group_depth,
            total_events,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn counts(&self) -> Vec<u64> {
        self.tokens.iter().map(|t| t.count).collect()
    }

    pub fn index_of(&self, code: &str) -> Option<u32> {
        self.index_of.get(code).copied()
    }

    pub fn groups(&self) -> &[Arc<str>] {
        &self.groups
    }

    pub fn group_of_index(&self, token: u32) -> u32 {
        self.group_index[token as usize]
    }

    pub fn group_of(&self, code: &str) -> Option<&str> {
        self.index_of(code).map(|i| &*self.tokens[i as usize].group)
    }

    /// Token indices of the in-vocabulary events, order preserved.
    pub fn encode(&self, record: &Record) -> Vec<u32> {
        record
            .events
            .iter()
            .filter_map(|e| self.index_of.get(&e.code).copied())
            .collect()
    }

    /// Hash over the ordered `(code, count)` list.
    pub fn fingerprint(&self) -> u64 {
        vocab_fingerprint(self.tokens.iter().map(|t| (&*t.code, t.count)))
    }

    /// Audit export: `code<TAB>count<TAB>group`, one token per line.
    pub fn write_tsv<W: Write>(&self, mut out: W, fingerprint: Option<&str>) -> std::io::Result<()> {
        if let Some(fp) = fingerprint {
            writeln!(out, "# fingerprint={fp}")?;
        }
        writeln!(out, "# code\tcount\tgroup")?;
        for t in &self.tokens {
            writeln!(out, "{}\t{}\t{}", t.code, t.count, t.group)?;
        }
        Ok(())
    }
}

pub fn vocab_fingerprint<'a>(entries: impl IntoIterator<Item = (&'a str, u64)>) -> u64 {
    let mut bytes = Vec::new();
    for (code, count) in entries {
        bytes.extend_from_slice(code.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&count.to_le_bytes());
    }
    hash64(&bytes)
}

/// Convenience wrapper matching the corpus-level operation name.
pub fn build_vocab(records: &[Record], min_count: u64, group_depth: usize) -> Result<Vocabulary> {
    Vocabulary::build(records, min_count, group_depth)
}
