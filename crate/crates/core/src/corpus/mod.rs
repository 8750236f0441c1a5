//! Event-log ingestion, chronological ordering and record truncation.
//!
//! The event log is UTF-8 TSV with four columns: `record_id`, `day`,
//! `channel`, `code`. Lines starting with `#` are comments; a comment of
//! the form `# fingerprint=<hex>` tags the file with the configuration
//! fingerprint that produced it.

mod vocab;

pub use vocab::{build_vocab, group_code, vocab_fingerprint, Token, Vocabulary};

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::{hash64, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Diagnosis,
    Lab,
    Medication,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Diagnosis, Channel::Lab, Channel::Medication];

    /// Qualification prefix carried by every code of this channel.
    pub fn prefix(self) -> &'static str {
        match self {
            Channel::Diagnosis => "dx",
            Channel::Lab => "lab",
            Channel::Medication => "med",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Diagnosis => "diagnosis",
            Channel::Lab => "lab",
            Channel::Medication => "medication",
        }
    }

    /// Channel implied by a qualified code such as `dx:250.00`.
    pub fn of_code(code: &str) -> Option<Channel> {
        let (prefix, rest) = code.split_once(':')?;
        if rest.is_empty() {
            return None;
        }
        Channel::ALL.into_iter().find(|c| c.prefix() == prefix)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "diagnosis" | "dx" => Ok(Channel::Diagnosis),
            "lab" => Ok(Channel::Lab),
            "medication" | "med" => Ok(Channel::Medication),
            other => Err(format!("unknown channel '{other}'")),
        }
    }
}

/// One time-stamped categorical observation inside a [`Record`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Event {
    pub day: u32,
    pub channel: Channel,
    pub code: Arc<str>,
}

impl Event {
    pub fn new(day: u32, code: &str) -> Result<Self> {
        let channel = Channel::of_code(code)
            .ok_or_else(|| Error::Data(format!("code '{code}' lacks a channel prefix")))?;
        Ok(Event {
            day,
            channel,
            code: Arc::from(code),
        })
    }
}

/// A record's events in chronological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub record_id: String,
    pub events: Vec<Event>,
}

impl Record {
    /// Orders `events` by day; ties inside a day are put in a canonical
    /// order and then shuffled by a generator keyed on
    /// `(seed, record_id, day)`, so the result does not depend on the
    /// input order and truncation never perturbs earlier days.
    pub fn from_events(record_id: impl Into<String>, mut events: Vec<Event>, seed: u64) -> Self {
        let record_id = record_id.into();
        events.sort_by(|a, b| {
            (a.day, a.channel, &a.code).cmp(&(b.day, b.channel, &b.code))
        });
        let mut start = 0;
        while start < events.len() {
            let day = events[start].day;
            let end = start + events[start..].iter().take_while(|e| e.day == day).count();
            if end - start > 1 {
                let mut rng = rng_for(seed, &[record_id.as_bytes(), &day.to_le_bytes()]);
                events[start..end].shuffle(&mut rng);
            }
            start = end;
        }
        Record { record_id, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_day(&self) -> Option<u32> {
        self.events.first().map(|e| e.day)
    }

    pub fn last_day(&self) -> Option<u32> {
        self.events.last().map(|e| e.day)
    }

    pub fn count_channel(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    /// Content hash over the ordered `(day, code)` sequence.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.events.len() * 16 + self.record_id.len());
        bytes.extend_from_slice(self.record_id.as_bytes());
        bytes.push(0);
        for e in &self.events {
            bytes.extend_from_slice(&e.day.to_le_bytes());
            bytes.extend_from_slice(e.code.as_bytes());
            bytes.push(0);
        }
        hash64(&bytes)
    }
}

/// Events strictly before `cutoff_day`, order preserved.
pub fn truncate(record: &Record, cutoff_day: u32) -> Record {
    let keep = record.events.partition_point(|e| e.day < cutoff_day);
    Record {
        record_id: record.record_id.clone(),
        events: record.events[..keep].to_vec(),
    }
}

/// All records of one event log, sorted by record id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub seed: u64,
    /// Configuration fingerprint found in the file header, if any.
    pub fingerprint: Option<String>,
}

impl Corpus {
    pub fn from_records(mut records: Vec<Record>, seed: u64) -> Self {
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        Corpus {
            records,
            seed,
            fingerprint: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.records.iter().map(Record::len).sum()
    }

    /// Day after the last observed event; stands in for the data pull date.
    pub fn end_day(&self) -> u32 {
        self.records
            .iter()
            .filter_map(Record::last_day)
            .max()
            .map_or(0, |d| d + 1)
    }

    pub fn get(&self, record_id: &str) -> Option<&Record> {
        self.records
            .binary_search_by(|r| r.record_id.as_str().cmp(record_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Writes the corpus as an event log in record order.
    pub fn write_tsv<W: Write>(&self, mut out: W, fingerprint: Option<&str>) -> std::io::Result<()> {
        if let Some(fp) = fingerprint {
            writeln!(out, "# fingerprint={fp}")?;
        }
        writeln!(out, "# record_id\tday\tchannel\tcode")?;
        for record in &self.records {
            for e in &record.events {
                writeln!(out, "{}\t{}\t{}\t{}", record.record_id, e.day, e.channel, e.code)?;
            }
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: &Path, fingerprint: Option<&str>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv(&mut out, fingerprint)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads an event log and builds one chronologically ordered record per id.
pub fn ingest(path: &Path, seed: u64) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), seed).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn ingest_reader<R: BufRead>(reader: R, seed: u64) -> Result<Corpus> {
    let mut fingerprint = None;
    let mut interned: std::collections::HashMap<String, Arc<str>> = Default::default();
    let mut by_record: BTreeMap<String, Vec<Event>> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(fp) = comment.trim().strip_prefix("fingerprint=") {
                fingerprint = Some(fp.trim().to_string());
            }
            continue;
        }
        let (record_id, event) = parse_line(line, line_no, &mut interned)?;
        match by_record.get_mut(record_id) {
            Some(events) => events.push(event),
            None => {
                by_record.insert(record_id.to_string(), vec![event]);
            }
        }
    }

    let records = by_record
        .into_iter()
        .map(|(id, events)| Record::from_events(id, events, seed))
        .collect();
    Ok(Corpus {
        records,
        seed,
        fingerprint,
    })
}

fn parse_line<'a>(
    line: &'a str,
    line_no: usize,
    interned: &mut std::collections::HashMap<String, Arc<str>>,
) -> Result<(&'a str, Event)> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
    }
    let record_id = fields[0];
    if record_id.is_empty() {
        return Err(err("empty record id".into()));
    }
    let day: u32 = fields[1]
        .parse()
        .map_err(|_| err(format!("invalid day '{}'", fields[1])))?;
    let channel: Channel = fields[2].parse().map_err(err)?;
    let code = fields[3];
    match Channel::of_code(code) {
        Some(c) if c == channel => {}
        Some(c) => {
            return Err(err(format!(
                "code '{code}' carries the {c} prefix but channel is {channel}"
            )))
        }
        None => {
            return Err(err(format!(
                "code '{code}' must be qualified as '{}:<code>'",
                channel.prefix()
            )))
        }
    }
    let code = match interned.get(code) {
        Some(c) => c.clone(),
        None => {
            let c: Arc<str> = Arc::from(code);
            interned.insert(code.to_string(), c.clone());
            c
        }
    };
    Ok((record_id, Event { day, channel, code }))
}
