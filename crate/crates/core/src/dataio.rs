//! Raw interaction logs to prefix-augmented training examples.
//!
//! The raw format is one `session_id,timestamp,item_id` event per line.
//! Timestamps are seconds since the epoch, either numeric or RFC 3339.
//! Preprocessed examples are stored as JSON lines
//! `{"session":[...],"target":k}` next to a catalog file mapping raw item
//! ids to dense indices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub session_id: String,
    pub timestamp: f64,
    pub item_id: String,
}

/// An ordered list of dense item indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub items: Vec<usize>,
}

impl Session {
    pub fn new(items: Vec<usize>) -> Self {
        Session { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A preprocessed session with the bookkeeping needed for splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub id: String,
    pub last_timestamp: f64,
    pub session: Session,
}

/// Bijection between raw item ids and `0..N`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ItemCatalog {
    raw_ids: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ItemCatalog {
    pub fn from_raw_ids(raw_ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw_ids.len());
        for (i, id) in raw_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate item id {id:?} in catalog")));
            }
        }
        Ok(ItemCatalog { raw_ids, index })
    }

    /// A catalog whose raw ids are the decimal indices themselves.
    pub fn identity(n: usize) -> Self {
        Self::from_raw_ids((0..n).map(|i| i.to_string()).collect()).expect("distinct ids")
    }

    pub fn len(&self) -> usize {
        self.raw_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_ids.is_empty()
    }

    pub fn index_of(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw_id(&self, index: usize) -> &str {
        &self.raw_ids[index]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw_ids
    }

    fn push(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw_ids.len();
        self.raw_ids.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &self.raw_ids)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: Vec<String> = serde_json::from_reader(BufReader::new(f))?;
        Self::from_raw_ids(raw)
    }
}

/// A prefix and the item that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(rename = "session")]
    pub prefix: Vec<usize>,
    pub target: usize,
}

impl Example {
    pub fn new(prefix: Vec<usize>, target: usize) -> Self {
        Example { prefix, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub interactions: usize,
    pub training_sessions: usize,
    pub test_sessions: usize,
    pub items: usize,
    pub avg_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub has_header: bool,
    pub delimiter: char,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            has_header: false,
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub events: Vec<RawEvent>,
    pub malformed: usize,
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(t) = s.parse::<f64>() {
        return t.is_finite().then_some(t);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|dt| dt.timestamp_millis() as f64 / 1000.0)
}

fn parse_line(line: &str, delimiter: char) -> Option<RawEvent> {
    let mut fields = line.split(delimiter).map(str::trim);
    let session_id = fields.next().filter(|s| !s.is_empty())?;
    let timestamp = parse_timestamp(fields.next()?)?;
    let item_id = fields.next().filter(|s| !s.is_empty())?;
    if fields.next().is_some() || timestamp < 0.0 {
        return None;
    }
    Some(RawEvent {
        session_id: session_id.to_string(),
        timestamp,
        item_id: item_id.to_string(),
    })
}

/// Reads raw events from any buffered source, skipping malformed lines.
pub fn ingest_reader(reader: impl BufRead, opts: IngestOptions) -> std::io::Result<Ingested> {
    let mut events = Vec::new();
    let mut malformed = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if n == 0 && opts.has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, opts.delimiter) {
            Some(ev) => events.push(ev),
            None => {
                malformed += 1;
                log::warn!("skipping malformed line {}: {line:?}", n + 1);
            }
        }
    }
    Ok(Ingested { events, malformed })
}

pub fn ingest(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(f), opts).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub min_item_freq: usize,
    pub min_session_len: usize,
    /// Keep only the most recent `max_len` events of each session.
    pub max_len: Option<usize>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_item_freq: 5,
            min_session_len: 2,
            max_len: None,
        }
    }
}

/// Groups events into time-ordered sessions and filters rare items and
/// short sessions.
///
/// Sessions come out in order of first appearance in `events`, and the
/// catalog numbers items by first occurrence across those sessions.
pub fn preprocess(
    events: &[RawEvent],
    opts: PreprocessOptions,
) -> Result<(Vec<SessionRecord>, ItemCatalog)> {
    if opts.min_item_freq < 1 || opts.min_session_len < 2 {
        return Err(Error::Config(format!(
            "min_item_freq must be >= 1 and min_session_len >= 2 (got {} and {})",
            opts.min_item_freq, opts.min_session_len
        )));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for ev in events {
        *freq.entry(ev.item_id.as_str()).or_default() += 1;
    }

    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<(f64, usize, &str)>> = HashMap::new();
    for (pos, ev) in events.iter().enumerate() {
        let group = grouped.entry(ev.session_id.as_str()).or_insert_with(|| {
            order.push(ev.session_id.as_str());
            Vec::new()
        });
        group.push((ev.timestamp, pos, ev.item_id.as_str()));
    }

    let mut catalog = ItemCatalog::default();
    let mut records = Vec::new();
    for sid in order {
        let mut evs = grouped.remove(sid).unwrap_or_default();
        evs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<(f64, &str)> = evs
            .into_iter()
            .filter(|(_, _, item)| freq[item] >= opts.min_item_freq)
            .map(|(t, _, item)| (t, item))
            .collect();
        if let Some(max) = opts.max_len {
            if kept.len() > max {
                kept.drain(..kept.len() - max);
            }
        }
        if kept.len() < opts.min_session_len {
            continue;
        }
        let items = kept.iter().map(|(_, item)| catalog.push(item)).collect();
        records.push(SessionRecord {
            id: sid.to_string(),
            last_timestamp: kept.last().map(|(t, _)| *t).unwrap_or(0.0),
            session: Session::new(items),
        });
    }

    if records.is_empty() {
        return Err(Error::Data(format!(
            "no sessions survive preprocessing: {} events, {} distinct items, {} with frequency >= {}",
            events.len(),
            freq.len(),
            freq.values().filter(|&&c| c >= opts.min_item_freq).count(),
            opts.min_item_freq
        )));
    }
    Ok((records, catalog))
}

/// Re-expands sessions into events, one second apart per position.
pub fn to_events(records: &[SessionRecord], catalog: &ItemCatalog) -> Vec<RawEvent> {
    records
        .iter()
        .flat_map(|r| {
            let n = r.session.len();
            r.session.items.iter().enumerate().map(move |(i, &item)| RawEvent {
                session_id: r.id.clone(),
                timestamp: r.last_timestamp - (n - 1 - i) as f64,
                item_id: catalog.raw_id(item).to_string(),
            })
        })
        .collect()
}

/// Boundary timestamp that leaves the last `days` days for testing.
pub fn boundary_last_days(records: &[SessionRecord], days: f64) -> f64 {
    let max = records
        .iter()
        .map(|r| r.last_timestamp)
        .fold(f64::NEG_INFINITY, f64::max);
    max - days * SECONDS_PER_DAY
}

/// Temporal split: sessions ending after `boundary` are test sessions.
///
/// Test items never seen in training are removed from test sessions, which
/// are then re-filtered by `min_session_len`.
pub fn split(
    records: Vec<SessionRecord>,
    boundary: f64,
    min_session_len: usize,
) -> (Vec<SessionRecord>, Vec<SessionRecord>) {
    let (train, test): (Vec<_>, Vec<_>) = records
        .into_iter()
        .partition(|r| r.last_timestamp <= boundary);
    if train.is_empty() || test.is_empty() {
        log::warn!(
            "split boundary {boundary} leaves {} train and {} test sessions",
            train.len(),
            test.len()
        );
    }
    let known: std::collections::HashSet<usize> =
        train.iter().flat_map(|r| r.session.items.iter().copied()).collect();
    let test = test
        .into_iter()
        .filter_map(|mut r| {
            r.session.items.retain(|i| known.contains(i));
            (r.session.len() >= min_session_len).then_some(r)
        })
        .collect();
    (train, test)
}

/// Renumbers items so the catalog holds exactly the training items.
pub fn compact(
    train: Vec<SessionRecord>,
    test: Vec<SessionRecord>,
    catalog: &ItemCatalog,
) -> (Vec<SessionRecord>, Vec<SessionRecord>, ItemCatalog) {
    let mut compacted = ItemCatalog::default();
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut relabel = |records: Vec<SessionRecord>, grow: bool| -> Vec<SessionRecord> {
        records
            .into_iter()
            .map(|mut r| {
                r.session.items = r
                    .session
                    .items
                    .iter()
                    .filter_map(|&i| {
                        if let Some(&j) = remap.get(&i) {
                            Some(j)
                        } else if grow {
                            let j = compacted.push(catalog.raw_id(i));
                            remap.insert(i, j);
                            Some(j)
                        } else {
                            None
                        }
                    })
                    .collect();
                r
            })
            .collect()
    };
    let train = relabel(train, true);
    let test = relabel(test, false);
    (train, test, compacted)
}

/// Every proper prefix of each session paired with its next item.
pub fn prefix_augment(sessions: &[Session]) -> Vec<Example> {
    sessions
        .iter()
        .flat_map(|s| (1..s.len()).map(move |n| Example::new(s.items[..n].to_vec(), s.items[n])))
        .collect()
}

pub fn stats(train: &[Session], test: &[Session], catalog: &ItemCatalog) -> CorpusStats {
    let interactions: usize = train.iter().chain(test).map(Session::len).sum();
    let sessions = train.len() + test.len();
    CorpusStats {
        interactions,
        training_sessions: train.len(),
        test_sessions: test.len(),
        items: catalog.len(),
        avg_length: if sessions == 0 {
            0.0
        } else {
            interactions as f64 / sessions as f64
        },
    }
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads JSON-lines examples and checks every index against `num_items`.
pub fn read_examples(path: &Path, num_items: Option<usize>) -> Result<Vec<Example>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if ex.prefix.is_empty() {
            return Err(Error::Data(format!("{}:{}: empty session", path.display(), n + 1)));
        }
        if let Some(max) = num_items {
            if ex.target >= max || ex.prefix.iter().any(|&i| i >= max) {
                return Err(Error::Data(format!(
                    "{}:{}: item index outside catalog of {max}",
                    path.display(),
                    n + 1
                )));
            }
        }
        out.push(ex);
    }
    Ok(out)
}
