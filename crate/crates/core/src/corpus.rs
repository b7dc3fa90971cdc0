//! Corpus ingestion and the entity/epoch/chain structure the samplers walk.
//!
//! Documents are grouped into data units by `(entity, epoch)`; each entity's
//! units are linked into maximal runs of consecutive epochs (data chains). A
//! missing epoch splits a chain, it is never imputed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataUnit {
    pub entity_id: String,
    pub epoch: u32,
    pub documents: Vec<Document>,
}

impl DataUnit {
    pub fn n_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataChain {
    pub entity_id: String,
    pub units: Vec<DataUnit>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocabulary: Vec<String>,
    pub chains: Vec<DataChain>,
    pub epoch_count: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_documents: u64,
    pub n_entities: u64,
    pub n_units: u64,
    pub n_chains: u64,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Width of a date-derived epoch, in calendar months.
    pub bin_months: u32,
    /// First month of epoch 0 as `(year, month)`; defaults to the earliest date seen.
    pub origin: Option<(i32, u32)>,
    pub stop_words: HashSet<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            bin_months: 1,
            origin: None,
            stop_words: HashSet::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records: usize,
    pub skipped_empty: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    entity: String,
    #[serde(default)]
    epoch: Option<i64>,
    #[serde(default)]
    date: Option<String>,
    tokens: Vec<String>,
}

enum RawEpoch {
    Index(u32),
    Month(i64),
}

/// Serialized form of one document, also the ingest input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub entity: String,
    pub epoch: u32,
    pub tokens: Vec<String>,
}

pub fn read_stop_words(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn month_index(date: &str) -> Option<i64> {
    let d = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    Some(d.year() as i64 * 12 + d.month0() as i64)
}

/// Parse a line-delimited record stream into a corpus.
pub fn ingest<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<(Corpus, IngestReport)> {
    if opts.bin_months == 0 {
        return Err(Error::Config("bin_months must be >= 1".into()));
    }
    let mut report = IngestReport::default();
    let mut parsed: Vec<(String, RawEpoch, Vec<String>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: lineno,
            reason: e.to_string(),
        })?;
        let epoch = match (raw.epoch, raw.date.as_deref()) {
            (Some(e), _) if e < 0 => {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    reason: format!("negative epoch {e}"),
                })
            }
            (Some(e), _) => RawEpoch::Index(u32::try_from(e).map_err(|_| {
                Error::MalformedRecord {
                    line: lineno,
                    reason: format!("epoch {e} too large"),
                }
            })?),
            (None, Some(d)) => RawEpoch::Month(month_index(d).ok_or_else(|| {
                Error::MalformedRecord {
                    line: lineno,
                    reason: format!("bad date {d:?}, expected YYYY-MM-DD"),
                }
            })?),
            (None, None) => {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    reason: "record needs \"epoch\" or \"date\"".into(),
                })
            }
        };
        report.records += 1;
        let tokens: Vec<String> = raw
            .tokens
            .into_iter()
            .filter(|t| !t.is_empty() && !opts.stop_words.contains(t))
            .collect();
        if tokens.is_empty() {
            report.skipped_empty += 1;
            continue;
        }
        parsed.push((raw.entity, epoch, tokens));
    }

    let origin = match opts.origin {
        Some((y, m)) => Some(y as i64 * 12 + (m as i64 - 1)),
        None => parsed
            .iter()
            .filter_map(|(_, e, _)| match e {
                RawEpoch::Month(m) => Some(*m),
                RawEpoch::Index(_) => None,
            })
            .min(),
    };
    let mut records = Vec::with_capacity(parsed.len());
    for (entity, epoch, tokens) in parsed {
        let epoch = match epoch {
            RawEpoch::Index(e) => e,
            RawEpoch::Month(m) => {
                let offset = m - origin.unwrap_or(m);
                if offset < 0 {
                    return Err(Error::Config(format!(
                        "date before configured origin for entity {entity:?}"
                    )));
                }
                (offset / opts.bin_months as i64) as u32
            }
        };
        records.push(Record {
            entity,
            epoch,
            tokens,
        });
    }
    Ok((Corpus::from_records(records), report))
}

pub fn ingest_path(path: &Path, opts: &IngestOptions) -> Result<(Corpus, IngestReport)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(BufReader::new(f), opts)
}

impl Corpus {
    /// Build from records with string tokens. The vocabulary is the sorted set
    /// of distinct tokens; chains are ordered by entity id then epoch.
    pub fn from_records(records: impl IntoIterator<Item = Record>) -> Corpus {
        let records: Vec<Record> = records.into_iter().collect();
        let vocab: BTreeSet<&str> = records
            .iter()
            .flat_map(|r| r.tokens.iter().map(String::as_str))
            .collect();
        let vocabulary: Vec<String> = vocab.into_iter().map(str::to_owned).collect();
        let index: HashMap<&str, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32))
            .collect();
        let mut grouped: BTreeMap<(String, u32), Vec<Document>> = BTreeMap::new();
        for r in &records {
            if r.tokens.is_empty() {
                continue;
            }
            let tokens = r.tokens.iter().map(|t| index[t.as_str()]).collect();
            grouped
                .entry((r.entity.clone(), r.epoch))
                .or_default()
                .push(Document { tokens });
        }
        let units = grouped
            .into_iter()
            .map(|((entity_id, epoch), documents)| DataUnit {
                entity_id,
                epoch,
                documents,
            })
            .collect();
        Corpus::from_units(vocabulary, units, None)
    }

    /// Link units (sorted by entity, then epoch) into maximal consecutive-epoch chains.
    pub fn from_units(vocabulary: Vec<String>, mut units: Vec<DataUnit>, epoch_count: Option<u32>) -> Corpus {
        units.sort_by(|a, b| (&a.entity_id, a.epoch).cmp(&(&b.entity_id, b.epoch)));
        let max_epoch = units.iter().map(|u| u.epoch + 1).max().unwrap_or(0);
        let mut chains: Vec<DataChain> = Vec::new();
        for unit in units {
            let extends = chains.last().is_some_and(|c| {
                let last = c.units.last().expect("chains are non-empty");
                c.entity_id == unit.entity_id && last.epoch + 1 == unit.epoch
            });
            if extends {
                chains.last_mut().unwrap().units.push(unit);
            } else {
                chains.push(DataChain {
                    entity_id: unit.entity_id.clone(),
                    units: vec![unit],
                });
            }
        }
        Corpus {
            vocabulary,
            chains,
            epoch_count: epoch_count.unwrap_or(0).max(max_epoch),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn units(&self) -> impl Iterator<Item = &DataUnit> {
        self.chains.iter().flat_map(|c| c.units.iter())
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.units().flat_map(|u| u.documents.iter())
    }

    pub fn n_tokens(&self) -> usize {
        self.documents().map(|d| d.tokens.len()).sum()
    }

    pub fn records(&self) -> Vec<Record> {
        self.units()
            .flat_map(|u| {
                u.documents.iter().map(move |d| Record {
                    entity: u.entity_id.clone(),
                    epoch: u.epoch,
                    tokens: d
                        .tokens
                        .iter()
                        .map(|&t| self.vocabulary[t as usize].clone())
                        .collect(),
                })
            })
            .collect()
    }

    /// Check every structural invariant; used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len() as u32;
        let distinct: HashSet<&String> = self.vocabulary.iter().collect();
        if distinct.len() != self.vocabulary.len() {
            return Err(Error::invariant("duplicate vocabulary entries"));
        }
        for chain in &self.chains {
            if chain.units.is_empty() {
                return Err(Error::invariant("empty chain"));
            }
            for pair in chain.units.windows(2) {
                if pair[1].epoch != pair[0].epoch + 1 {
                    return Err(Error::invariant(format!(
                        "chain for {} is not consecutive",
                        chain.entity_id
                    )));
                }
            }
            for unit in &chain.units {
                if unit.entity_id != chain.entity_id {
                    return Err(Error::invariant("unit entity differs from chain entity"));
                }
                if unit.epoch >= self.epoch_count {
                    return Err(Error::invariant("unit epoch beyond epoch_count"));
                }
                if unit.documents.is_empty() {
                    return Err(Error::invariant("empty data unit"));
                }
                for doc in &unit.documents {
                    if doc.tokens.is_empty() {
                        return Err(Error::invariant("empty document"));
                    }
                    if doc.tokens.iter().any(|&t| t >= v) {
                        return Err(Error::invariant("token index out of vocabulary"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Corpus> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let corpus: Corpus = serde_json::from_reader(BufReader::new(f))?;
        corpus.validate()?;
        Ok(corpus)
    }

    /// Load either an ingested `.json` corpus or a raw `.jsonl` record stream.
    pub fn load(path: &Path) -> Result<Corpus> {
        if path.extension().is_some_and(|e| e == "jsonl") {
            Ok(ingest_path(path, &IngestOptions::default())?.0)
        } else {
            Corpus::load_json(path)
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("corpus serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Drop every entity with `threshold` or fewer documents in total.
///
/// With `compact` the vocabulary shrinks to surviving tokens (relative order
/// kept); without it token indices stay comparable with the input corpus.
pub fn filter_min_postings(corpus: &Corpus, threshold: u64, compact: bool) -> Corpus {
    let mut per_entity: HashMap<&str, u64> = HashMap::new();
    for unit in corpus.units() {
        *per_entity.entry(unit.entity_id.as_str()).or_default() += unit.documents.len() as u64;
    }
    let units: Vec<DataUnit> = corpus
        .units()
        .filter(|u| per_entity[u.entity_id.as_str()] > threshold)
        .cloned()
        .collect();
    if !compact {
        return Corpus::from_units(corpus.vocabulary.clone(), units, Some(corpus.epoch_count));
    }
    let mut used = vec![false; corpus.vocabulary.len()];
    for unit in &units {
        for doc in &unit.documents {
            for &t in &doc.tokens {
                used[t as usize] = true;
            }
        }
    }
    let mut remap = vec![u32::MAX; used.len()];
    let mut vocabulary = Vec::new();
    for (old, word) in corpus.vocabulary.iter().enumerate() {
        if used[old] {
            remap[old] = vocabulary.len() as u32;
            vocabulary.push(word.clone());
        }
    }
    let units = units
        .into_iter()
        .map(|mut u| {
            for doc in &mut u.documents {
                for t in &mut doc.tokens {
                    *t = remap[*t as usize];
                }
            }
            u
        })
        .collect();
    Corpus::from_units(vocabulary, units, Some(corpus.epoch_count))
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let entities: HashSet<&str> = corpus.chains.iter().map(|c| c.entity_id.as_str()).collect();
    CorpusStats {
        n_documents: corpus.documents().count() as u64,
        n_entities: entities.len() as u64,
        n_units: corpus.units().count() as u64,
        n_chains: corpus.chains.len() as u64,
    }
}

impl CorpusStats {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "n_documents,{}", self.n_documents)?;
        writeln!(w, "n_entities,{}", self.n_entities)?;
        writeln!(w, "n_units,{}", self.n_units)?;
        writeln!(w, "n_chains,{}", self.n_chains)
    }
}

/// Count histograms behind the corpus description plots. Keys are the bucket
/// (an epoch for `units_per_epoch`, otherwise a size), values the count.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histograms {
    pub units_per_epoch: BTreeMap<u64, u64>,
    pub docs_per_entity: BTreeMap<u64, u64>,
    pub docs_per_unit: BTreeMap<u64, u64>,
    pub chain_lengths: BTreeMap<u64, u64>,
}

pub fn histograms(corpus: &Corpus) -> Histograms {
    let mut h = Histograms::default();
    let mut per_entity: BTreeMap<&str, u64> = BTreeMap::new();
    for chain in &corpus.chains {
        *h.chain_lengths.entry(chain.units.len() as u64).or_default() += 1;
        for unit in &chain.units {
            *h.units_per_epoch.entry(unit.epoch as u64).or_default() += 1;
            *h.docs_per_unit.entry(unit.documents.len() as u64).or_default() += 1;
            *per_entity.entry(&unit.entity_id).or_default() += unit.documents.len() as u64;
        }
    }
    for n in per_entity.into_values() {
        *h.docs_per_entity.entry(n).or_default() += 1;
    }
    h
}

pub fn write_histogram_csv<W: Write>(hist: &BTreeMap<u64, u64>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "bucket,count")?;
    for (bucket, count) in hist {
        writeln!(w, "{bucket},{count}")?;
    }
    Ok(())
}

/// One held-out unit; tokens stay as strings so they can be mapped onto any
/// training vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldoutUnit {
    pub entity_id: String,
    pub epoch: u32,
    pub documents: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: Corpus,
    pub test: Vec<HeldoutUnit>,
    /// Final-epoch entities dropped because they had no unit one epoch earlier.
    pub excluded_entities: usize,
}

/// Hold out the final epoch: training keeps every earlier unit, the test set
/// keeps final-epoch units of entities that also appear in the epoch before.
pub fn split_final_epoch(corpus: &Corpus) -> Result<HoldoutSplit> {
    let last = corpus
        .units()
        .map(|u| u.epoch)
        .max()
        .ok_or_else(|| Error::precondition("cannot split an empty corpus"))?;
    if last == 0 {
        return Err(Error::precondition("corpus has a single epoch; nothing to hold out"));
    }
    let mut train_units = Vec::new();
    let mut test = Vec::new();
    let mut excluded = 0;
    for chain in &corpus.chains {
        for (i, unit) in chain.units.iter().enumerate() {
            if unit.epoch < last {
                train_units.push(unit.clone());
                continue;
            }
            let has_prev = i > 0 && chain.units[i - 1].epoch + 1 == last;
            if !has_prev {
                excluded += 1;
                continue;
            }
            test.push(HeldoutUnit {
                entity_id: unit.entity_id.clone(),
                epoch: unit.epoch,
                documents: unit
                    .documents
                    .iter()
                    .map(|d| {
                        d.tokens
                            .iter()
                            .map(|&t| corpus.vocabulary[t as usize].clone())
                            .collect()
                    })
                    .collect(),
            });
        }
    }
    let train = Corpus::from_units(corpus.vocabulary.clone(), train_units, Some(last));
    let train = filter_min_postings(&train, 0, true);
    Ok(HoldoutSplit {
        train,
        test,
        excluded_entities: excluded,
    })
}

pub fn heldout_records(test: &[HeldoutUnit]) -> Vec<Record> {
    test.iter()
        .flat_map(|u| {
            u.documents.iter().map(move |d| Record {
                entity: u.entity_id.clone(),
                epoch: u.epoch,
                tokens: d.clone(),
            })
        })
        .collect()
}

/// Group raw records into held-out units (no vocabulary mapping).
pub fn heldout_from_records(records: impl IntoIterator<Item = Record>) -> Vec<HeldoutUnit> {
    let mut grouped: BTreeMap<(String, u32), Vec<Vec<String>>> = BTreeMap::new();
    for r in records {
        if !r.tokens.is_empty() {
            grouped.entry((r.entity, r.epoch)).or_default().push(r.tokens);
        }
    }
    grouped
        .into_iter()
        .map(|((entity_id, epoch), documents)| HeldoutUnit {
            entity_id,
            epoch,
            documents,
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let epoch = raw.epoch.ok_or_else(|| Error::MalformedRecord {
            line: i + 1,
            reason: "held-out records need an integer \"epoch\"".into(),
        })?;
        out.push(Record {
            entity: raw.entity,
            epoch: u32::try_from(epoch).map_err(|_| Error::MalformedRecord {
                line: i + 1,
                reason: format!("bad epoch {epoch}"),
            })?,
            tokens: raw.tokens,
        });
    }
    Ok(out)
}

pub fn write_records(records: &[Record], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Where a chain-initial unit draws its prior state from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartRule {
    /// The fixed uniform row of the virtual initial state.
    Uniform,
    /// Market-wide mixture over the previous epoch's states.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitLink {
    pub prev: Option<u32>,
    pub next: Option<u32>,
    pub epoch: u32,
    pub start: StartRule,
}

#[derive(Debug, Clone)]
pub struct UnitInfo {
    pub entity: u32,
    pub epoch: u32,
    pub chain: u32,
    pub docs: Range<usize>,
}

/// Flat index over a corpus in chain order: units, documents and tokens get
/// dense global indices.
#[derive(Debug, Clone)]
pub struct Layout {
    pub entities: Vec<String>,
    pub units: Vec<UnitInfo>,
    pub links: Vec<UnitLink>,
    /// Token range of each document in `tokens`.
    pub docs: Vec<Range<usize>>,
    pub doc_unit: Vec<u32>,
    pub tokens: Vec<u32>,
    pub vocab_size: usize,
    pub epoch_count: u32,
}

impl Layout {
    pub fn new(corpus: &Corpus) -> Layout {
        let mut entities: Vec<String> = Vec::new();
        let mut entity_index: HashMap<&str, u32> = HashMap::new();
        let mut layout = Layout {
            entities: Vec::new(),
            units: Vec::new(),
            links: Vec::new(),
            docs: Vec::new(),
            doc_unit: Vec::new(),
            tokens: Vec::new(),
            vocab_size: corpus.vocab_size(),
            epoch_count: corpus.epoch_count,
        };
        for (ci, chain) in corpus.chains.iter().enumerate() {
            let first_chain = !entity_index.contains_key(chain.entity_id.as_str());
            let entity = *entity_index.entry(&chain.entity_id).or_insert_with(|| {
                entities.push(chain.entity_id.clone());
                (entities.len() - 1) as u32
            });
            let base = layout.units.len() as u32;
            let n = chain.units.len() as u32;
            for (i, unit) in chain.units.iter().enumerate() {
                let i = i as u32;
                let doc_start = layout.docs.len();
                for doc in &unit.documents {
                    let start = layout.tokens.len();
                    layout.tokens.extend_from_slice(&doc.tokens);
                    layout.docs.push(start..layout.tokens.len());
                    layout.doc_unit.push(base + i);
                }
                layout.units.push(UnitInfo {
                    entity,
                    epoch: unit.epoch,
                    chain: ci as u32,
                    docs: doc_start..layout.docs.len(),
                });
                layout.links.push(UnitLink {
                    prev: (i > 0).then(|| base + i - 1),
                    next: (i + 1 < n).then(|| base + i + 1),
                    epoch: unit.epoch,
                    start: if first_chain || unit.epoch == 0 {
                        StartRule::Uniform
                    } else {
                        StartRule::Fallback
                    },
                });
            }
        }
        layout.entities = entities;
        layout
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc_tokens(&self, doc: usize) -> &[u32] {
        &self.tokens[self.docs[doc].clone()]
    }

    /// Unit index of `(entity, epoch)`, if that unit exists.
    pub fn unit_at(&self, entity: &str, epoch: u32) -> Option<usize> {
        self.units
            .iter()
            .position(|u| u.epoch == epoch && self.entities[u.entity as usize] == entity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(e: &str, epoch: u32, tokens: &[&str]) -> Record {
        Record {
            entity: e.into(),
            epoch,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn jsonl(lines: &[&str]) -> std::io::Cursor<String> {
        std::io::Cursor::new(lines.join("\n"))
    }

    #[test]
    fn single_record_corpus() {
        let (c, _) = ingest(
            jsonl(&[r#"{"entity":"A","epoch":0,"tokens":["x","y"]}"#]),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.chains.len(), 1);
        assert_eq!(c.units().count(), 1);
        assert_eq!(c.vocab_size(), 2);
    }

    #[test]
    fn gap_splits_chain() {
        let c = Corpus::from_records(vec![
            rec("A", 0, &["x"]),
            rec("A", 1, &["x"]),
            rec("A", 3, &["y"]),
        ]);
        let lens: Vec<usize> = c.chains.iter().map(|ch| ch.units.len()).collect();
        assert_eq!(lens, vec![2, 1]);
        assert_eq!(c.epoch_count, 4);
    }

    #[test]
    fn six_record_fixture_stats() {
        // A: two docs at epoch 0, one at 1; B: one at 0, two at 1
        let c = Corpus::from_records(vec![
            rec("A", 0, &["a"]),
            rec("A", 0, &["b"]),
            rec("A", 1, &["a", "c"]),
            rec("B", 0, &["c"]),
            rec("B", 1, &["d"]),
            rec("B", 1, &["a"]),
        ]);
        let s = stats(&c);
        assert_eq!(
            (s.n_documents, s.n_entities, s.n_units, s.n_chains),
            (6, 2, 4, 2)
        );
    }

    #[test]
    fn stats_of_empty_and_simple_chain() {
        assert_eq!(stats(&Corpus::default()), CorpusStats::default());
        let c = Corpus::from_records((0..3).flat_map(|e| [rec("A", e, &["x"]), rec("A", e, &["y"])]));
        let s = stats(&c);
        assert_eq!((s.n_documents, s.n_entities, s.n_units, s.n_chains), (6, 1, 3, 1));
    }

    #[test]
    fn malformed_record_reports_line() {
        let err = ingest(
            jsonl(&[
                r#"{"entity":"A","epoch":0,"tokens":["x"]}"#,
                r#"{"entity":"A","tokens":["x"]}"#,
            ]),
            &IngestOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 2, .. }), "{err}");
        let err = ingest(jsonl(&["not json"]), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn empty_and_stopword_only_records_are_skipped() {
        let opts = IngestOptions {
            stop_words: ["the".to_string()].into_iter().collect(),
            ..Default::default()
        };
        let (c, report) = ingest(
            jsonl(&[
                r#"{"entity":"A","epoch":0,"tokens":[]}"#,
                r#"{"entity":"A","epoch":0,"tokens":["the"]}"#,
                r#"{"entity":"A","epoch":0,"tokens":["the","cat"]}"#,
            ]),
            &opts,
        )
        .unwrap();
        assert_eq!(report.skipped_empty, 2);
        assert_eq!(c.vocabulary, vec!["cat"]);
    }

    #[test]
    fn dates_bin_by_month() {
        let (c, _) = ingest(
            jsonl(&[
                r#"{"entity":"A","date":"2014-01-15","tokens":["x"]}"#,
                r#"{"entity":"A","date":"2014-02-01","tokens":["x"]}"#,
                r#"{"entity":"A","date":"2014-04-30","tokens":["x"]}"#,
            ]),
            &IngestOptions::default(),
        )
        .unwrap();
        let epochs: Vec<u32> = c.units().map(|u| u.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 3]);
        let (c2, _) = ingest(
            jsonl(&[
                r#"{"entity":"A","date":"2014-01-15","tokens":["x"]}"#,
                r#"{"entity":"A","date":"2014-04-30","tokens":["x"]}"#,
            ]),
            &IngestOptions {
                bin_months: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c2.units().map(|u| u.epoch).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn filter_is_strict_and_compacts() {
        let mut records = Vec::new();
        for _ in 0..101 {
            records.push(rec("A", 0, &["a"]));
        }
        for _ in 0..100 {
            records.push(rec("B", 0, &["b"]));
        }
        let c = Corpus::from_records(records);
        let f = filter_min_postings(&c, 100, true);
        assert_eq!(f.chains.len(), 1);
        assert_eq!(f.chains[0].entity_id, "A");
        assert_eq!(f.vocabulary, vec!["a"]);
        let kept = filter_min_postings(&c, 100, false);
        assert_eq!(kept.vocabulary, vec!["a", "b"]);
        assert_eq!(filter_min_postings(&c, 0, true), c);
    }

    #[test]
    fn layout_links_and_start_rules() {
        let c = Corpus::from_records(vec![
            rec("A", 0, &["x"]),
            rec("A", 1, &["x"]),
            rec("A", 3, &["y"]),
            rec("B", 2, &["y"]),
        ]);
        let l = Layout::new(&c);
        assert_eq!(l.n_units(), 4);
        assert_eq!(l.links[0].next, Some(1));
        assert_eq!(l.links[1].prev, Some(0));
        assert_eq!(l.links[2].prev, None);
        assert_eq!(l.links[2].start, StartRule::Fallback);
        // first chain of B starts at epoch 2 but is that entity's first chain
        assert_eq!(l.links[3].start, StartRule::Uniform);
        assert_eq!(l.unit_at("A", 3), Some(2));
    }

    #[test]
    fn split_holds_out_final_epoch() {
        let c = Corpus::from_records(vec![
            rec("A", 0, &["x"]),
            rec("A", 1, &["x"]),
            rec("A", 2, &["z"]),
            rec("B", 2, &["y"]),
        ]);
        let s = split_final_epoch(&c).unwrap();
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.test[0].entity_id, "A");
        assert_eq!(s.excluded_entities, 1);
        assert_eq!(s.train.units().count(), 2);
        assert_eq!(s.train.vocabulary, vec!["x"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_records() -> impl Strategy<Value = Vec<Record>> {
            prop::collection::vec(
                (0u8..4, 0u32..6, prop::collection::vec(0u8..5, 1..4)),
                0..40,
            )
            .prop_map(|rs| {
                rs.into_iter()
                    .map(|(e, epoch, toks)| Record {
                        entity: format!("e{e}"),
                        epoch,
                        tokens: toks.into_iter().map(|t| format!("w{t}")).collect(),
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn chains_partition_units(records in arb_records()) {
                let c = Corpus::from_records(records.clone());
                prop_assert!(c.validate().is_ok());
                let mut from_chains: Vec<(String, u32)> =
                    c.units().map(|u| (u.entity_id.clone(), u.epoch)).collect();
                from_chains.sort();
                let mut expected: Vec<(String, u32)> =
                    records.iter().map(|r| (r.entity.clone(), r.epoch)).collect();
                expected.sort();
                expected.dedup();
                prop_assert_eq!(from_chains, expected);
                let s = stats(&c);
                prop_assert!(s.n_units >= s.n_chains);
                prop_assert!(s.n_documents >= s.n_units);
                prop_assert_eq!(Corpus::from_records(records), c);
            }

            #[test]
            fn filter_is_idempotent(records in arb_records(), t in 0u64..6) {
                let c = Corpus::from_records(records);
                let once = filter_min_postings(&c, t, true);
                let twice = filter_min_postings(&once, t, true);
                prop_assert!(stats(&once).n_documents <= stats(&c).n_documents);
                prop_assert_eq!(once, twice);
            }
        }
    }
}
