//! Topic-quality scores from expert labels, clustering agreement, and the
//! CSV/JSON exports behind the topic, state and trend reports.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::baselines::LdaModel;
use crate::error::{Error, Result};
use crate::sampler::MtlvmModel;

pub const TOP_WORDS: u32 = 10;

/// One expert judgement of one topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLabel {
    pub rater: String,
    pub topic_id: u32,
    pub valid: bool,
    /// Relevant words among the topic's top ten; present iff `valid`.
    pub relevant_count: Option<u32>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parse `rater,topic_id,valid,relevant_count` CSV (header required).
pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<TopicLabel>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<labels>", e))?;
        if i == 0 {
            if line.trim() != "rater,topic_id,valid,relevant_count" {
                return Err(Error::MalformedRecord {
                    line: 1,
                    reason: "expected header rater,topic_id,valid,relevant_count".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedRecord {
            line: lineno,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let topic_id: u32 = fields[1].parse().map_err(|_| bad("topic_id is not an integer"))?;
        let valid = parse_bool(fields[2]).ok_or_else(|| bad("valid must be a boolean"))?;
        let relevant_count = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse::<u32>().map_err(|_| bad("relevant_count is not an integer"))?)
        };
        match (valid, relevant_count) {
            (true, None) => return Err(bad("valid topic needs relevant_count")),
            (false, Some(_)) => return Err(bad("relevant_count given for an invalid topic")),
            (true, Some(n)) if n > TOP_WORDS => return Err(bad("relevant_count exceeds 10")),
            _ => {}
        }
        if !seen.insert((fields[0].to_string(), topic_id)) {
            return Err(bad("duplicate (rater, topic_id)"));
        }
        out.push(TopicLabel {
            rater: fields[0].to_string(),
            topic_id,
            valid,
            relevant_count,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaterScore {
    pub rater: String,
    pub topics: u32,
    pub valid_topics: u32,
    pub relevant_words: u32,
    /// Valid topics / topics.
    pub vm: f64,
    /// Relevant words per valid topic; absent with no valid topic.
    pub cm: Option<f64>,
    /// Relevant words per word listed in valid topics (bounded by 1).
    pub cm_per_word: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmCm {
    pub raters: Vec<RaterScore>,
    pub vm: f64,
    /// Mean over raters that have a CM.
    pub cm: Option<f64>,
    pub cm_per_word: Option<f64>,
}

pub fn compute_vm_cm(labels: &[TopicLabel]) -> Result<VmCm> {
    if labels.is_empty() {
        return Err(Error::precondition("no labeled topics"));
    }
    let mut by_rater: BTreeMap<&str, Vec<&TopicLabel>> = BTreeMap::new();
    for l in labels {
        by_rater.entry(l.rater.as_str()).or_default().push(l);
    }
    let raters: Vec<RaterScore> = by_rater
        .into_iter()
        .map(|(rater, ls)| {
            let topics = ls.len() as u32;
            let valid_topics = ls.iter().filter(|l| l.valid).count() as u32;
            let relevant_words: u32 = ls.iter().filter_map(|l| l.relevant_count).sum();
            let cm = (valid_topics > 0).then(|| relevant_words as f64 / valid_topics as f64);
            RaterScore {
                rater: rater.to_string(),
                topics,
                valid_topics,
                relevant_words,
                vm: valid_topics as f64 / topics as f64,
                cm,
                cm_per_word: cm.map(|c| c / TOP_WORDS as f64),
            }
        })
        .collect();
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Ok(VmCm {
        vm: mean(raters.iter().map(|r| r.vm).collect()).unwrap_or(0.0),
        cm: mean(raters.iter().filter_map(|r| r.cm).collect()),
        cm_per_word: mean(raters.iter().filter_map(|r| r.cm_per_word).collect()),
        raters,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Rows of `model,K,VM,CM`.
pub fn write_quality_table<W: Write>(rows: &[(String, usize, &VmCm)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,K,VM,CM")?;
    for (model, k, s) in rows {
        writeln!(w, "{model},{k},{},{}", s.vm, fmt_opt(s.cm))?;
    }
    Ok(())
}

pub fn write_rater_scores<W: Write>(s: &VmCm, mut w: W) -> std::io::Result<()> {
    writeln!(w, "rater,topics,valid_topics,relevant_words,VM,CM,CM_per_word")?;
    for r in &s.raters {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rater,
            r.topics,
            r.valid_topics,
            r.relevant_words,
            r.vm,
            fmt_opt(r.cm),
            fmt_opt(r.cm_per_word)
        )?;
    }
    writeln!(w, "mean,,,,{},{},{}", s.vm, fmt_opt(s.cm), fmt_opt(s.cm_per_word))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let pairs = |k: u64| (k * k.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&k| pairs(k)).sum();
    let sum_a: f64 = rows.values().map(|&k| pairs(k)).sum();
    let sum_b: f64 = cols.values().map(|&k| pairs(k)).sum();
    let expected = sum_a * sum_b / (n * (n - 1.0) / 2.0);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicWords {
    pub topic: usize,
    pub words: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateTopics {
    pub state: usize,
    /// (topic, share), descending.
    pub topics: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicExport {
    pub topics: Vec<TopicWords>,
    pub states: Vec<StateTopics>,
}

/// Indices of the `k` largest entries, ties to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
    idx.truncate(k.min(row.len()));
    idx
}

fn topic_words(rows: &[(usize, &Vec<f64>)], vocabulary: &[String], k: usize) -> Vec<TopicWords> {
    rows.iter()
        .map(|&(topic, row)| TopicWords {
            topic,
            words: top_k(row, k)
                .into_iter()
                .map(|w| (vocabulary[w].clone(), row[w]))
                .collect(),
        })
        .collect()
}

pub fn export_topics(model: &MtlvmModel, vocabulary: &[String], k: usize) -> TopicExport {
    let crf = model.franchise();
    let rows: Vec<(usize, &Vec<f64>)> = crf
        .seating
        .live_atoms()
        .map(|(i, _)| (i, &crf.topics.theta[i]))
        .collect();
    let states = (0..model.hp.n_states)
        .map(|c| {
            let mut topics = crf.state_topic_shares(c);
            topics.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            StateTopics { state: c, topics }
        })
        .collect();
    TopicExport {
        topics: topic_words(&rows, vocabulary, k),
        states,
    }
}

pub fn export_lda_topics(model: &LdaModel, vocabulary: &[String], k: usize) -> TopicExport {
    let phi = model.phi();
    let rows: Vec<(usize, &Vec<f64>)> = phi.iter().enumerate().collect();
    TopicExport {
        topics: topic_words(&rows, vocabulary, k),
        states: Vec::new(),
    }
}

impl TopicExport {
    pub fn write_topics_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "topic,rank,token,probability")?;
        for t in &self.topics {
            for (r, (word, p)) in t.words.iter().enumerate() {
                writeln!(w, "{},{},{},{}", t.topic, r + 1, word, p)?;
            }
        }
        Ok(())
    }

    pub fn write_states_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "state,rank,topic,probability")?;
        for s in &self.states {
            for (r, (topic, p)) in s.topics.iter().enumerate() {
                writeln!(w, "{},{},{},{}", s.state, r + 1, topic, p)?;
            }
        }
        Ok(())
    }

    /// One row per state with the probabilities of its `n` leading topics.
    pub fn write_state_top_table<W: Write>(&self, n: usize, mut w: W) -> std::io::Result<()> {
        write!(w, "state")?;
        for r in 1..=n {
            write!(w, ",top_{r}_topic,top_{r}_probability")?;
        }
        writeln!(w)?;
        for s in &self.states {
            write!(w, "{}", s.state)?;
            for r in 0..n {
                match s.topics.get(r) {
                    Some((t, p)) => write!(w, ",{t},{p}")?,
                    None => write!(w, ",,")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateTrends {
    pub n_states: usize,
    /// (epoch, fraction of assigned units in each state); epochs with no units are omitted.
    pub occupancy: Vec<(u32, Vec<f64>)>,
    /// (entity, epoch, state) in layout order.
    pub trajectories: Vec<(String, u32, u32)>,
}

/// Per-epoch state popularity and per-entity trajectories from unit states.
pub fn export_state_trends(model: &MtlvmModel) -> StateTrends {
    state_trends(model.layout(), &model.states(), model.hp.n_states)
}

pub fn state_trends(layout: &crate::corpus::Layout, states: &[u32], n_states: usize) -> StateTrends {
    let mut counts: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut trajectories = Vec::new();
    for (u, info) in layout.units.iter().enumerate() {
        let c = states[u];
        counts.entry(info.epoch).or_insert_with(|| vec![0; n_states])[c as usize] += 1;
        trajectories.push((layout.entities[info.entity as usize].clone(), info.epoch, c));
    }
    let occupancy = counts
        .into_iter()
        .map(|(epoch, row)| {
            let total: u64 = row.iter().sum();
            (epoch, row.iter().map(|&n| n as f64 / total as f64).collect())
        })
        .collect();
    StateTrends {
        n_states,
        occupancy,
        trajectories,
    }
}

impl StateTrends {
    pub fn write_occupancy_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "epoch")?;
        for c in 0..self.n_states {
            write!(w, ",state_{c}")?;
        }
        writeln!(w)?;
        for (epoch, row) in &self.occupancy {
            write!(w, "{epoch}")?;
            for p in row {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_trajectories_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "entity,epoch,state")?;
        for (e, t, c) in &self.trajectories {
            writeln!(w, "{e},{t},{c}")?;
        }
        Ok(())
    }
}
