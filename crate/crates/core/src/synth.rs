//! Forward sampling from the generative process, with ground truth, plus the
//! brute-force posterior enumerators used as test oracles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DataUnit, Document, Layout, StartRule};
use crate::error::{Error, Result};
use crate::math::{ln_gamma, log_sum_exp, sample_dirichlet, sample_weights, WordCounts};
use crate::rng::SeededRng;
use rand_distr::{Beta, Distribution};

/// How the Dirichlet processes are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpPath {
    /// Explicit stick-breaking weights truncated at total mass 1 - 1e-12.
    #[default]
    StickBreaking,
    /// Sequential Chinese restaurant franchise.
    Crp,
}

/// What the states emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emission {
    /// Hierarchical topics.
    #[default]
    Mtlvm,
    /// Each state emits words directly from its own distribution.
    Bmhmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(rename = "C", alias = "states")]
    pub n_states: usize,
    #[serde(rename = "V", alias = "vocab_size")]
    pub vocab_size: usize,
    pub entities: usize,
    pub epochs: usize,
    pub docs_per_unit: usize,
    pub tokens_per_doc: usize,
    pub alpha: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta0: f64,
    /// Weight in [0, 1) each state's measure puts on atoms dedicated to it.
    pub separation: Option<f64>,
    /// Dedicated atoms per state when `separation` is set.
    pub dedicated_atoms: usize,
    /// B-mHMM emission only: give each state its own block of the vocabulary.
    pub disjoint_vocab: bool,
    pub path: DpPath,
    pub emission: Emission,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_states: 3,
            vocab_size: 60,
            entities: 10,
            epochs: 4,
            docs_per_unit: 3,
            tokens_per_doc: 10,
            alpha: 1.0,
            gamma0: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            eta0: 0.5,
            separation: None,
            dedicated_atoms: 2,
            disjoint_vocab: false,
            path: DpPath::StickBreaking,
            emission: Emission::Mtlvm,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("C", self.n_states),
            ("V", self.vocab_size),
            ("entities", self.entities),
            ("epochs", self.epochs),
            ("docs_per_unit", self.docs_per_unit),
            ("tokens_per_doc", self.tokens_per_doc),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, x) in [
            ("alpha", self.alpha),
            ("gamma0", self.gamma0),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("eta0", self.eta0),
        ] {
            if !(x > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if let Some(s) = self.separation {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config("separation must lie in [0, 1)".into()));
            }
            if self.dedicated_atoms == 0 {
                return Err(Error::Config("dedicated_atoms must be >= 1 with separation".into()));
            }
        }
        if self.disjoint_vocab && self.vocab_size < self.n_states {
            return Err(Error::Config("disjoint_vocab needs V >= C".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthUnit {
    pub entity_id: String,
    pub epoch: u32,
    pub state: u32,
    /// Atom index of every token, per document.
    pub token_topics: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rho: Vec<Vec<f64>>,
    /// Atom word distributions (B-mHMM emission: one row per state).
    pub theta: Vec<Vec<f64>>,
    pub units: Vec<TruthUnit>,
}

impl GroundTruth {
    /// True state of each unit in layout order.
    pub fn states_for(&self, layout: &Layout) -> Result<Vec<u32>> {
        let index: BTreeMap<(&str, u32), u32> = self
            .units
            .iter()
            .map(|u| ((u.entity_id.as_str(), u.epoch), u.state))
            .collect();
        layout
            .units
            .iter()
            .map(|u| {
                let entity = layout.entities[u.entity as usize].as_str();
                index
                    .get(&(entity, u.epoch))
                    .copied()
                    .ok_or_else(|| Error::invariant(format!("no truth for {entity}@{}", u.epoch)))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Stick-breaking weights of GEM(`gamma`), stopping once the leftover mass is below 1e-12.
pub fn stick_breaking(gamma: f64, rng: &mut SeededRng) -> Vec<f64> {
    let beta = Beta::new(1.0, gamma).expect("positive concentration");
    let mut left = 1.0;
    let mut sticks = Vec::new();
    while left > 1e-12 {
        let v: f64 = beta.sample(rng);
        sticks.push(left * v);
        left *= 1.0 - v;
        if sticks.len() > 100_000 {
            break;
        }
    }
    // fold the residual into the last stick so the weights sum to 1
    if let Some(last) = sticks.last_mut() {
        *last += left;
    }
    sticks
}

fn word_names(v: usize) -> Vec<String> {
    let width = v.to_string().len().max(3);
    (0..v).map(|i| format!("w{i:0width$}")).collect()
}

fn entity_name(e: usize, n: usize) -> String {
    let width = n.to_string().len().max(3);
    format!("e{e:0width$}")
}

/// Sample transition rows and state chains (uniform first epoch).
fn sample_chains(cfg: &SynthConfig, rng: &mut SeededRng) -> (Vec<Vec<f64>>, Vec<Vec<u32>>) {
    let rho: Vec<Vec<f64>> = (0..cfg.n_states)
        .map(|_| sample_dirichlet(&vec![cfg.alpha; cfg.n_states], rng))
        .collect();
    let chains = (0..cfg.entities)
        .map(|_| {
            let mut c = rng.below(cfg.n_states);
            let mut states = vec![c as u32];
            for _ in 1..cfg.epochs {
                c = sample_weights(&rho[c], rng);
                states.push(c as u32);
            }
            states
        })
        .collect();
    (rho, chains)
}

/// Draw a corpus and its ground truth from the configured process.
pub fn generate(cfg: &SynthConfig) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let (rho, chains) = sample_chains(cfg, &mut rng);
    let (theta, topics) = match (cfg.emission, cfg.path) {
        (Emission::Bmhmm, _) => emit_bmhmm(cfg, &chains, &mut rng),
        (Emission::Mtlvm, DpPath::StickBreaking) => emit_sticks(cfg, &chains, &mut rng),
        (Emission::Mtlvm, DpPath::Crp) => emit_crp(cfg, &chains, &mut rng),
    };
    let vocab = word_names(cfg.vocab_size);
    let mut units = Vec::new();
    let mut truth_units = Vec::new();
    for (e, states) in chains.iter().enumerate() {
        let entity_id = entity_name(e, cfg.entities);
        for (t, &state) in states.iter().enumerate() {
            let (docs, token_topics): (Vec<Document>, Vec<Vec<u32>>) = topics[e][t]
                .iter()
                .map(|doc| {
                    let tokens = doc.iter().map(|(w, _)| *w).collect();
                    let tops = doc.iter().map(|(_, k)| *k).collect();
                    (Document { tokens }, tops)
                })
                .unzip();
            units.push(DataUnit {
                entity_id: entity_id.clone(),
                epoch: t as u32,
                documents: docs,
            });
            truth_units.push(TruthUnit {
                entity_id: entity_id.clone(),
                epoch: t as u32,
                state,
                token_topics,
            });
        }
    }
    let corpus = Corpus::from_units(vocab, units, Some(cfg.epochs as u32));
    Ok((
        corpus,
        GroundTruth {
            rho,
            theta,
            units: truth_units,
        },
    ))
}

/// Per entity, per epoch, per document: (word, atom) of each token.
type Emitted = Vec<Vec<Vec<Vec<(u32, u32)>>>>;

fn emit_bmhmm(cfg: &SynthConfig, chains: &[Vec<u32>], rng: &mut SeededRng) -> (Vec<Vec<f64>>, Emitted) {
    let v = cfg.vocab_size;
    let iota: Vec<Vec<f64>> = (0..cfg.n_states)
        .map(|c| {
            if cfg.disjoint_vocab {
                let block = v / cfg.n_states;
                let lo = c * block;
                let hi = if c + 1 == cfg.n_states { v } else { lo + block };
                let inner = sample_dirichlet(&vec![cfg.eta0; hi - lo], rng);
                let mut row = vec![0.0; v];
                row[lo..hi].copy_from_slice(&inner);
                row
            } else {
                sample_dirichlet(&vec![cfg.eta0; v], rng)
            }
        })
        .collect();
    let emitted = chains
        .iter()
        .map(|states| {
            states
                .iter()
                .map(|&c| {
                    (0..cfg.docs_per_unit)
                        .map(|_| {
                            (0..cfg.tokens_per_doc)
                                .map(|_| (sample_weights(&iota[c as usize], rng) as u32, c))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    (iota, emitted)
}

/// Atoms `0..C*dedicated` are the dedicated ones (state `c` owns
/// `c*dedicated..(c+1)*dedicated`); the shared atoms follow.
fn dedicated_range(cfg: &SynthConfig, c: usize) -> std::ops::Range<usize> {
    match cfg.separation {
        Some(_) => c * cfg.dedicated_atoms..(c + 1) * cfg.dedicated_atoms,
        None => 0..0,
    }
}

fn n_dedicated(cfg: &SynthConfig) -> usize {
    cfg.separation.map_or(0, |_| cfg.n_states * cfg.dedicated_atoms)
}

fn emit_sticks(cfg: &SynthConfig, chains: &[Vec<u32>], rng: &mut SeededRng) -> (Vec<Vec<f64>>, Emitted) {
    let v = cfg.vocab_size;
    let sep = cfg.separation.unwrap_or(0.0);
    let n_ded = n_dedicated(cfg);
    let beta = stick_breaking(cfg.gamma0, rng);
    let theta: Vec<Vec<f64>> = (0..n_ded + beta.len())
        .map(|_| sample_dirichlet(&vec![cfg.eta0; v], rng))
        .collect();
    // G_c: dish weights and the atom each dish serves
    let g: Vec<(Vec<f64>, Vec<u32>)> = (0..cfg.n_states)
        .map(|_| {
            let pi = stick_breaking(cfg.gamma1, rng);
            let atoms = pi
                .iter()
                .map(|_| (n_ded + sample_weights(&beta, rng)) as u32)
                .collect();
            (pi, atoms)
        })
        .collect();
    let draw_from_g = |c: usize, rng: &mut SeededRng| -> u32 {
        let ded = dedicated_range(cfg, c);
        if !ded.is_empty() && rng.uniform() < sep {
            return (ded.start + rng.below(ded.len())) as u32;
        }
        let (pi, atoms) = &g[c];
        atoms[sample_weights(pi, rng)]
    };
    let emitted = chains
        .iter()
        .enumerate()
        .map(|(e, states)| {
            let mut erng = rng.split(e as u64 + 1);
            states
                .iter()
                .map(|&c| {
                    (0..cfg.docs_per_unit)
                        .map(|_| {
                            let sticks = stick_breaking(cfg.gamma2, &mut erng);
                            let psi: Vec<u32> = sticks
                                .iter()
                                .map(|_| draw_from_g(c as usize, &mut erng))
                                .collect();
                            (0..cfg.tokens_per_doc)
                                .map(|_| {
                                    let k = psi[sample_weights(&sticks, &mut erng)];
                                    let w = sample_weights(&theta[k as usize], &mut erng) as u32;
                                    (w, k)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    (theta, emitted)
}

fn emit_crp(cfg: &SynthConfig, chains: &[Vec<u32>], rng: &mut SeededRng) -> (Vec<Vec<f64>>, Emitted) {
    let v = cfg.vocab_size;
    let sep = cfg.separation.unwrap_or(0.0);
    let n_ded = n_dedicated(cfg);
    let mut theta: Vec<Vec<f64>> = (0..n_ded)
        .map(|_| sample_dirichlet(&vec![cfg.eta0; v], rng))
        .collect();
    // shared atoms: dish counts o_k
    let mut atom_dishes: Vec<u64> = Vec::new();
    // per state: (tables per dish, atom of dish)
    let mut dishes: Vec<Vec<(u64, u32)>> = vec![Vec::new(); cfg.n_states];
    let mut emitted: Emitted = Vec::new();
    for states in chains {
        let mut entity = Vec::new();
        for &c in states {
            let c = c as usize;
            let mut unit = Vec::new();
            for _ in 0..cfg.docs_per_unit {
                // tables: (customers, atom)
                let mut tables: Vec<(u64, u32)> = Vec::new();
                let mut doc = Vec::new();
                for _ in 0..cfg.tokens_per_doc {
                    let mut w: Vec<f64> = tables.iter().map(|t| t.0 as f64).collect();
                    w.push(cfg.gamma2);
                    let t = sample_weights(&w, rng);
                    if t == tables.len() {
                        let atom = new_table_atom(cfg, c, sep, &mut dishes[c], &mut atom_dishes, &mut theta, rng);
                        tables.push((0, atom));
                    }
                    tables[t].0 += 1;
                    let k = tables[t].1;
                    doc.push((sample_weights(&theta[k as usize], rng) as u32, k));
                }
                unit.push(doc);
            }
            entity.push(unit);
        }
        emitted.push(entity);
    }
    (theta, emitted)
}

fn new_table_atom(
    cfg: &SynthConfig,
    c: usize,
    sep: f64,
    dishes: &mut Vec<(u64, u32)>,
    atom_dishes: &mut Vec<u64>,
    theta: &mut Vec<Vec<f64>>,
    rng: &mut SeededRng,
) -> u32 {
    let ded = dedicated_range(cfg, c);
    if !ded.is_empty() && rng.uniform() < sep {
        return (ded.start + rng.below(ded.len())) as u32;
    }
    let n_ded = n_dedicated(cfg);
    let mut w: Vec<f64> = dishes.iter().map(|d| d.0 as f64).collect();
    w.push(cfg.gamma1);
    let s = sample_weights(&w, rng);
    if s < dishes.len() {
        dishes[s].0 += 1;
        return dishes[s].1;
    }
    let mut w: Vec<f64> = atom_dishes.iter().map(|&o| o as f64).collect();
    w.push(cfg.gamma0);
    let k = sample_weights(&w, rng);
    if k == atom_dishes.len() {
        atom_dishes.push(0);
        theta.push(sample_dirichlet(&vec![cfg.eta0; cfg.vocab_size], rng));
    }
    atom_dishes[k] += 1;
    let atom = (n_ded + k) as u32;
    dishes.push((1, atom));
    atom
}

// ---- enumeration oracles ---------------------------------------------------------

/// All set partitions of `n` items as restricted growth strings, in lexicographic order.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, max: u32, n: usize, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for label in 0..=max + 1 {
            prefix.push(label);
            let next_max = max.max(label);
            rec(prefix, next_max, n, out);
            prefix.pop();
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut prefix = vec![0];
    rec(&mut prefix, 0, n, &mut out);
    out
}

/// Relabel block labels by first appearance.
pub fn canonical_labels(labels: &[u32]) -> Vec<u32> {
    let mut map: Vec<(u32, u32)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some((_, to)) => *to,
            None => {
                let to = map.len() as u32;
                map.push((l, to));
                to
            }
        })
        .collect()
}

fn partition_blocks(labels: &[u32]) -> Vec<u64> {
    let n = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut sizes = vec![0u64; n];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    sizes
}

/// Closed-form CRP log probability of a partition.
fn ewens_ln(sizes: &[u64], gamma: f64) -> f64 {
    let n: u64 = sizes.iter().sum();
    let mut lp = ln_gamma(gamma) - ln_gamma(gamma + n as f64);
    for &s in sizes.iter().filter(|&&s| s > 0) {
        lp += gamma.ln() + ln_gamma(s as f64);
    }
    lp
}

/// Closed-form collapsed transition log prior with uniform chain starts.
fn markov_ln(chains: &[Vec<u32>], n_states: usize, alpha: f64) -> f64 {
    let mut counts = vec![vec![0u64; n_states]; n_states];
    for chain in chains {
        for w in chain.windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1;
        }
    }
    let ca = n_states as f64 * alpha;
    let mut lp = -(chains.len() as f64) * (n_states as f64).ln();
    for row in &counts {
        let total: u64 = row.iter().sum();
        lp += ln_gamma(ca) - ln_gamma(ca + total as f64);
        for &n in row {
            lp += ln_gamma(alpha + n as f64) - ln_gamma(alpha);
        }
    }
    lp
}

fn cartesian<T: Clone>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for prefix in &out {
            for item in list {
                let mut p = prefix.clone();
                p.push(item.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Atom layer for the enumerator.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleAtoms {
    /// Nonparametric atoms with `theta` integrated out under Dirichlet(eta0).
    Nonparametric { eta0: f64 },
    /// A frozen atom set with a uniform base measure over it.
    Fixed { theta: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleParams {
    pub n_states: usize,
    pub alpha: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub atoms: OracleAtoms,
}

/// One discrete configuration of the model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Configuration {
    /// State per unit, layout order.
    pub states: Vec<u32>,
    /// Table partition per document (canonical labels).
    pub tables: Vec<Vec<u32>>,
    /// Per state, the dish partition of its tables (ordered by document, then table).
    pub dishes: Vec<Vec<u32>>,
    /// Atom of every dish (ordered by state, then dish): a partition for
    /// nonparametric atoms, fixed atom indices otherwise.
    pub atoms: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub configurations: Vec<(Configuration, f64)>,
    /// Log marginal probability of the observed tokens.
    pub log_evidence: f64,
}

impl Posterior {
    /// Marginal distribution of any function of the configuration.
    pub fn marginal<K: Ord, F: Fn(&Configuration) -> K>(&self, key: F) -> BTreeMap<K, f64> {
        let mut out = BTreeMap::new();
        for (config, p) in &self.configurations {
            *out.entry(key(config)).or_insert(0.0) += p;
        }
        out
    }
}

pub const MAX_ORACLE_TOKENS: usize = 5;
pub const MAX_ORACLE_STATES: usize = 2;
pub const MAX_ORACLE_ENTITIES: usize = 2;

/// Exact posterior over states, table partitions, dish partitions and atom
/// links of a tiny corpus.
pub fn enumerate_posterior(corpus: &Corpus, params: &OracleParams) -> Result<Posterior> {
    let layout = Layout::new(corpus);
    let n_tokens = layout.tokens.len();
    if n_tokens > MAX_ORACLE_TOKENS || params.n_states > MAX_ORACLE_STATES || layout.entities.len() > MAX_ORACLE_ENTITIES {
        return Err(Error::EnumerationBound(format!(
            "instance has {} tokens, {} states, {} entities; limits are {}, {}, {}",
            n_tokens,
            params.n_states,
            layout.entities.len(),
            MAX_ORACLE_TOKENS,
            MAX_ORACLE_STATES,
            MAX_ORACLE_ENTITIES
        )));
    }
    if layout.links.iter().any(|l| l.prev.is_none() && l.start == StartRule::Fallback) {
        return Err(Error::EnumerationBound(
            "chains that start from the market-wide fallback are not enumerable".into(),
        ));
    }
    if params.n_states == 0 {
        return Err(Error::Config("C must be >= 1".into()));
    }
    let v = layout.vocab_size;
    let nc = params.n_states;
    let n_units = layout.n_units();
    let n_docs = layout.n_docs();

    let state_lists: Vec<Vec<u32>> = vec![(0..nc as u32).collect(); n_units];
    let table_lists: Vec<Vec<Vec<u32>>> = (0..n_docs).map(|d| set_partitions(layout.docs[d].len())).collect();

    let mut configurations = Vec::new();
    let mut log_scores = Vec::new();

    for states in cartesian(&state_lists) {
        let chains: Vec<Vec<u32>> = chain_groups(&layout)
            .iter()
            .map(|units| units.iter().map(|&u| states[u]).collect())
            .collect();
        let lp_states = markov_ln(&chains, nc, params.alpha);
        let doc_state: Vec<usize> = (0..n_docs).map(|d| states[layout.doc_unit[d] as usize] as usize).collect();

        for tables in cartesian(&table_lists) {
            let mut lp_tables = 0.0;
            // blocks of words per table, grouped by state in (doc, table) order
            let mut state_tables: Vec<Vec<WordCounts>> = vec![Vec::new(); nc];
            for d in 0..n_docs {
                let sizes = partition_blocks(&tables[d]);
                lp_tables += ewens_ln(&sizes, params.gamma2);
                let mut blocks = vec![WordCounts::new(); sizes.len()];
                for (n, &t) in tables[d].iter().enumerate() {
                    blocks[t as usize].add(layout.doc_tokens(d)[n], 1);
                }
                state_tables[doc_state[d]].extend(blocks);
            }
            let dish_lists: Vec<Vec<Vec<u32>>> = state_tables.iter().map(|t| set_partitions(t.len())).collect();
            for dishes in cartesian(&dish_lists) {
                let mut lp_dishes = 0.0;
                let mut dish_blocks: Vec<WordCounts> = Vec::new();
                for c in 0..nc {
                    let sizes = partition_blocks(&dishes[c]);
                    lp_dishes += ewens_ln(&sizes, params.gamma1);
                    let mut blocks = vec![WordCounts::new(); sizes.len()];
                    for (t, &s) in dishes[c].iter().enumerate() {
                        blocks[s as usize].add_all(&state_tables[c][t]);
                    }
                    dish_blocks.extend(blocks);
                }
                let s_total = dish_blocks.len();
                let atom_choices: Vec<Vec<u32>> = match &params.atoms {
                    OracleAtoms::Nonparametric { .. } => set_partitions(s_total),
                    OracleAtoms::Fixed { theta } => cartesian(&vec![(0..theta.len() as u32).collect::<Vec<_>>(); s_total]),
                };
                for atoms in atom_choices {
                    let lp_atoms = match &params.atoms {
                        OracleAtoms::Nonparametric { eta0 } => {
                            let sizes = partition_blocks(&atoms);
                            let mut merged = vec![WordCounts::new(); sizes.len()];
                            for (s, &k) in atoms.iter().enumerate() {
                                merged[k as usize].add_all(&dish_blocks[s]);
                            }
                            ewens_ln(&sizes, params.gamma0)
                                + merged.iter().map(|b| b.dirichlet_multinomial_ln(*eta0, v)).sum::<f64>()
                        }
                        OracleAtoms::Fixed { theta } => {
                            let kk = theta.len();
                            let prior = params.gamma0 / kk as f64;
                            let mut o = vec![0u64; kk];
                            let mut lik = 0.0;
                            for (s, &k) in atoms.iter().enumerate() {
                                o[k as usize] += 1;
                                for (w, n) in dish_blocks[s].iter() {
                                    lik += n as f64 * theta[k as usize][w as usize].ln();
                                }
                            }
                            let mut lp = ln_gamma(params.gamma0) - ln_gamma(params.gamma0 + s_total as f64);
                            for &n in &o {
                                lp += ln_gamma(n as f64 + prior) - ln_gamma(prior);
                            }
                            lp + lik
                        }
                    };
                    let score = lp_states + lp_tables + lp_dishes + lp_atoms;
                    if score == f64::NEG_INFINITY {
                        continue;
                    }
                    log_scores.push(score);
                    configurations.push(Configuration {
                        states: states.clone(),
                        tables: tables.clone(),
                        dishes: dishes.clone(),
                        atoms,
                    });
                }
            }
        }
    }
    let log_evidence = log_sum_exp(&log_scores);
    let configurations = configurations
        .into_iter()
        .zip(log_scores)
        .map(|(c, s)| (c, (s - log_evidence).exp()))
        .collect();
    Ok(Posterior {
        configurations,
        log_evidence,
    })
}

/// Units of each chain, in order.
fn chain_groups(layout: &Layout) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (u, link) in layout.links.iter().enumerate() {
        if link.prev.is_none() {
            groups.push(vec![u]);
        } else {
            groups.last_mut().expect("chain start precedes members").push(u);
        }
    }
    groups
}

/// Exact posterior over the state assignments of chains whose units carry the
/// given per-state log-likelihoods (transition rows integrated out, uniform starts).
pub fn enumerate_state_posterior(
    chain_lengths: &[usize],
    n_states: usize,
    alpha: f64,
    unit_ll: &[Vec<f64>],
) -> Result<Vec<(Vec<u32>, f64)>> {
    let n_units: usize = chain_lengths.iter().sum();
    if unit_ll.len() != n_units {
        return Err(Error::precondition("one likelihood row per unit required"));
    }
    if n_states.pow(n_units as u32) > 1 << 20 {
        return Err(Error::EnumerationBound(format!("{n_states}^{n_units} assignments")));
    }
    let lists = vec![(0..n_states as u32).collect::<Vec<_>>(); n_units];
    let mut out = Vec::new();
    let mut scores = Vec::new();
    for states in cartesian(&lists) {
        let mut chains = Vec::new();
        let mut at = 0;
        for &len in chain_lengths {
            chains.push(states[at..at + len].to_vec());
            at += len;
        }
        let lik: f64 = states.iter().enumerate().map(|(u, &c)| unit_ll[u][c as usize]).sum();
        scores.push(markov_ln(&chains, n_states, alpha) + lik);
        out.push(states);
    }
    let z = log_sum_exp(&scores);
    Ok(out.into_iter().zip(scores).map(|(s, l)| (s, (l - z).exp())).collect())
}

// ---- stick-breaking vs CRP self-check -----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsReport {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    if lambda < 0.2 {
        // the alternating series converges slowly here; Q(0.2) = 1 to 12 digits
        p = 1.0;
    }
    for k in (1..=100).take_while(|_| lambda >= 0.2) {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    KsReport {
        statistic: d,
        p_value: p.clamp(0.0, 1.0),
        samples: n.min(m),
    }
}

/// Share of tokens in a corpus that belong to its most used atom.
fn dominant_topic_share(truth: &GroundTruth) -> f64 {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut total = 0;
    for u in &truth.units {
        for doc in &u.token_topics {
            for &k in doc {
                *counts.entry(k).or_insert(0) += 1;
                total += 1;
            }
        }
    }
    *counts.values().max().unwrap_or(&0) as f64 / total.max(1) as f64
}

/// Generate `replicates` corpora down each path and KS-compare the dominant
/// topic share.
pub fn ks_self_check(cfg: &SynthConfig, replicates: usize) -> Result<KsReport> {
    let mut by_path = [Vec::new(), Vec::new()];
    for (i, path) in [DpPath::StickBreaking, DpPath::Crp].into_iter().enumerate() {
        for r in 0..replicates {
            let c = SynthConfig {
                path,
                emission: Emission::Mtlvm,
                seed: cfg.seed.wrapping_add((r as u64) << 1 | i as u64),
                ..cfg.clone()
            };
            let (_, truth) = generate(&c)?;
            by_path[i].push(dominant_topic_share(&truth));
        }
    }
    Ok(ks_two_sample(&by_path[0], &by_path[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_config_is_constant() {
        let cfg = SynthConfig {
            n_states: 1,
            vocab_size: 1,
            entities: 2,
            epochs: 3,
            ..SynthConfig::default()
        };
        let (corpus, truth) = generate(&cfg).unwrap();
        assert!(corpus.documents().all(|d| d.tokens.iter().all(|&w| w == 0)));
        assert!(truth.units.iter().all(|u| u.state == 0));
        corpus.validate().unwrap();
    }

    #[test]
    fn dimensions_match_config() {
        let cfg = SynthConfig {
            entities: 4,
            epochs: 3,
            docs_per_unit: 2,
            tokens_per_doc: 5,
            separation: Some(0.5),
            ..SynthConfig::default()
        };
        for path in [DpPath::StickBreaking, DpPath::Crp] {
            let (corpus, truth) = generate(&SynthConfig { path, ..cfg.clone() }).unwrap();
            assert_eq!(corpus.units().count(), 12);
            assert_eq!(corpus.n_tokens(), 120);
            assert_eq!(truth.units.len(), 12);
            let layout = Layout::new(&corpus);
            assert_eq!(truth.states_for(&layout).unwrap().len(), 12);
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let (a, ta) = generate(&cfg).unwrap();
        let (b, tb) = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn stick_weights_sum_to_one() {
        let mut rng = SeededRng::seed_from_u64(1);
        for g in [0.5, 1.0, 5.0] {
            let s = stick_breaking(g, &mut rng);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (0..=5).map(|n| set_partitions(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 15, 52]);
        assert_eq!(canonical_labels(&[4, 4, 1, 4, 7]), vec![0, 0, 1, 0, 2]);
    }

    fn one_doc(tokens: &[u32], v: usize) -> Corpus {
        Corpus::from_units(
            (0..v).map(|i| format!("w{i}")).collect(),
            vec![DataUnit {
                entity_id: "e".into(),
                epoch: 0,
                documents: vec![Document { tokens: tokens.to_vec() }],
            }],
            None,
        )
    }

    fn fixed_params(theta: Vec<Vec<f64>>, gamma2: f64) -> OracleParams {
        OracleParams {
            n_states: 1,
            alpha: 1.0,
            gamma0: 1.0,
            gamma1: 1.0,
            gamma2,
            atoms: OracleAtoms::Fixed { theta },
        }
    }

    #[test]
    fn single_token_single_configuration() {
        let post = enumerate_posterior(&one_doc(&[0], 2), &fixed_params(vec![vec![0.5, 0.5]], 1.0)).unwrap();
        assert_eq!(post.configurations.len(), 1);
        assert!((post.configurations[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_customers_follow_crp() {
        let g2 = 2.5;
        let post = enumerate_posterior(&one_doc(&[0, 1], 2), &fixed_params(vec![vec![0.5, 0.5]], g2)).unwrap();
        let m = post.marginal(|c| c.tables[0].clone());
        assert!((m[&vec![0, 0]] - 1.0 / (1.0 + g2)).abs() < 1e-12);
        assert!((m[&vec![0, 1]] - g2 / (1.0 + g2)).abs() < 1e-12);
    }

    #[test]
    fn three_customer_oracle_matches_forward_simulation() {
        let post = enumerate_posterior(&one_doc(&[0, 1, 2], 3), &fixed_params(vec![vec![1.0 / 3.0; 3]], 1.0)).unwrap();
        let m = post.marginal(|c| c.tables[0].clone());
        assert_eq!(m.len(), 5);
        assert!((m.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = SeededRng::seed_from_u64(9);
        let mut sim: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let n = 1_000_000;
        for _ in 0..n {
            let mut sizes: Vec<f64> = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..3 {
                let mut w = sizes.clone();
                w.push(1.0);
                let t = sample_weights(&w, &mut rng);
                if t == sizes.len() {
                    sizes.push(0.0);
                }
                sizes[t] += 1.0;
                labels.push(t as u32);
            }
            *sim.entry(labels).or_insert(0.0) += 1.0 / n as f64;
        }
        for (k, p) in &m {
            assert!((p - sim[k]).abs() < 0.01, "{k:?}: {p} vs {}", sim[k]);
        }
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let err = enumerate_posterior(&one_doc(&[0; 6], 1), &fixed_params(vec![vec![1.0]], 1.0)).unwrap_err();
        assert!(matches!(err, Error::EnumerationBound(_)));
        assert!(err.to_string().contains("6 tokens"));
    }

    #[test]
    fn nonparametric_evidence_of_one_token_is_uniform() {
        let params = OracleParams {
            atoms: OracleAtoms::Nonparametric { eta0: 0.5 },
            ..fixed_params(Vec::new(), 1.0)
        };
        let post = enumerate_posterior(&one_doc(&[2], 4), &params).unwrap();
        assert!((post.log_evidence - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn state_oracle_flat_likelihood_is_prior() {
        let post = enumerate_state_posterior(&[2], 2, 1.0, &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        // uniform start, then (1+0)/(2) for either successor
        for (_, p) in &post {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn ks_identical_samples() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-9);
        let r = ks_two_sample(&[0.0; 50], &[1.0; 50]);
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-6);
    }
}
