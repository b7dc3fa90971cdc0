//! Gibbs driver: alternates recruitment-state moves with franchise seating
//! moves, records a trace, and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Layout};
use crate::crf::{CrfParams, DpConcentrations, Franchise, SeatingState, TopicBank};
use crate::error::{Error, Result};
use crate::markov::{StateChain, TransitionLedger, TransitionMatrix};
use crate::rng::{RngState, SeededRng};

pub const CHECKPOINT_FORMAT: &str = "mtlvm-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Number of recruitment states `C`.
    #[serde(rename = "C", alias = "states")]
    pub n_states: usize,
    /// Symmetric Dirichlet prior on transition rows.
    pub alpha: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Symmetric Dirichlet concentration of the topic base measure.
    pub eta0: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_states: 10,
            alpha: 1.0,
            gamma0: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            eta0: 0.5,
            sweeps: 1000,
            burn_in: 500,
            thin: 5,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::Config("C must be >= 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        self.crf_params().validate()?;
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::precondition("burn_in < sweeps violated"));
        }
        Ok(())
    }

    pub fn crf_params(&self) -> CrfParams {
        CrfParams {
            concentrations: DpConcentrations {
                gamma0: self.gamma0,
                gamma1: self.gamma1,
                gamma2: self.gamma2,
            },
            eta0: self.eta0,
            ..CrfParams::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Score a unit's tables on the rayon pool.
    pub parallel: bool,
    /// Full recount after every sweep; defaults to on in debug builds.
    pub audit: Option<bool>,
    /// Emit a checkpoint every this many sweeps (0: only at the end).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sweep: usize,
    pub logp: f64,
    /// Live atom count.
    pub k: usize,
    pub occupancy: Vec<u64>,
}

impl TraceRecord {
    pub fn csv_header(n_states: usize) -> String {
        let mut h = String::from("sweep,logp,K");
        for c in 0..n_states {
            h.push_str(&format!(",occupancy_{c}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{}", self.sweep, self.logp, self.k);
        for n in &self.occupancy {
            row.push_str(&format!(",{n}"));
        }
        row
    }
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], n_states: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", TraceRecord::csv_header(n_states))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Everything needed to resume a run, given the corpus it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub hyperparams: Hyperparams,
    pub corpus_digest: String,
    pub sweep: usize,
    pub rng: RngState,
    pub states: Vec<u32>,
    pub ledger: TransitionLedger,
    pub fallback_uniform_events: u64,
    pub seating: SeatingState,
    pub theta: Vec<Vec<f64>>,
    /// Thinned post-burn-in state assignments.
    pub state_samples: Vec<Vec<u32>>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: ModelCheckpoint = serde_json::from_slice(bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }

    /// Write atomically: a crash leaves the previous checkpoint intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Receives trace records and checkpoints as training proceeds.
pub trait CheckpointSink {
    fn trace(&mut self, record: &TraceRecord) -> Result<()>;
    fn checkpoint(&mut self, checkpoint: &ModelCheckpoint) -> Result<()>;
    /// Called after each thinned post-burn-in sweep.
    fn sample(&mut self, _checkpoint: &ModelCheckpoint) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl CheckpointSink for NullSink {
    fn trace(&mut self, _: &TraceRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _: &ModelCheckpoint) -> Result<()> {
        Ok(())
    }
}

/// Writes `trace.csv` and `checkpoint.json` into a directory.
pub struct DirectorySink {
    dir: PathBuf,
    trace: BufWriter<File>,
}

impl DirectorySink {
    pub const TRACE: &'static str = "trace.csv";
    pub const CHECKPOINT: &'static str = "checkpoint.json";
    pub const SAMPLES: &'static str = "samples";

    /// Start a fresh trace.
    pub fn create(dir: &Path, n_states: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::TRACE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut trace = BufWriter::new(file);
        writeln!(trace, "{}", TraceRecord::csv_header(n_states)).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            trace,
        })
    }

    /// Continue an existing trace.
    pub fn append(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::TRACE);
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            trace: BufWriter::new(file),
        })
    }
}

impl CheckpointSink for DirectorySink {
    fn trace(&mut self, record: &TraceRecord) -> Result<()> {
        writeln!(self.trace, "{}", record.csv_row()).map_err(|e| Error::io(self.dir.join(Self::TRACE), e))
    }

    fn checkpoint(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        self.trace
            .flush()
            .map_err(|e| Error::io(self.dir.join(Self::TRACE), e))?;
        checkpoint.save(&self.dir.join(Self::CHECKPOINT))
    }

    fn sample(&mut self, checkpoint: &ModelCheckpoint) -> Result<()> {
        let dir = self.dir.join(Self::SAMPLES);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        checkpoint.save(&dir.join(sample_file_name(checkpoint.sweep)))
    }
}

pub fn sample_file_name(sweep: usize) -> String {
    format!("sample-{sweep:07}.json")
}

/// The last `n` thinned samples in a run directory, oldest first.
pub fn last_samples(dir: &Path, n: usize) -> Result<Vec<PathBuf>> {
    let samples = dir.join(DirectorySink::SAMPLES);
    let mut paths: Vec<PathBuf> = match fs::read_dir(&samples) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|f| f.to_str())
                    .is_some_and(|f| f.starts_with("sample-") && f.ends_with(".json"))
            })
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&samples, e)),
    };
    paths.sort();
    let skip = paths.len().saturating_sub(n);
    Ok(paths.split_off(skip))
}

/// A trained (or training) model bound to its corpus layout.
#[derive(Debug, Clone)]
pub struct MtlvmModel {
    pub hp: Hyperparams,
    layout: Layout,
    corpus_digest: String,
    chain: StateChain,
    crf: Franchise,
    doc_states: Vec<u32>,
    sweep: usize,
    rng: SeededRng,
    state_samples: Vec<Vec<u32>>,
}

impl MtlvmModel {
    /// Uniform states, then a sequential seating pass over the corpus.
    pub fn initialize(corpus: &Corpus, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        if corpus.is_empty() {
            return Err(Error::precondition("corpus is empty"));
        }
        corpus.validate()?;
        let layout = Layout::new(corpus);
        let mut rng = SeededRng::seed_from_u64(hp.seed);
        let chain = StateChain::new_uniform(layout.links.clone(), hp.n_states, hp.alpha, &mut rng)?;
        let doc_lengths: Vec<usize> = layout.docs.iter().map(|r| r.len()).collect();
        let crf = Franchise::new(hp.crf_params(), &doc_lengths, hp.n_states, layout.vocab_size);
        let doc_states = doc_states_of(&layout, &chain);
        let mut model = Self {
            hp: hp.clone(),
            corpus_digest: corpus.digest(),
            layout,
            chain,
            crf,
            doc_states,
            sweep: 0,
            rng,
            state_samples: Vec::new(),
        };
        for d in 0..model.layout.n_docs() {
            let c = model.doc_states[d] as usize;
            for n in 0..model.layout.docs[d].len() {
                let w = model.layout.doc_tokens(d)[n];
                model.crf.sample_table(d, n, w, c, &mut model.rng);
            }
        }
        model.crf.compact(&model.doc_states);
        Ok(model)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn chain(&self) -> &StateChain {
        &self.chain
    }

    pub fn franchise(&self) -> &Franchise {
        &self.crf
    }

    pub fn sweep(&self) -> usize {
        self.sweep
    }

    pub fn corpus_digest(&self) -> &str {
        &self.corpus_digest
    }

    /// Current state of every unit, in layout order.
    pub fn states(&self) -> Vec<u32> {
        self.chain.assignments()
    }

    pub fn state_samples(&self) -> &[Vec<u32>] {
        &self.state_samples
    }

    pub fn rho(&self) -> TransitionMatrix {
        self.chain.estimate_rho()
    }

    pub fn unit_docs(&self, unit: usize) -> Vec<usize> {
        self.layout.units[unit].docs.clone().collect()
    }

    /// Log joint of states, seating and tokens given `theta`.
    pub fn joint_log_prob(&self) -> f64 {
        self.chain.log_prior() + self.crf.seating_log_joint()
    }

    fn trace_record(&self) -> TraceRecord {
        TraceRecord {
            sweep: self.sweep,
            logp: self.joint_log_prob(),
            k: self.crf.seating.atom_count(),
            occupancy: self.chain.state_counts(),
        }
    }

    fn is_sample_sweep(&self) -> bool {
        self.sweep > self.hp.burn_in && (self.sweep - self.hp.burn_in) % self.hp.thin == 0
    }

    /// One full Gibbs sweep.
    pub fn sweep_once(&mut self, opts: &RunOptions) -> Result<TraceRecord> {
        let rng = &mut self.rng;
        for u in 0..self.layout.n_units() {
            let docs: Vec<usize> = self.layout.units[u].docs.clone().collect();
            let old = self.chain.unassign(u);
            self.crf.detach_docs(&docs, old);
            let lls = self.crf.unit_log_likelihoods_par(&docs, None, opts.parallel);
            let c = self.chain.sample_state(u, &lls, rng);
            self.crf.attach_docs(&docs, c, rng);
            for d in docs {
                self.doc_states[d] = c as u32;
            }
        }
        for d in 0..self.layout.n_docs() {
            let c = self.doc_states[d] as usize;
            let tokens = &self.layout.tokens[self.layout.docs[d].clone()];
            for (n, &w) in tokens.iter().enumerate() {
                self.crf.remove_customer(d, n, w, c);
                self.crf.sample_table(d, n, w, c, rng);
            }
        }
        for d in 0..self.layout.n_docs() {
            let c = self.doc_states[d] as usize;
            for t in 0..self.crf.seating.tables[d].len() {
                if self.crf.seating.tables[d][t].customers > 0 {
                    self.crf.sample_dish(d, t, c, rng);
                }
            }
        }
        for c in 0..self.hp.n_states {
            for s in 0..self.crf.seating.dishes[c].len() {
                if self.crf.seating.dishes[c][s].tables > 0 {
                    self.crf.sample_atom_assignment(c, s, rng);
                }
            }
        }
        self.crf.sample_theta(rng);
        self.crf.compact(&self.doc_states);
        self.sweep += 1;
        if self.is_sample_sweep() {
            self.state_samples.push(self.chain.assignments());
        }
        if opts.audit.unwrap_or(cfg!(debug_assertions)) {
            self.audit()?;
        }
        Ok(self.trace_record())
    }

    /// Run `n` sweeps, streaming trace records and checkpoints to `sink`.
    pub fn run(&mut self, n: usize, opts: &RunOptions, sink: &mut dyn CheckpointSink) -> Result<Vec<TraceRecord>> {
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let record = self.sweep_once(opts)?;
            if !record.logp.is_finite() {
                return Err(Error::invariant(format!("non-finite joint log-probability at sweep {}", record.sweep)));
            }
            sink.trace(&record)?;
            if self.is_sample_sweep() {
                sink.sample(&self.checkpoint())?;
            }
            records.push(record);
            if opts.checkpoint_every > 0 && (i + 1) % opts.checkpoint_every == 0 && i + 1 < n {
                sink.checkpoint(&self.checkpoint())?;
            }
        }
        sink.checkpoint(&self.checkpoint())?;
        Ok(records)
    }

    pub fn audit(&self) -> Result<()> {
        self.chain.audit()?;
        let tokens = |d: usize| self.layout.doc_tokens(d).to_vec();
        self.crf.audit(&tokens, &self.doc_states)?;
        if self.doc_states != doc_states_of(&self.layout, &self.chain) {
            return Err(Error::invariant("document states disagree with unit states"));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            hyperparams: self.hp.clone(),
            corpus_digest: self.corpus_digest.clone(),
            sweep: self.sweep,
            rng: self.rng.state(),
            states: self.chain.assignments(),
            ledger: self.chain.ledger().clone(),
            fallback_uniform_events: self.chain.fallback_uniform_events,
            seating: self.crf.seating.clone(),
            theta: self.crf.topics.theta.clone(),
            state_samples: self.state_samples.clone(),
        }
    }

    /// Rebuild a model from a checkpoint, verifying every stored count.
    pub fn from_checkpoint(corpus: &Corpus, ckpt: &ModelCheckpoint) -> Result<Self> {
        let hp = ckpt.hyperparams.clone();
        if hp.n_states == 0 || !(hp.alpha > 0.0) {
            return Err(Error::invariant("checkpoint hyperparameters are invalid"));
        }
        hp.crf_params().validate()?;
        let digest = corpus.digest();
        if digest != ckpt.corpus_digest {
            return Err(Error::invariant(format!(
                "corpus digest {} does not match checkpoint {}",
                digest, ckpt.corpus_digest
            )));
        }
        let layout = Layout::new(corpus);
        if ckpt.states.len() != layout.n_units() || ckpt.seating.z.len() != layout.n_docs() {
            return Err(Error::invariant("checkpoint dimensions do not match the corpus"));
        }
        if ckpt.seating.n_states() != hp.n_states || ckpt.seating.vocab_size != layout.vocab_size {
            return Err(Error::invariant("checkpoint seating dimensions do not match"));
        }
        if ckpt.theta.len() != ckpt.seating.atoms.len() {
            return Err(Error::invariant("theta rows do not match atom count"));
        }
        let mut chain = StateChain::with_assignments(layout.links.clone(), hp.n_states, hp.alpha, &ckpt.states)
            .map_err(|e| Error::invariant(e.to_string()))?;
        chain.verify_ledger(&ckpt.ledger)?;
        chain.fallback_uniform_events = ckpt.fallback_uniform_events;
        let mut crf = Franchise {
            params: hp.crf_params(),
            seating: ckpt.seating.clone(),
            topics: TopicBank::from_rows(hp.eta0, ckpt.theta.clone()),
        };
        let doc_states = doc_states_of(&layout, &chain);
        for d in 0..layout.n_docs() {
            if ckpt.seating.z[d].len() != layout.docs[d].len()
                || ckpt.seating.z[d]
                    .iter()
                    .any(|&t| t as usize >= ckpt.seating.tables[d].len())
            {
                return Err(Error::invariant(format!("doc {d}: seating does not match tokens")));
            }
        }
        for (c, dishes) in ckpt.seating.dishes.iter().enumerate() {
            for (s, dish) in dishes.iter().enumerate() {
                if dish.tables > 0 && dish.atom as usize >= ckpt.seating.atoms.len() {
                    return Err(Error::invariant(format!("state {c} dish {s}: dangling atom link")));
                }
            }
        }
        for (d, tables) in ckpt.seating.tables.iter().enumerate() {
            let c = doc_states[d] as usize;
            for (t, table) in tables.iter().enumerate() {
                if table.customers > 0 && table.dish as usize >= ckpt.seating.dishes[c].len() {
                    return Err(Error::invariant(format!("doc {d} table {t}: dangling dish link")));
                }
            }
        }
        let tokens = |d: usize| layout.doc_tokens(d).to_vec();
        crf.restore_derived(&tokens, &doc_states);
        let rng = SeededRng::from_state(&ckpt.rng).ok_or_else(|| Error::invariant("unreadable RNG state"))?;
        let model = Self {
            hp,
            layout,
            corpus_digest: digest,
            chain,
            crf,
            doc_states,
            sweep: ckpt.sweep,
            rng,
            state_samples: ckpt.state_samples.clone(),
        };
        model.audit()?;
        Ok(model)
    }

    /// Per-unit most frequent state over the thinned samples (lowest label on
    /// ties); the current states if no samples were kept.
    pub fn posterior_mode_states(&self) -> Vec<u32> {
        if self.state_samples.is_empty() {
            return self.states();
        }
        (0..self.layout.n_units())
            .map(|u| {
                let mut counts = vec![0u32; self.hp.n_states];
                for s in &self.state_samples {
                    counts[s[u] as usize] += 1;
                }
                let best = counts.iter().copied().max().unwrap_or(0);
                counts.iter().position(|&n| n == best).unwrap_or(0) as u32
            })
            .collect()
    }

    /// Importance estimate of a unit's marginal log-likelihood under `state`.
    pub fn unit_marginal_log_likelihood(&self, unit: usize, state: usize, replicates: usize, rng: &mut SeededRng) -> Result<f64> {
        let docs: Vec<(usize, Vec<u32>)> = self
            .unit_docs(unit)
            .into_iter()
            .map(|d| (d, self.layout.doc_tokens(d).to_vec()))
            .collect();
        let current = self.chain.state(unit).expect("trained model has every unit assigned");
        self.crf.unit_log_marginal_estimate(&docs, current, state, replicates, rng)
    }

    /// Same model with state labels permuted: units in `c` move to `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.chain = self.chain.permuted(perm);
        let mut dishes = vec![Vec::new(); perm.len()];
        for (c, list) in self.crf.seating.dishes.iter().enumerate() {
            dishes[perm[c]] = list.clone();
        }
        out.crf.seating.dishes = dishes;
        out.doc_states = self.doc_states.iter().map(|&c| perm[c as usize] as u32).collect();
        out
    }
}

fn doc_states_of(layout: &Layout, chain: &StateChain) -> Vec<u32> {
    layout
        .doc_unit
        .iter()
        .map(|&u| chain.state(u as usize).expect("every unit assigned") as u32)
        .collect()
}

/// Initialize and run `hp.sweeps` sweeps.
pub fn train(
    corpus: &Corpus,
    hp: &Hyperparams,
    opts: &RunOptions,
    sink: &mut dyn CheckpointSink,
) -> Result<(MtlvmModel, Vec<TraceRecord>)> {
    let mut model = MtlvmModel::initialize(corpus, hp)?;
    let trace = model.run(hp.sweeps, opts, sink)?;
    Ok((model, trace))
}

/// Continue a checkpointed run for `extra` sweeps; the stored sweep budget
/// grows by the same amount.
pub fn resume(
    corpus: &Corpus,
    ckpt: &ModelCheckpoint,
    extra: usize,
    opts: &RunOptions,
    sink: &mut dyn CheckpointSink,
) -> Result<(MtlvmModel, Vec<TraceRecord>)> {
    let mut model = MtlvmModel::from_checkpoint(corpus, ckpt)?;
    model.hp.sweeps += extra;
    let trace = model.run(extra, opts, sink)?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DataUnit, Document};

    fn toy_corpus() -> Corpus {
        let vocab: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let mut units = Vec::new();
        for e in 0..3 {
            for t in 0..3u32 {
                let base = if (e + t as usize) % 2 == 0 { 0 } else { 3 };
                let docs = (0..2)
                    .map(|m| Document {
                        tokens: (0..4).map(|n| (base + (n + m) % 3) as u32).collect(),
                    })
                    .collect();
                units.push(DataUnit {
                    entity_id: format!("e{e}"),
                    epoch: t,
                    documents: docs,
                });
            }
        }
        Corpus::from_units(vocab, units, None)
    }

    fn hp(sweeps: usize) -> Hyperparams {
        Hyperparams {
            n_states: 2,
            sweeps,
            burn_in: 1,
            thin: 1,
            seed: 42,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn burn_in_must_leave_sweeps() {
        let h = Hyperparams {
            sweeps: 5,
            burn_in: 5,
            ..Hyperparams::default()
        };
        let err = h.validate().unwrap_err();
        assert_eq!(err.to_string(), "burn_in < sweeps violated");
    }

    #[test]
    fn single_token_joint_is_token_probability() {
        let corpus = Corpus::from_units(
            vec!["a".into(), "b".into()],
            vec![DataUnit {
                entity_id: "e".into(),
                epoch: 0,
                documents: vec![Document { tokens: vec![1] }],
            }],
            None,
        );
        let h = Hyperparams {
            n_states: 1,
            sweeps: 2,
            burn_in: 0,
            ..Hyperparams::default()
        };
        let (model, _) = train(&corpus, &h, &RunOptions::default(), &mut NullSink).unwrap();
        let k = model.franchise().seating.live_atoms().next().unwrap().0;
        let p = model.franchise().topics.theta[k][1];
        assert!((model.joint_log_prob() - p.ln()).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let corpus = toy_corpus();
        let (a, ta) = train(&corpus, &hp(6), &RunOptions::default(), &mut NullSink).unwrap();
        let (b, tb) = train(&corpus, &hp(6), &RunOptions::default(), &mut NullSink).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.checkpoint().to_bytes().unwrap(), b.checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn parallel_scoring_does_not_change_results() {
        let corpus = toy_corpus();
        let par = RunOptions {
            parallel: true,
            ..RunOptions::default()
        };
        let (a, _) = train(&corpus, &hp(4), &RunOptions::default(), &mut NullSink).unwrap();
        let (b, _) = train(&corpus, &hp(4), &par, &mut NullSink).unwrap();
        assert_eq!(a.checkpoint().to_bytes().unwrap(), b.checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let corpus = toy_corpus();
        let (model, _) = train(&corpus, &hp(3), &RunOptions::default(), &mut NullSink).unwrap();
        let bytes = model.checkpoint().to_bytes().unwrap();
        let loaded = ModelCheckpoint::from_bytes(&bytes).unwrap();
        let rebuilt = MtlvmModel::from_checkpoint(&corpus, &loaded).unwrap();
        assert_eq!(rebuilt.checkpoint().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = toy_corpus();
        let opts = RunOptions::default();
        let (full, full_trace) = train(&corpus, &hp(8), &opts, &mut NullSink).unwrap();
        let (part, mut trace) = train(&corpus, &hp(3), &opts, &mut NullSink).unwrap();
        let (rest, more) = resume(&corpus, &part.checkpoint(), 5, &opts, &mut NullSink).unwrap();
        trace.extend(more);
        assert_eq!(trace, full_trace);
        assert_eq!(rest.checkpoint().to_bytes().unwrap(), full.checkpoint().to_bytes().unwrap());
    }

    #[test]
    fn tampered_counts_are_rejected() {
        let corpus = toy_corpus();
        let (model, _) = train(&corpus, &hp(2), &RunOptions::default(), &mut NullSink).unwrap();
        let mut ckpt = model.checkpoint();
        ckpt.seating.tables[0][0].customers += 1;
        assert!(matches!(
            MtlvmModel::from_checkpoint(&corpus, &ckpt),
            Err(Error::Invariant(_))
        ));
        let mut ckpt = model.checkpoint();
        ckpt.ledger.from[0] += 1;
        assert!(matches!(
            MtlvmModel::from_checkpoint(&corpus, &ckpt),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn joint_is_invariant_to_state_relabeling() {
        let corpus = toy_corpus();
        let (model, _) = train(&corpus, &hp(3), &RunOptions::default(), &mut NullSink).unwrap();
        let swapped = model.permuted(&[1, 0]);
        swapped.audit().unwrap();
        assert!((model.joint_log_prob() - swapped.joint_log_prob()).abs() < 1e-9);
    }

    #[test]
    fn trace_csv_layout() {
        let r = TraceRecord {
            sweep: 3,
            logp: -1.5,
            k: 2,
            occupancy: vec![4, 5],
        };
        assert_eq!(TraceRecord::csv_header(2), "sweep,logp,K,occupancy_0,occupancy_1");
        assert_eq!(r.csv_row(), "3,-1.5,2,4,5");
    }

    #[test]
    fn config_keys_mirror_hyperparams() {
        let h = Hyperparams::from_toml_str("C = 3\nalpha = 0.5\nsweeps = 20\nburn_in = 10\nseed = 7\n").unwrap();
        assert_eq!(h.n_states, 3);
        assert_eq!(h.alpha, 0.5);
        assert_eq!(h.thin, 5);
        assert!(Hyperparams::from_toml_str("bogus = 1\n").is_err());
    }
}
