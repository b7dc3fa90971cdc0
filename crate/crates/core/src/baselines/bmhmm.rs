use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Layout};
use crate::error::{Error, Result};
use crate::markov::{StateChain, TransitionLedger, TransitionMatrix};
use crate::math::sample_dirichlet;
use crate::rng::{RngState, SeededRng};
use crate::sampler::Hyperparams;

pub const BMHMM_FORMAT: &str = "bmhmm-checkpoint/1";

/// States emit every token independently from `iota[c]`. Shares the
/// collapsed transition layer with the full model; `eta0` is the emission prior.
#[derive(Debug, Clone)]
pub struct BmHmmModel {
    pub hp: Hyperparams,
    layout: Layout,
    corpus_digest: String,
    chain: StateChain,
    /// Per unit, its sparse word histogram.
    unit_words: Vec<Vec<(u32, u32)>>,
    /// `counts[c][w]`: tokens of word `w` in units assigned to `c`.
    counts: Vec<Vec<u64>>,
    pub iota: Vec<Vec<f64>>,
    sweep: usize,
    rng: SeededRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmHmmCheckpoint {
    pub format: String,
    pub hyperparams: Hyperparams,
    pub corpus_digest: String,
    pub sweep: usize,
    pub rng: RngState,
    pub states: Vec<u32>,
    pub ledger: TransitionLedger,
    pub iota: Vec<Vec<f64>>,
}

impl BmHmmCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(bytes)?;
        if ckpt.format != BMHMM_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn unit_histograms(layout: &Layout) -> Vec<Vec<(u32, u32)>> {
    layout
        .units
        .iter()
        .map(|u| {
            let mut h = std::collections::BTreeMap::new();
            for d in u.docs.clone() {
                for &w in layout.doc_tokens(d) {
                    *h.entry(w).or_insert(0u32) += 1;
                }
            }
            h.into_iter().collect()
        })
        .collect()
}

impl BmHmmModel {
    pub fn initialize(corpus: &Corpus, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        if corpus.is_empty() {
            return Err(Error::precondition("corpus is empty"));
        }
        let layout = Layout::new(corpus);
        let mut rng = SeededRng::seed_from_u64(hp.seed);
        let chain = StateChain::new_uniform(layout.links.clone(), hp.n_states, hp.alpha, &mut rng)?;
        let unit_words = unit_histograms(&layout);
        let mut model = Self {
            hp: hp.clone(),
            corpus_digest: corpus.digest(),
            chain,
            unit_words,
            counts: Vec::new(),
            iota: Vec::new(),
            sweep: 0,
            rng,
            layout,
        };
        model.recount();
        model.sample_iota();
        Ok(model)
    }

    fn recount(&mut self) {
        let v = self.layout.vocab_size;
        self.counts = vec![vec![0; v]; self.hp.n_states];
        for (u, words) in self.unit_words.iter().enumerate() {
            let c = self.chain.state(u).expect("assigned");
            for &(w, n) in words {
                self.counts[c][w as usize] += n as u64;
            }
        }
    }

    fn sample_iota(&mut self) {
        let eta = self.hp.eta0;
        self.iota = self
            .counts
            .iter()
            .map(|row| {
                let conc: Vec<f64> = row.iter().map(|&n| eta + n as f64).collect();
                sample_dirichlet(&conc, &mut self.rng)
            })
            .collect();
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn chain(&self) -> &StateChain {
        &self.chain
    }

    pub fn states(&self) -> Vec<u32> {
        self.chain.assignments()
    }

    pub fn sweep(&self) -> usize {
        self.sweep
    }

    pub fn rho(&self) -> TransitionMatrix {
        self.chain.estimate_rho()
    }

    /// `Σ_w n_w log iota_c[w]` for every state.
    pub fn unit_log_likelihoods(&self, words: &[(u32, u32)]) -> Vec<f64> {
        self.iota
            .iter()
            .map(|row| words.iter().map(|&(w, n)| n as f64 * row[w as usize].ln()).sum())
            .collect()
    }

    pub fn unit_words(&self, unit: usize) -> &[(u32, u32)] {
        &self.unit_words[unit]
    }

    /// Posterior-mean emission probabilities `(n_cw + eta0) / (n_c + V eta0)`.
    pub fn emission_mean(&self, state: usize) -> Vec<f64> {
        let eta = self.hp.eta0;
        let row = &self.counts[state];
        let total: u64 = row.iter().sum();
        let den = total as f64 + eta * row.len() as f64;
        row.iter().map(|&n| (n as f64 + eta) / den).collect()
    }

    /// Probability the emission posterior mean gives an unseen word when the
    /// vocabulary is extended by one slot.
    pub fn oov_probability(&self, state: usize) -> f64 {
        let eta = self.hp.eta0;
        let total: u64 = self.counts[state].iter().sum();
        eta / (total as f64 + eta * (self.layout.vocab_size + 1) as f64)
    }

    pub fn sweep_once(&mut self) -> Result<()> {
        for u in 0..self.layout.n_units() {
            let old = self.chain.unassign(u);
            for &(w, n) in &self.unit_words[u] {
                self.counts[old][w as usize] -= n as u64;
            }
            let lls = self.unit_log_likelihoods(&self.unit_words[u]);
            let c = self.chain.sample_state(u, &lls, &mut self.rng);
            for &(w, n) in &self.unit_words[u] {
                self.counts[c][w as usize] += n as u64;
            }
        }
        self.sample_iota();
        self.sweep += 1;
        if cfg!(debug_assertions) {
            self.audit()?;
        }
        Ok(())
    }

    pub fn run(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.sweep_once()?;
        }
        Ok(())
    }

    pub fn audit(&self) -> Result<()> {
        self.chain.audit()?;
        let mut check = self.clone();
        check.recount();
        if check.counts != self.counts {
            return Err(Error::invariant("emission counts drifted"));
        }
        for (c, row) in self.iota.iter().enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invariant(format!("iota row {c} does not sum to 1")));
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> BmHmmCheckpoint {
        BmHmmCheckpoint {
            format: BMHMM_FORMAT.into(),
            hyperparams: self.hp.clone(),
            corpus_digest: self.corpus_digest.clone(),
            sweep: self.sweep,
            rng: self.rng.state(),
            states: self.chain.assignments(),
            ledger: self.chain.ledger().clone(),
            iota: self.iota.clone(),
        }
    }

    pub fn from_checkpoint(corpus: &Corpus, ckpt: &BmHmmCheckpoint) -> Result<Self> {
        if corpus.digest() != ckpt.corpus_digest {
            return Err(Error::invariant("corpus digest does not match checkpoint"));
        }
        let hp = ckpt.hyperparams.clone();
        let layout = Layout::new(corpus);
        if ckpt.states.len() != layout.n_units() || ckpt.iota.len() != hp.n_states {
            return Err(Error::invariant("checkpoint dimensions do not match the corpus"));
        }
        if ckpt.iota.iter().any(|r| r.len() != layout.vocab_size) {
            return Err(Error::invariant("emission rows do not match the vocabulary"));
        }
        let chain = StateChain::with_assignments(layout.links.clone(), hp.n_states, hp.alpha, &ckpt.states)
            .map_err(|e| Error::invariant(e.to_string()))?;
        chain.verify_ledger(&ckpt.ledger)?;
        let unit_words = unit_histograms(&layout);
        let mut model = Self {
            hp,
            corpus_digest: ckpt.corpus_digest.clone(),
            chain,
            unit_words,
            counts: Vec::new(),
            iota: ckpt.iota.clone(),
            sweep: ckpt.sweep,
            rng: SeededRng::from_state(&ckpt.rng).ok_or_else(|| Error::invariant("unreadable RNG state"))?,
            layout,
        };
        model.recount();
        model.audit()?;
        Ok(model)
    }
}

/// Initialize and run `hp.sweeps` sweeps.
pub fn train_bmhmm(corpus: &Corpus, hp: &Hyperparams) -> Result<BmHmmModel> {
    let mut model = BmHmmModel::initialize(corpus, hp)?;
    model.run(hp.sweeps)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DataUnit, Document};

    fn corpus() -> Corpus {
        let units = (0..4)
            .map(|t| DataUnit {
                entity_id: "e".into(),
                epoch: t,
                documents: vec![Document {
                    tokens: vec![0, 0, 1, 2, 0],
                }],
            })
            .collect();
        Corpus::from_units(vec!["a".into(), "b".into(), "c".into()], units, None)
    }

    #[test]
    fn single_state_mean_is_smoothed_unigram() {
        let hp = Hyperparams {
            n_states: 1,
            sweeps: 3,
            burn_in: 0,
            ..Hyperparams::default()
        };
        let m = train_bmhmm(&corpus(), &hp).unwrap();
        // counts (12, 4, 4), eta 0.5, V 3
        let mean = m.emission_mean(0);
        let expect = [12.5 / 21.5, 4.5 / 21.5, 4.5 / 21.5];
        for (a, b) in mean.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let hp = Hyperparams {
            n_states: 2,
            sweeps: 4,
            burn_in: 1,
            seed: 3,
            ..Hyperparams::default()
        };
        let c = corpus();
        let m = train_bmhmm(&c, &hp).unwrap();
        let bytes = m.checkpoint().to_bytes().unwrap();
        let back = BmHmmModel::from_checkpoint(&c, &BmHmmCheckpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.checkpoint().to_bytes().unwrap(), bytes);
    }
}
