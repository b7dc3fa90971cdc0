use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::math::sample_weights;
use crate::rng::{RngState, SeededRng};

pub const LDA_FORMAT: &str = "lda-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaParams {
    #[serde(rename = "K")]
    pub n_topics: usize,
    /// Document-topic prior; `None` means `50 / K`.
    pub alpha: Option<f64>,
    /// Topic-word prior.
    pub beta: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            n_topics: 100,
            alpha: None,
            beta: 0.5,
            sweeps: 1000,
            seed: 0,
        }
    }
}

impl LdaParams {
    pub fn doc_prior(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.n_topics as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 {
            return Err(Error::precondition("K must be >= 1"));
        }
        if !(self.doc_prior() > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("LDA priors must be > 0".into()));
        }
        Ok(())
    }
}

/// Collapsed Gibbs LDA over every posting as its own document.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub params: LdaParams,
    vocab_size: usize,
    docs: Vec<Vec<u32>>,
    z: Vec<Vec<u32>>,
    nkw: Vec<Vec<u32>>,
    nk: Vec<u64>,
    ndk: Vec<Vec<u32>>,
    sweep: usize,
    rng: SeededRng,
    corpus_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaCheckpoint {
    pub format: String,
    pub params: LdaParams,
    pub corpus_digest: String,
    pub sweep: usize,
    pub rng: RngState,
    pub z: Vec<Vec<u32>>,
}

impl LdaCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(bytes)?;
        if ckpt.format != LDA_FORMAT {
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

impl LdaModel {
    pub fn initialize(corpus: &Corpus, params: &LdaParams) -> Result<Self> {
        params.validate()?;
        let docs: Vec<Vec<u32>> = corpus.documents().map(|d| d.tokens.clone()).collect();
        let mut rng = SeededRng::seed_from_u64(params.seed);
        let k = params.n_topics;
        let z = docs
            .iter()
            .map(|d| d.iter().map(|_| rng.below(k) as u32).collect())
            .collect();
        let mut model = Self {
            params: params.clone(),
            vocab_size: corpus.vocab_size(),
            docs,
            z,
            nkw: Vec::new(),
            nk: Vec::new(),
            ndk: Vec::new(),
            sweep: 0,
            rng,
            corpus_digest: corpus.digest(),
        };
        model.recount();
        Ok(model)
    }

    fn recount(&mut self) {
        let k = self.params.n_topics;
        self.nkw = vec![vec![0; self.vocab_size]; k];
        self.nk = vec![0; k];
        self.ndk = vec![vec![0; k]; self.docs.len()];
        for (d, doc) in self.docs.iter().enumerate() {
            for (n, &w) in doc.iter().enumerate() {
                let t = self.z[d][n] as usize;
                self.nkw[t][w as usize] += 1;
                self.nk[t] += 1;
                self.ndk[d][t] += 1;
            }
        }
    }

    pub fn sweep(&self) -> usize {
        self.sweep
    }

    pub fn sweep_once(&mut self) {
        let k = self.params.n_topics;
        let alpha = self.params.doc_prior();
        let beta = self.params.beta;
        let vb = beta * self.vocab_size as f64;
        let mut weights = vec![0.0; k];
        for d in 0..self.docs.len() {
            for n in 0..self.docs[d].len() {
                let w = self.docs[d][n] as usize;
                let old = self.z[d][n] as usize;
                self.nkw[old][w] -= 1;
                self.nk[old] -= 1;
                self.ndk[d][old] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (self.ndk[d][t] as f64 + alpha) * (self.nkw[t][w] as f64 + beta) / (self.nk[t] as f64 + vb);
                }
                let t = sample_weights(&weights, &mut self.rng);
                self.z[d][n] = t as u32;
                self.nkw[t][w] += 1;
                self.nk[t] += 1;
                self.ndk[d][t] += 1;
            }
        }
        self.sweep += 1;
    }

    /// Run sweeps, returning the training perplexity after each.
    pub fn run(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                self.sweep_once();
                self.perplexity()
            })
            .collect()
    }

    /// Posterior-mean topic-word distributions.
    pub fn phi(&self) -> Vec<Vec<f64>> {
        let beta = self.params.beta;
        let vb = beta * self.vocab_size as f64;
        (0..self.params.n_topics)
            .map(|t| {
                self.nkw[t]
                    .iter()
                    .map(|&n| (n as f64 + beta) / (self.nk[t] as f64 + vb))
                    .collect()
            })
            .collect()
    }

    /// Posterior-mean document-topic proportions.
    pub fn doc_topics(&self) -> Vec<Vec<f64>> {
        let alpha = self.params.doc_prior();
        let k = self.params.n_topics as f64;
        self.ndk
            .iter()
            .zip(&self.docs)
            .map(|(row, doc)| {
                let den = doc.len() as f64 + alpha * k;
                row.iter().map(|&n| (n as f64 + alpha) / den).collect()
            })
            .collect()
    }

    /// `exp(-Σ log p(w_dn) / N)` under the current posterior means.
    pub fn perplexity(&self) -> f64 {
        let phi = self.phi();
        let theta = self.doc_topics();
        let mut ll = 0.0;
        let mut n = 0usize;
        for (d, doc) in self.docs.iter().enumerate() {
            for &w in doc {
                let p: f64 = (0..self.params.n_topics).map(|t| theta[d][t] * phi[t][w as usize]).sum();
                ll += p.ln();
                n += 1;
            }
        }
        (-ll / n.max(1) as f64).exp()
    }

    pub fn audit(&self) -> Result<()> {
        let mut check = self.clone();
        check.recount();
        if check.nkw != self.nkw || check.nk != self.nk || check.ndk != self.ndk {
            return Err(Error::invariant("LDA count tables drifted"));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> LdaCheckpoint {
        LdaCheckpoint {
            format: LDA_FORMAT.into(),
            params: self.params.clone(),
            corpus_digest: self.corpus_digest.clone(),
            sweep: self.sweep,
            rng: self.rng.state(),
            z: self.z.clone(),
        }
    }

    pub fn from_checkpoint(corpus: &Corpus, ckpt: &LdaCheckpoint) -> Result<Self> {
        if corpus.digest() != ckpt.corpus_digest {
            return Err(Error::invariant("corpus digest does not match checkpoint"));
        }
        ckpt.params.validate()?;
        let docs: Vec<Vec<u32>> = corpus.documents().map(|d| d.tokens.clone()).collect();
        let shape_ok = ckpt.z.len() == docs.len()
            && ckpt.z.iter().zip(&docs).all(|(z, d)| z.len() == d.len())
            && ckpt.z.iter().flatten().all(|&t| (t as usize) < ckpt.params.n_topics);
        if !shape_ok {
            return Err(Error::invariant("topic assignments do not match the corpus"));
        }
        let mut model = Self {
            params: ckpt.params.clone(),
            vocab_size: corpus.vocab_size(),
            docs,
            z: ckpt.z.clone(),
            nkw: Vec::new(),
            nk: Vec::new(),
            ndk: Vec::new(),
            sweep: ckpt.sweep,
            rng: SeededRng::from_state(&ckpt.rng).ok_or_else(|| Error::invariant("unreadable RNG state"))?,
            corpus_digest: ckpt.corpus_digest.clone(),
        };
        model.recount();
        Ok(model)
    }
}

pub fn train_lda(corpus: &Corpus, params: &LdaParams) -> Result<(LdaModel, Vec<f64>)> {
    let mut model = LdaModel::initialize(corpus, params)?;
    let trace = model.run(params.sweeps);
    Ok((model, trace))
}
