//! Current-state estimation, next-epoch token probabilities and held-out scoring.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::baselines::BmHmmModel;
use crate::corpus::{HeldoutUnit, Layout, StartRule};
use crate::crf::ThetaView;
use crate::error::{Error, Result};
use crate::markov::{StateChain, TransitionMatrix};
use crate::sampler::MtlvmModel;

/// What prediction needs from a trained state model.
pub trait StateModel: Sync {
    fn name(&self) -> &'static str;
    fn layout(&self) -> &Layout;
    fn chain(&self) -> &StateChain;
    fn rho(&self) -> TransitionMatrix {
        self.chain().estimate_rho()
    }
    /// `log P(χ_u | c)` of a training unit for every state.
    fn unit_log_likelihoods(&self, unit: usize) -> Vec<f64>;
    /// Next-token distribution over the vocabulary given state `c`.
    fn state_token_distribution(&self, state: usize) -> Vec<f64>;
    /// Floor probability of an out-of-vocabulary token in state `c`.
    fn oov_probability(&self, state: usize) -> f64;
}

impl StateModel for MtlvmModel {
    fn name(&self) -> &'static str {
        "MTLVM"
    }

    fn layout(&self) -> &Layout {
        MtlvmModel::layout(self)
    }

    fn chain(&self) -> &StateChain {
        MtlvmModel::chain(self)
    }

    fn unit_log_likelihoods(&self, unit: usize) -> Vec<f64> {
        let current = self.chain().state(unit);
        self.franchise().unit_log_likelihoods(&self.unit_docs(unit), current)
    }

    fn state_token_distribution(&self, state: usize) -> Vec<f64> {
        self.franchise().state_token_distribution(state, ThetaView::PosteriorMean)
    }

    fn oov_probability(&self, state: usize) -> f64 {
        self.franchise().state_oov_probability(state)
    }
}

impl StateModel for BmHmmModel {
    fn name(&self) -> &'static str {
        "B-mHMM"
    }

    fn layout(&self) -> &Layout {
        BmHmmModel::layout(self)
    }

    fn chain(&self) -> &StateChain {
        BmHmmModel::chain(self)
    }

    fn unit_log_likelihoods(&self, unit: usize) -> Vec<f64> {
        BmHmmModel::unit_log_likelihoods(self, self.unit_words(unit))
    }

    fn state_token_distribution(&self, state: usize) -> Vec<f64> {
        self.emission_mean(state)
    }

    fn oov_probability(&self, state: usize) -> f64 {
        BmHmmModel::oov_probability(self, state)
    }
}

/// Argmax of `unit_ll[c] + log_prior[c]`, lowest index on ties.
pub fn argmax_state(unit_ll: &[f64], log_prior: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, (l, p)) in unit_ll.iter().zip(log_prior).enumerate() {
        let score = l + p;
        if score > best_score {
            best = c;
            best_score = score;
        }
    }
    best
}

/// Prior over a unit's state from its predecessor's current state, or the
/// chain-start rule when it has none.
pub fn state_prior(model: &dyn StateModel, unit: usize, rho: &TransitionMatrix) -> Vec<f64> {
    let chain = model.chain();
    let link = model.layout().links[unit];
    let nc = chain.n_states();
    match link.prev.and_then(|p| chain.state(p as usize)) {
        Some(p) => rho.row(p).to_vec(),
        None => match link.start {
            StartRule::Uniform => vec![1.0 / nc as f64; nc],
            StartRule::Fallback => chain.fallback_state_distribution(link.epoch as usize, rho).probs,
        },
    }
}

/// `argmax_c log P(χ_u | c) + log P(c | c_prev)` for a training unit.
pub fn estimate_state(model: &dyn StateModel, unit: usize, rho: &TransitionMatrix) -> Result<usize> {
    let layout = model.layout();
    let n_tokens: usize = layout.units[unit].docs.clone().map(|d| layout.docs[d].len()).sum();
    if n_tokens == 0 {
        return Err(Error::precondition("cannot estimate the state of a unit with no tokens"));
    }
    let prior: Vec<f64> = state_prior(model, unit, rho).iter().map(|p| p.ln()).collect();
    Ok(argmax_state(&model.unit_log_likelihoods(unit), &prior))
}

/// `Σ_c P(c_next = c) P(w | c)`.
pub fn predict_token_prob(next_state_probs: &[f64], per_state_token_probs: &[f64]) -> f64 {
    next_state_probs
        .iter()
        .zip(per_state_token_probs)
        .map(|(p, q)| p * q)
        .sum()
}

/// Full next-epoch vocabulary distribution under one model.
pub fn next_token_distribution(model: &dyn StateModel, next_state_probs: &[f64]) -> Vec<f64> {
    let v = model.layout().vocab_size;
    let mut out = vec![0.0; v];
    for (c, &p) in next_state_probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, q) in out.iter_mut().zip(model.state_token_distribution(c)) {
            *o += p * q;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenProbability {
    pub document: usize,
    pub position: usize,
    pub token: String,
    pub probability: f64,
    pub oov: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityPrediction {
    pub entity: String,
    /// Estimated state at the final training epoch (from the first model).
    pub estimated_state: usize,
    /// `rho[estimated_state]`, averaged over models.
    pub next_state_probs: Vec<f64>,
    pub heldout_ll: f64,
    pub tokens: usize,
    pub oov_tokens: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub token_probs: Vec<TokenProbability>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub model: String,
    pub entities: Vec<EntityPrediction>,
    pub total_ll: f64,
    pub tokens: usize,
    pub oov_tokens: usize,
    /// Test units whose entity has no unit at the final training epoch.
    pub skipped_units: usize,
}

impl PredictionReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let nc = self.entities.first().map_or(0, |e| e.next_state_probs.len());
        write!(w, "entity,estimated_state")?;
        for c in 0..nc {
            write!(w, ",next_state_prob_{c}")?;
        }
        writeln!(w, ",heldout_ll")?;
        for e in &self.entities {
            write!(w, "{},{}", e.entity, e.estimated_state)?;
            for p in &e.next_state_probs {
                write!(w, ",{p}")?;
            }
            writeln!(w, ",{}", e.heldout_ll)?;
        }
        Ok(())
    }

    pub fn write_token_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "entity,document,position,token,probability,oov")?;
        for e in &self.entities {
            for t in &e.token_probs {
                writeln!(w, "{},{},{},{},{},{}", e.entity, t.document, t.position, t.token, t.probability, t.oov)?;
            }
        }
        Ok(())
    }

    /// Corpus-level summary as `key = value` lines.
    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model = {:?}", self.model)?;
        writeln!(w, "heldout_ll = {}", self.total_ll)?;
        writeln!(w, "entities = {}", self.entities.len())?;
        writeln!(w, "tokens = {}", self.tokens)?;
        writeln!(w, "oov_tokens = {}", self.oov_tokens)?;
        writeln!(w, "skipped_units = {}", self.skipped_units)
    }
}

/// One row of the held-out comparison table; `None` marks a model scored elsewhere.
pub fn write_heldout_table<W: Write>(rows: &[(String, Option<f64>)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,heldout_ll")?;
    for (model, ll) in rows {
        match ll {
            Some(v) => writeln!(w, "{model},{v}")?,
            None => writeln!(w, "{model},NA")?,
        }
    }
    Ok(())
}

/// Score held-out final-epoch units. With several models (e.g. thinned
/// samples of one run) token probabilities are averaged across them.
pub fn heldout_log_likelihood(
    models: &[&dyn StateModel],
    vocabulary: &[String],
    test: &[HeldoutUnit],
    keep_token_probs: bool,
) -> Result<PredictionReport> {
    let first = *models.first().ok_or_else(|| Error::precondition("no model to score with"))?;
    if test.is_empty() {
        return Err(Error::precondition("test set is empty"));
    }
    let index: HashMap<&str, u32> = vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let rhos: Vec<TransitionMatrix> = models.iter().map(|m| m.rho()).collect();
    let mut dist_cache: Vec<HashMap<usize, (Vec<f64>, f64)>> = vec![HashMap::new(); models.len()];

    let mut entities = Vec::new();
    let mut skipped = 0;
    for unit in test {
        let prev_epoch = match unit.epoch.checked_sub(1) {
            Some(e) => e,
            None => {
                skipped += 1;
                continue;
            }
        };
        let Some(u) = first.layout().unit_at(&unit.entity_id, prev_epoch) else {
            skipped += 1;
            continue;
        };
        // per model: next-state probabilities, then the mixed token distribution
        let mut mixes: Vec<(Vec<f64>, f64)> = Vec::with_capacity(models.len());
        let mut estimated = 0;
        let mut next_avg = vec![0.0; first.chain().n_states()];
        for (m, model) in models.iter().enumerate() {
            let c = estimate_state(*model, u, &rhos[m])?;
            if m == 0 {
                estimated = c;
            }
            let next = rhos[m].row(c).to_vec();
            for (a, p) in next_avg.iter_mut().zip(&next) {
                *a += p / models.len() as f64;
            }
            let mut mix = vec![0.0; model.layout().vocab_size];
            let mut oov = 0.0;
            for (s, &p) in next.iter().enumerate() {
                let (dist, floor) = dist_cache[m]
                    .entry(s)
                    .or_insert_with(|| (model.state_token_distribution(s), model.oov_probability(s)));
                for (x, q) in mix.iter_mut().zip(dist.iter()) {
                    *x += p * q;
                }
                oov += p * *floor;
            }
            mixes.push((mix, oov));
        }
        let mut ll = 0.0;
        let mut tokens = 0;
        let mut oov_tokens = 0;
        let mut token_probs = Vec::new();
        for (d, doc) in unit.documents.iter().enumerate() {
            for (n, tok) in doc.iter().enumerate() {
                let id = index.get(tok.as_str()).copied();
                let p = mixes
                    .iter()
                    .map(|(mix, oov)| match id {
                        Some(w) => mix[w as usize],
                        None => *oov,
                    })
                    .sum::<f64>()
                    / models.len() as f64;
                ll += p.ln();
                tokens += 1;
                if id.is_none() {
                    oov_tokens += 1;
                }
                if keep_token_probs {
                    token_probs.push(TokenProbability {
                        document: d,
                        position: n,
                        token: tok.clone(),
                        probability: p,
                        oov: id.is_none(),
                    });
                }
            }
        }
        entities.push(EntityPrediction {
            entity: unit.entity_id.clone(),
            estimated_state: estimated,
            next_state_probs: next_avg,
            heldout_ll: ll,
            tokens,
            oov_tokens,
            token_probs,
        });
    }
    if entities.is_empty() {
        return Err(Error::precondition("no test unit has a state at the final training epoch"));
    }
    let total_ll = entities.iter().map(|e| e.heldout_ll).sum();
    Ok(PredictionReport {
        model: first.name().to_string(),
        tokens: entities.iter().map(|e| e.tokens).sum(),
        oov_tokens: entities.iter().map(|e| e.oov_tokens).sum(),
        entities,
        total_ll,
        skipped_units: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_decides_on_equal_likelihoods() {
        let prior = [0.9f64.ln(), 0.1f64.ln()];
        assert_eq!(argmax_state(&[-3.0, -3.0], &prior), 0);
    }

    #[test]
    fn likelihood_decides_on_flat_prior() {
        let prior = [0.5f64.ln(), 0.5f64.ln()];
        assert_eq!(argmax_state(&[0.2f64.ln(), 0.3f64.ln()], &prior), 1);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_state(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn mixture_arithmetic() {
        assert!((predict_token_prob(&[0.7, 0.3], &[0.1, 0.2]) - 0.13).abs() < 1e-15);
        assert_eq!(predict_token_prob(&[1.0], &[0.25]), 0.25);
    }

    #[test]
    fn heldout_table_has_placeholder_row() {
        let mut out = Vec::new();
        write_heldout_table(
            &[("MTLVM".into(), Some(-10.5)), ("B-mHMM".into(), Some(-11.0)), ("DTM".into(), None)],
            &mut out,
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "model,heldout_ll\nMTLVM,-10.5\nB-mHMM,-11\nDTM,NA\n");
    }
}
