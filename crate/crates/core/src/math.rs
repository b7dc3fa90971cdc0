//! Numeric helpers shared by the samplers.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
pub use statrs::function::gamma::ln_gamma;

use crate::rng::SeededRng;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalize log weights into probabilities.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|w| (w - lse).exp()).collect()
}

/// Draw an index with probability proportional to `weights` (nonnegative, not all zero).
pub fn sample_weights(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0 && total.is_finite(), "bad weights {weights:?}");
    let mut u = rng.uniform() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding can leave u marginally above the last positive bucket
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Draw an index with probability proportional to `exp(log_weights)`.
pub fn sample_log_weights(log_weights: &[f64], rng: &mut SeededRng) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "no finite log weight in {log_weights:?}");
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    sample_weights(&weights, rng)
}

/// One draw from Dirichlet(`concentration`) via normalized Gamma variates.
pub fn sample_dirichlet(concentration: &[f64], rng: &mut SeededRng) -> Vec<f64> {
    let mut draws: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            let g = Gamma::new(a, 1.0).expect("positive Dirichlet concentration");
            g.sample(rng).max(f64::MIN_POSITIVE)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|x| *x /= total);
    draws
}

/// Sparse word histogram kept sorted by word id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCounts {
    entries: Vec<(u32, u32)>,
    total: u32,
}

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(word: u32) -> Self {
        Self {
            entries: vec![(word, 1)],
            total: 1,
        }
    }

    pub fn from_words(words: impl IntoIterator<Item = u32>) -> Self {
        let mut counts = Self::new();
        for w in words {
            counts.add(w, 1);
        }
        counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn get(&self, word: u32) -> u32 {
        match self.entries.binary_search_by_key(&word, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    pub fn add(&mut self, word: u32, n: u32) {
        if n == 0 {
            return;
        }
        match self.entries.binary_search_by_key(&word, |e| e.0) {
            Ok(i) => self.entries[i].1 += n,
            Err(i) => self.entries.insert(i, (word, n)),
        }
        self.total += n;
    }

    /// Panics if fewer than `n` copies of `word` are present.
    pub fn remove(&mut self, word: u32, n: u32) {
        if n == 0 {
            return;
        }
        let i = self
            .entries
            .binary_search_by_key(&word, |e| e.0)
            .expect("removing absent word");
        let slot = &mut self.entries[i].1;
        assert!(*slot >= n, "word count underflow");
        *slot -= n;
        if *slot == 0 {
            self.entries.remove(i);
        }
        self.total -= n;
    }

    pub fn add_all(&mut self, other: &WordCounts) {
        for (w, n) in other.iter() {
            self.add(w, n);
        }
    }

    pub fn remove_all(&mut self, other: &WordCounts) {
        for (w, n) in other.iter() {
            self.remove(w, n);
        }
    }

    /// Σ_w n_w · log_probs[w]
    pub fn log_likelihood(&self, log_probs: &[f64]) -> f64 {
        self.iter()
            .map(|(w, n)| n as f64 * log_probs[w as usize])
            .sum()
    }

    /// Log Dirichlet-multinomial marginal of this (ordered) sequence of words
    /// under a symmetric Dirichlet(`eta`) over `vocab_size` words.
    pub fn dirichlet_multinomial_ln(&self, eta: f64, vocab_size: usize) -> f64 {
        let v_eta = eta * vocab_size as f64;
        let mut ln = ln_gamma(v_eta) - ln_gamma(v_eta + self.total as f64);
        for (_, n) in self.iter() {
            ln += ln_gamma(eta + n as f64) - ln_gamma(eta);
        }
        ln
    }
}
