//! Three-level Chinese restaurant franchise.
//!
//! Customers are tokens, restaurants are documents, and a document's menu is
//! the dish list of its unit's recruitment state. Dishes link to global atoms
//! (topics). Only link indices and counts are stored: a token's table `z`, a
//! table's dish, a dish's atom, and the customer/table/dish counts `i`, `j`,
//! `o`. Atom word distributions `theta` are kept explicitly and resampled from
//! their conjugate posterior once per sweep.
//!
//! Emptied tables, dishes and atoms become tombstones (count zero) in the same
//! update that empties them; [`Franchise::compact`] renumbers the survivors.

use std::collections::HashMap;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_gamma, log_sum_exp, sample_dirichlet, sample_log_weights, sample_weights, WordCounts};
use crate::rng::SeededRng;

/// Link value of a table that is not attached to any dish.
pub const DETACHED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConcentrations {
    /// Global atom level.
    pub gamma0: f64,
    /// Per-state dish level.
    pub gamma1: f64,
    /// Per-document table level.
    pub gamma2: f64,
}

impl Default for DpConcentrations {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }
}

/// How the base measure over atoms behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AtomPolicy {
    /// Symmetric Dirichlet base measure; atoms are created and destroyed.
    #[default]
    Nonparametric,
    /// A frozen, finite atom set with a uniform base measure over it. Atoms
    /// never die and `theta` is never resampled.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub concentrations: DpConcentrations,
    pub eta0: f64,
    pub policy: AtomPolicy,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            concentrations: DpConcentrations::default(),
            eta0: 0.5,
            policy: AtomPolicy::Nonparametric,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let c = self.concentrations;
        if !(c.gamma0 > 0.0 && c.gamma1 > 0.0 && c.gamma2 > 0.0) {
            return Err(Error::Config("gamma0, gamma1, gamma2 must all be > 0".into()));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::Config("eta0 must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// `i`: customers seated here; zero marks a tombstone.
    pub customers: u32,
    pub dish: u32,
    #[serde(skip)]
    pub words: WordCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dish {
    /// `j`: tables serving this dish; zero marks a tombstone.
    pub tables: u32,
    pub atom: u32,
    #[serde(skip)]
    pub words: WordCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// `o`: dishes linked to this atom.
    pub dishes: u32,
    /// Nonparametric atoms with `dishes == 0` are dead.
    pub alive: bool,
    #[serde(skip)]
    pub counts: Vec<u32>,
    #[serde(skip)]
    pub total: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatingState {
    pub vocab_size: usize,
    /// Per document, the table of each token.
    pub z: Vec<Vec<u32>>,
    pub tables: Vec<Vec<Table>>,
    /// Per recruitment state, its dish list.
    pub dishes: Vec<Vec<Dish>>,
    pub atoms: Vec<Atom>,
}

impl SeatingState {
    pub fn new(doc_lengths: &[usize], n_states: usize, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            z: doc_lengths.iter().map(|&n| vec![DETACHED; n]).collect(),
            tables: vec![Vec::new(); doc_lengths.len()],
            dishes: vec![Vec::new(); n_states],
            atoms: Vec::new(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.dishes.len()
    }

    pub fn live_tables(&self, doc: usize) -> impl Iterator<Item = (usize, &Table)> {
        self.tables[doc]
            .iter()
            .enumerate()
            .filter(|(_, t)| t.customers > 0)
    }

    pub fn live_dishes(&self, state: usize) -> impl Iterator<Item = (usize, &Dish)> {
        self.dishes[state]
            .iter()
            .enumerate()
            .filter(|(_, d)| d.tables > 0)
    }

    pub fn live_atoms(&self) -> impl Iterator<Item = (usize, &Atom)> {
        self.atoms.iter().enumerate().filter(|(_, a)| a.alive)
    }

    /// `Z_{d}`: live tables in a document.
    pub fn table_count(&self, doc: usize) -> usize {
        self.live_tables(doc).count()
    }

    /// `S_c`: live dishes of a state.
    pub fn dish_count(&self, state: usize) -> usize {
        self.live_dishes(state).count()
    }

    /// `K`: live atoms.
    pub fn atom_count(&self) -> usize {
        self.live_atoms().count()
    }

    /// `Σ_s j_{c,s}`
    pub fn tables_in_state(&self, state: usize) -> u64 {
        self.live_dishes(state).map(|(_, d)| d.tables as u64).sum()
    }

    /// `Σ_k o_k`
    pub fn total_dishes(&self) -> u64 {
        self.live_atoms().map(|(_, a)| a.dishes as u64).sum()
    }

    /// Atom serving a token's table, if attached.
    pub fn token_atom(&self, doc: usize, n: usize, state: usize) -> Option<usize> {
        let t = &self.tables[doc][self.z[doc][n] as usize];
        (t.dish != DETACHED).then(|| self.dishes[state][t.dish as usize].atom as usize)
    }

    /// Rebuild the derived word counts on tables, dishes and atoms from `z` and links.
    pub fn rebuild_word_counts(&mut self, doc_tokens: &dyn Fn(usize) -> Vec<u32>, doc_states: &[u32]) {
        let v = self.vocab_size;
        for tables in &mut self.tables {
            for t in tables.iter_mut() {
                t.words = WordCounts::new();
            }
        }
        for dishes in &mut self.dishes {
            for d in dishes.iter_mut() {
                d.words = WordCounts::new();
            }
        }
        for a in &mut self.atoms {
            a.counts = vec![0; v];
            a.total = 0;
        }
        for doc in 0..self.z.len() {
            let tokens = doc_tokens(doc);
            let c = doc_states[doc] as usize;
            for (n, &w) in tokens.iter().enumerate() {
                let ti = self.z[doc][n] as usize;
                let table = &mut self.tables[doc][ti];
                table.words.add(w, 1);
                if table.dish != DETACHED {
                    let dish = &mut self.dishes[c][table.dish as usize];
                    dish.words.add(w, 1);
                    let atom = &mut self.atoms[dish.atom as usize];
                    atom.counts[w as usize] += 1;
                    atom.total += 1;
                }
            }
        }
    }

    /// Recount everything from `z` and the link arrays and compare with the
    /// stored counts.
    pub fn audit(&self, doc_tokens: &dyn Fn(usize) -> Vec<u32>, doc_states: &[u32], policy: AtomPolicy) -> Result<()> {
        let nc = self.n_states();
        let mut j: Vec<Vec<u32>> = self.dishes.iter().map(|d| vec![0; d.len()]).collect();
        let mut dish_words: Vec<Vec<WordCounts>> =
            self.dishes.iter().map(|d| vec![WordCounts::new(); d.len()]).collect();
        let mut o = vec![0u32; self.atoms.len()];
        let mut atom_counts = vec![vec![0u32; self.vocab_size]; self.atoms.len()];
        for doc in 0..self.z.len() {
            let tokens = doc_tokens(doc);
            if tokens.len() != self.z[doc].len() {
                return Err(Error::invariant(format!("doc {doc}: z length mismatch")));
            }
            let c = doc_states[doc] as usize;
            if c >= nc {
                return Err(Error::invariant(format!("doc {doc}: state {c} out of range")));
            }
            let mut i = vec![0u32; self.tables[doc].len()];
            let mut words = vec![WordCounts::new(); self.tables[doc].len()];
            for (n, &w) in tokens.iter().enumerate() {
                let t = self.z[doc][n] as usize;
                if t >= i.len() {
                    return Err(Error::invariant(format!("doc {doc}: token {n} on missing table")));
                }
                i[t] += 1;
                words[t].add(w, 1);
            }
            for (t, table) in self.tables[doc].iter().enumerate() {
                if table.customers != i[t] {
                    return Err(Error::invariant(format!(
                        "doc {doc} table {t}: stored i={} recount {}",
                        table.customers, i[t]
                    )));
                }
                if table.words != words[t] {
                    return Err(Error::invariant(format!("doc {doc} table {t}: word counts drifted")));
                }
                if table.customers == 0 {
                    continue;
                }
                let s = table.dish as usize;
                if table.dish == DETACHED || s >= self.dishes[c].len() || self.dishes[c][s].tables == 0 {
                    return Err(Error::invariant(format!(
                        "doc {doc} table {t}: dangling dish link {}",
                        table.dish
                    )));
                }
                j[c][s] += 1;
                dish_words[c][s].add_all(&words[t]);
            }
        }
        for c in 0..nc {
            for (s, dish) in self.dishes[c].iter().enumerate() {
                if dish.tables != j[c][s] {
                    return Err(Error::invariant(format!(
                        "state {c} dish {s}: stored j={} recount {}",
                        dish.tables, j[c][s]
                    )));
                }
                if dish.words != dish_words[c][s] {
                    return Err(Error::invariant(format!("state {c} dish {s}: word counts drifted")));
                }
                if dish.tables == 0 {
                    continue;
                }
                let k = dish.atom as usize;
                if k >= self.atoms.len() || !self.atoms[k].alive {
                    return Err(Error::invariant(format!(
                        "state {c} dish {s}: dangling atom link {}",
                        dish.atom
                    )));
                }
                o[k] += 1;
                for (w, n) in dish.words.iter() {
                    atom_counts[k][w as usize] += n;
                }
            }
        }
        for (k, atom) in self.atoms.iter().enumerate() {
            if atom.dishes != o[k] {
                return Err(Error::invariant(format!(
                    "atom {k}: stored o={} recount {}",
                    atom.dishes, o[k]
                )));
            }
            if policy == AtomPolicy::Nonparametric && atom.alive != (atom.dishes > 0) {
                return Err(Error::invariant(format!("atom {k}: zombie or dead-with-dishes")));
            }
            if atom.counts != atom_counts[k] || atom.total != atom_counts[k].iter().sum::<u32>() {
                return Err(Error::invariant(format!("atom {k}: word counts drifted")));
            }
        }
        let tables: u64 = (0..self.z.len()).map(|d| self.table_count(d) as u64).sum();
        let j_total: u64 = (0..nc).map(|c| self.tables_in_state(c)).sum();
        if tables != j_total {
            return Err(Error::invariant("table total differs from Σ j"));
        }
        let s_total: u64 = (0..nc).map(|c| self.dish_count(c) as u64).sum();
        if s_total != self.total_dishes() {
            return Err(Error::invariant("Σ_c S_c differs from Σ_k o_k"));
        }
        Ok(())
    }
}

/// Atom word distributions and the base-measure concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicBank {
    pub eta0: f64,
    /// One row per atom slot; dead atoms have an empty row.
    pub theta: Vec<Vec<f64>>,
    #[serde(skip)]
    log_theta: Vec<Vec<f64>>,
}

impl TopicBank {
    pub fn new(eta0: f64) -> Self {
        Self {
            eta0,
            theta: Vec::new(),
            log_theta: Vec::new(),
        }
    }

    pub fn from_rows(eta0: f64, theta: Vec<Vec<f64>>) -> Self {
        let mut bank = Self {
            eta0,
            theta,
            log_theta: Vec::new(),
        };
        bank.refresh_logs();
        bank
    }

    pub fn refresh_logs(&mut self) {
        self.log_theta = self
            .theta
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect();
    }

    pub fn log_row(&self, k: usize) -> &[f64] {
        &self.log_theta[k]
    }

    fn set_row(&mut self, k: usize, row: Vec<f64>) {
        if k >= self.theta.len() {
            self.theta.resize(k + 1, Vec::new());
            self.log_theta.resize(k + 1, Vec::new());
        }
        self.log_theta[k] = row.iter().map(|p| p.ln()).collect();
        self.theta[k] = row;
    }

    fn clear_row(&mut self, k: usize) {
        self.theta[k] = Vec::new();
        self.log_theta[k] = Vec::new();
    }
}

/// Outcome of a seating decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Existing(usize),
    New,
}

/// Unnormalized table weights: `i_z · lik_z` for existing tables, `γ2 · new_lik` for a new one.
pub fn table_choice_weights(customers: &[u32], likelihoods: &[f64], gamma2: f64, new_likelihood: f64) -> Vec<f64> {
    customers
        .iter()
        .zip(likelihoods)
        .map(|(&i, &l)| i as f64 * l)
        .chain(std::iter::once(gamma2 * new_likelihood))
        .collect()
}

/// Unnormalized dish weights: `j_s · lik_s` for existing dishes, `γ1 · new_lik` for a new one.
pub fn dish_choice_weights(tables: &[u32], likelihoods: &[f64], gamma1: f64, new_likelihood: f64) -> Vec<f64> {
    table_choice_weights(tables, likelihoods, gamma1, new_likelihood)
}

/// Unnormalized atom weights: `o_k · lik_k` for existing atoms, `γ0 · new_lik` for a new one.
pub fn atom_choice_weights(dishes: &[u32], likelihoods: &[f64], gamma0: f64, new_likelihood: f64) -> Vec<f64> {
    table_choice_weights(dishes, likelihoods, gamma0, new_likelihood)
}

/// Probability that customers arriving in the given order end up with the
/// given block labels under a CRP with concentration `gamma`.
pub fn crp_sequence_probability<T>(labels_in_arrival_order: &[usize], gamma: T) -> T
where
    T: Num + Clone + FromPrimitive,
{
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut p = T::one();
    for (n, &label) in labels_in_arrival_order.iter().enumerate() {
        let denom = T::from_usize(n).unwrap() + gamma.clone();
        let entry = counts.entry(label).or_insert(0);
        let num = if *entry == 0 {
            gamma.clone()
        } else {
            T::from_usize(*entry).unwrap()
        };
        *entry += 1;
        p = p * num / denom;
    }
    p
}

/// Log CRP probability of a partition with the given block sizes.
pub fn crp_log_prob(block_sizes: impl IntoIterator<Item = u64>, gamma: f64) -> f64 {
    let mut total = 0u64;
    let mut lp = 0.0;
    for n in block_sizes {
        if n == 0 {
            continue;
        }
        total += n;
        lp += gamma.ln() + ln_gamma(n as f64);
    }
    lp + ln_gamma(gamma) - ln_gamma(gamma + total as f64)
}

/// Which atom distributions to use when computing predictive probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaView {
    /// The explicitly sampled rows.
    #[default]
    Sampled,
    /// Posterior means `(n_kw + eta0) / (n_k + V eta0)` given the current seating.
    PosteriorMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Franchise {
    pub params: CrfParams,
    pub seating: SeatingState,
    pub topics: TopicBank,
}

/// Count adjustments that remove one unit's attached tables from the view.
struct Exclusion {
    state: usize,
    /// (dish, tables removed)
    dish_tables: Vec<(usize, u32)>,
    /// (atom, dishes removed)
    atom_dishes: Vec<(usize, u32)>,
}

impl Exclusion {
    fn tables_removed(&self, state: usize, dish: usize) -> u32 {
        if state != self.state {
            return 0;
        }
        self.dish_tables
            .iter()
            .find(|(s, _)| *s == dish)
            .map_or(0, |(_, n)| *n)
    }

    fn dishes_removed(&self, atom: usize) -> u32 {
        self.atom_dishes
            .iter()
            .find(|(k, _)| *k == atom)
            .map_or(0, |(_, n)| *n)
    }
}

impl Franchise {
    pub fn new(params: CrfParams, doc_lengths: &[usize], n_states: usize, vocab_size: usize) -> Self {
        Self {
            params,
            seating: SeatingState::new(doc_lengths, n_states, vocab_size),
            topics: TopicBank::new(params.eta0),
        }
    }

    /// Franchise with a frozen atom set (see [`AtomPolicy::Fixed`]).
    pub fn with_fixed_atoms(
        mut params: CrfParams,
        doc_lengths: &[usize],
        n_states: usize,
        theta: Vec<Vec<f64>>,
    ) -> Self {
        params.policy = AtomPolicy::Fixed;
        let vocab_size = theta.first().map_or(0, Vec::len);
        let mut seating = SeatingState::new(doc_lengths, n_states, vocab_size);
        seating.atoms = theta
            .iter()
            .map(|_| Atom {
                dishes: 0,
                alive: true,
                counts: vec![0; vocab_size],
                total: 0,
            })
            .collect();
        Self {
            params,
            seating,
            topics: TopicBank::from_rows(params.eta0, theta),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.seating.vocab_size
    }

    fn gammas(&self) -> DpConcentrations {
        self.params.concentrations
    }

    /// Base-measure probability of one token under a brand-new atom.
    fn base_token_prob(&self) -> f64 {
        1.0 / self.vocab_size() as f64
    }

    fn fixed_prior_mass(&self) -> f64 {
        self.gammas().gamma0 / self.seating.atoms.len().max(1) as f64
    }

    // ---- low-level bookkeeping -------------------------------------------------

    fn kill_atom_if_empty(&mut self, k: usize) {
        if self.params.policy == AtomPolicy::Nonparametric && self.seating.atoms[k].dishes == 0 {
            debug_assert_eq!(self.seating.atoms[k].total, 0);
            self.seating.atoms[k].alive = false;
            self.topics.clear_row(k);
        }
    }

    /// Unlink a dish from its atom. The dish keeps its tables.
    fn detach_dish(&mut self, state: usize, s: usize) {
        let dish = &mut self.seating.dishes[state][s];
        let k = dish.atom as usize;
        dish.atom = DETACHED;
        let atom = &mut self.seating.atoms[k];
        for (w, n) in dish.words.iter() {
            atom.counts[w as usize] -= n;
        }
        atom.total -= dish.words.total();
        atom.dishes -= 1;
        self.kill_atom_if_empty(k);
    }

    fn attach_dish(&mut self, state: usize, s: usize, k: usize) {
        let dish = &mut self.seating.dishes[state][s];
        dish.atom = k as u32;
        let atom = &mut self.seating.atoms[k];
        for (w, n) in dish.words.iter() {
            atom.counts[w as usize] += n;
        }
        atom.total += dish.words.total();
        atom.dishes += 1;
    }

    /// Unlink a table from its dish, destroying the dish (and its atom) if emptied.
    pub fn detach_table(&mut self, doc: usize, t: usize, state: usize) {
        let table = &mut self.seating.tables[doc][t];
        if table.dish == DETACHED {
            return;
        }
        let s = table.dish as usize;
        table.dish = DETACHED;
        let words = table.words.clone();
        let dish = &mut self.seating.dishes[state][s];
        dish.words.remove_all(&words);
        dish.tables -= 1;
        let k = dish.atom as usize;
        let atom = &mut self.seating.atoms[k];
        for (w, n) in words.iter() {
            atom.counts[w as usize] -= n;
        }
        atom.total -= words.total();
        if dish.tables == 0 {
            self.detach_dish(state, s);
        }
    }

    fn attach_table(&mut self, doc: usize, t: usize, state: usize, s: usize) {
        let table = &mut self.seating.tables[doc][t];
        table.dish = s as u32;
        let words = table.words.clone();
        let dish = &mut self.seating.dishes[state][s];
        dish.words.add_all(&words);
        dish.tables += 1;
        let atom = &mut self.seating.atoms[dish.atom as usize];
        for (w, n) in words.iter() {
            atom.counts[w as usize] += n;
        }
        atom.total += words.total();
    }

    /// Take token `n` of `doc` off its table; an emptied table is removed along
    /// with any dish or atom it was the last member of.
    pub fn remove_customer(&mut self, doc: usize, n: usize, word: u32, state: usize) {
        let t = self.seating.z[doc][n];
        assert_ne!(t, DETACHED, "token already removed");
        self.seating.z[doc][n] = DETACHED;
        let t = t as usize;
        let table = &mut self.seating.tables[doc][t];
        table.customers -= 1;
        table.words.remove(word, 1);
        if table.dish != DETACHED {
            let dish = &mut self.seating.dishes[state][table.dish as usize];
            dish.words.remove(word, 1);
            let atom = &mut self.seating.atoms[dish.atom as usize];
            atom.counts[word as usize] -= 1;
            atom.total -= 1;
        }
        if self.seating.tables[doc][t].customers == 0 {
            self.detach_table(doc, t, state);
        }
    }

    fn add_customer(&mut self, doc: usize, n: usize, word: u32, t: usize, state: usize) {
        self.seating.z[doc][n] = t as u32;
        let table = &mut self.seating.tables[doc][t];
        table.customers += 1;
        table.words.add(word, 1);
        if table.dish != DETACHED {
            let dish = &mut self.seating.dishes[state][table.dish as usize];
            dish.words.add(word, 1);
            let atom = &mut self.seating.atoms[dish.atom as usize];
            atom.counts[word as usize] += 1;
            atom.total += 1;
        }
    }

    fn new_atom(&mut self, block: &WordCounts, rng: &mut SeededRng) -> usize {
        let v = self.vocab_size();
        let mut conc = vec![self.params.eta0; v];
        for (w, n) in block.iter() {
            conc[w as usize] += n as f64;
        }
        let row = sample_dirichlet(&conc, rng);
        let k = self.seating.atoms.len();
        self.seating.atoms.push(Atom {
            dishes: 0,
            alive: true,
            counts: vec![0; v],
            total: 0,
        });
        self.topics.set_row(k, row);
        k
    }

    // ---- conditional samplers --------------------------------------------------

    /// Σ_k o_k θ_k[w] + γ0 h(w), divided by Σ o + γ0: one token's probability
    /// under a brand-new dish.
    fn new_dish_token_prob(&self, word: u32) -> f64 {
        let g0 = self.gammas().gamma0;
        let w = word as usize;
        let mut num = 0.0;
        let mut total = 0.0;
        match self.params.policy {
            AtomPolicy::Nonparametric => {
                for (k, atom) in self.seating.live_atoms() {
                    num += atom.dishes as f64 * self.topics.theta[k][w];
                    total += atom.dishes as f64;
                }
                num += g0 * self.base_token_prob();
            }
            AtomPolicy::Fixed => {
                let prior = self.fixed_prior_mass();
                for (k, atom) in self.seating.live_atoms() {
                    num += (atom.dishes as f64 + prior) * self.topics.theta[k][w];
                    total += atom.dishes as f64;
                }
            }
        }
        num / (total + g0)
    }

    /// One token's probability under a brand-new table in `state`.
    pub fn new_table_token_prob(&self, word: u32, state: usize) -> f64 {
        let g1 = self.gammas().gamma1;
        let w = word as usize;
        let mut num = 0.0;
        let mut total = 0.0;
        for (_, dish) in self.seating.live_dishes(state) {
            num += dish.tables as f64 * self.topics.theta[dish.atom as usize][w];
            total += dish.tables as f64;
        }
        (num + g1 * self.new_dish_token_prob(word)) / (total + g1)
    }

    /// Predictive probability of `word` as the next customer of `doc` given the
    /// current seating (the token itself must not be seated).
    pub fn token_predictive(&self, doc: usize, word: u32, state: usize) -> f64 {
        let g2 = self.gammas().gamma2;
        let mut num = 0.0;
        let mut seated = 0.0;
        for (_, t) in self.seating.live_tables(doc) {
            let k = self.seating.dishes[state][t.dish as usize].atom as usize;
            num += t.customers as f64 * self.topics.theta[k][word as usize];
            seated += t.customers as f64;
        }
        (num + g2 * self.new_table_token_prob(word, state)) / (seated + g2)
    }

    /// Resample the table of token `n` in `doc` (which must currently be
    /// unseated). A new table immediately samples its dish.
    pub fn sample_table(&mut self, doc: usize, n: usize, word: u32, state: usize, rng: &mut SeededRng) -> Choice {
        let g2 = self.gammas().gamma2;
        let w = word as usize;
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        for (t, table) in self.seating.live_tables(doc) {
            let k = self.seating.dishes[state][table.dish as usize].atom as usize;
            ids.push(t);
            weights.push(table.customers as f64 * self.topics.theta[k][w]);
        }
        weights.push(g2 * self.new_table_token_prob(word, state));
        let pick = sample_weights(&weights, rng);
        if pick < ids.len() {
            self.add_customer(doc, n, word, ids[pick], state);
            return Choice::Existing(ids[pick]);
        }
        let t = self.seating.tables[doc].len();
        self.seating.tables[doc].push(Table {
            customers: 0,
            dish: DETACHED,
            words: WordCounts::new(),
        });
        self.add_customer(doc, n, word, t, state);
        self.sample_dish(doc, t, state, rng);
        Choice::New
    }

    /// Log-likelihood of `block` under every atom slot (`-inf` for dead slots).
    fn atom_block_lls(&self, block: &WordCounts) -> Vec<f64> {
        self.seating
            .atoms
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if a.alive {
                    block.log_likelihood(self.topics.log_row(k))
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// Log weights of linking a dish holding `block` to each live atom and,
    /// for nonparametric atoms, to a new one (last entry).
    fn atom_log_weights(&self, atom_lls: &[f64], block: &WordCounts, exclusion: Option<&Exclusion>) -> (Vec<usize>, Vec<f64>, f64) {
        let g0 = self.gammas().gamma0;
        let mut ids = Vec::new();
        let mut lws = Vec::new();
        let mut total = 0.0;
        for (k, atom) in self.seating.live_atoms() {
            let o = atom.dishes - exclusion.map_or(0, |e| e.dishes_removed(k));
            total += o as f64;
            let prior = match self.params.policy {
                AtomPolicy::Nonparametric if o == 0 => continue,
                AtomPolicy::Nonparametric => o as f64,
                AtomPolicy::Fixed => o as f64 + self.fixed_prior_mass(),
            };
            ids.push(k);
            lws.push(prior.ln() + atom_lls[k]);
        }
        if self.params.policy == AtomPolicy::Nonparametric {
            lws.push(g0.ln() + block.dirichlet_multinomial_ln(self.params.eta0, self.vocab_size()));
        }
        (ids, lws, (total + g0).ln())
    }

    /// Log marginal likelihood of `block` under a brand-new dish.
    fn new_dish_block_ln(&self, atom_lls: &[f64], block: &WordCounts, exclusion: Option<&Exclusion>) -> f64 {
        let (_, lws, log_norm) = self.atom_log_weights(atom_lls, block, exclusion);
        log_sum_exp(&lws) - log_norm
    }

    /// Resample the dish of table `t` in `doc` for a document in `state`.
    pub fn sample_dish(&mut self, doc: usize, t: usize, state: usize, rng: &mut SeededRng) -> Choice {
        self.detach_table(doc, t, state);
        let block = self.seating.tables[doc][t].words.clone();
        let atom_lls = self.atom_block_lls(&block);
        let mut ids = Vec::new();
        let mut lws = Vec::new();
        for (s, dish) in self.seating.live_dishes(state) {
            ids.push(s);
            lws.push((dish.tables as f64).ln() + atom_lls[dish.atom as usize]);
        }
        lws.push(self.gammas().gamma1.ln() + self.new_dish_block_ln(&atom_lls, &block, None));
        let pick = sample_log_weights(&lws, rng);
        if pick < ids.len() {
            self.attach_table(doc, t, state, ids[pick]);
            return Choice::Existing(ids[pick]);
        }
        let s = self.seating.dishes[state].len();
        self.seating.dishes[state].push(Dish {
            tables: 0,
            atom: DETACHED,
            words: WordCounts::new(),
        });
        let k = self.choose_atom(&block, &atom_lls, rng).0;
        self.seating.dishes[state][s].atom = k as u32;
        self.seating.atoms[k].dishes += 1;
        self.attach_table(doc, t, state, s);
        Choice::New
    }

    fn choose_atom(&mut self, block: &WordCounts, atom_lls: &[f64], rng: &mut SeededRng) -> (usize, Choice) {
        let (ids, lws, _) = self.atom_log_weights(atom_lls, block, None);
        let pick = sample_log_weights(&lws, rng);
        if pick < ids.len() {
            (ids[pick], Choice::Existing(ids[pick]))
        } else {
            (self.new_atom(block, rng), Choice::New)
        }
    }

    /// Resample the atom linked to dish `s` of `state`.
    pub fn sample_atom_assignment(&mut self, state: usize, s: usize, rng: &mut SeededRng) -> Choice {
        debug_assert!(self.seating.dishes[state][s].tables > 0);
        self.detach_dish(state, s);
        let block = self.seating.dishes[state][s].words.clone();
        let atom_lls = self.atom_block_lls(&block);
        let (k, choice) = self.choose_atom(&block, &atom_lls, rng);
        self.attach_dish(state, s, k);
        choice
    }

    /// Draw every live atom's word distribution from its Dirichlet posterior.
    pub fn sample_theta(&mut self, rng: &mut SeededRng) {
        if self.params.policy == AtomPolicy::Fixed {
            return;
        }
        let eta0 = self.params.eta0;
        for k in 0..self.seating.atoms.len() {
            if !self.seating.atoms[k].alive {
                continue;
            }
            let conc: Vec<f64> = self.seating.atoms[k]
                .counts
                .iter()
                .map(|&n| eta0 + n as f64)
                .collect();
            let row = sample_dirichlet(&conc, rng);
            self.topics.set_row(k, row);
        }
    }

    /// Posterior-mean word probability of atom `k` given its current tokens.
    pub fn collapsed_predictive(&self, k: usize, word: u32) -> f64 {
        let atom = &self.seating.atoms[k];
        let eta = self.params.eta0;
        (atom.counts[word as usize] as f64 + eta) / (atom.total as f64 + eta * self.vocab_size() as f64)
    }

    // ---- unit-level moves --------------------------------------------------------

    /// Detach every table of the given documents from their dishes.
    pub fn detach_docs(&mut self, docs: &[usize], state: usize) {
        for &d in docs {
            for t in 0..self.seating.tables[d].len() {
                if self.seating.tables[d][t].customers > 0 {
                    self.detach_table(d, t, state);
                }
            }
        }
    }

    /// Give every live table of the given (detached) documents a dish in `state`.
    pub fn attach_docs(&mut self, docs: &[usize], state: usize, rng: &mut SeededRng) {
        for &d in docs {
            for t in 0..self.seating.tables[d].len() {
                if self.seating.tables[d][t].customers > 0 {
                    self.sample_dish(d, t, state, rng);
                }
            }
        }
    }

    fn exclusion_for(&self, docs: &[usize], state: usize) -> Exclusion {
        let mut dish_tables: Vec<(usize, u32)> = Vec::new();
        for &d in docs {
            for (_, t) in self.seating.live_tables(d) {
                if t.dish == DETACHED {
                    continue;
                }
                let s = t.dish as usize;
                match dish_tables.iter_mut().find(|(x, _)| *x == s) {
                    Some((_, n)) => *n += 1,
                    None => dish_tables.push((s, 1)),
                }
            }
        }
        let mut atom_dishes: Vec<(usize, u32)> = Vec::new();
        for &(s, n) in &dish_tables {
            let dish = &self.seating.dishes[state][s];
            if dish.tables == n {
                let k = dish.atom as usize;
                match atom_dishes.iter_mut().find(|(x, _)| *x == k) {
                    Some((_, m)) => *m += 1,
                    None => atom_dishes.push((k, 1)),
                }
            }
        }
        Exclusion {
            state,
            dish_tables,
            atom_dishes,
        }
    }

    /// Conditional log-likelihood of a unit's documents under every state.
    ///
    /// The table partition `z` of each document is held fixed. Each table's
    /// block is scored by the state's dish mixture (existing dishes weighted by
    /// `j`, plus `γ1` times the new-dish mixture over atoms), with the unit's
    /// own tables removed from the counts; tables are treated as independent
    /// given the other units. The document-level seating prior is included.
    /// `current_state` is the state the unit's tables are attached to, or
    /// `None` if they are detached.
    pub fn unit_log_likelihoods(&self, docs: &[usize], current_state: Option<usize>) -> Vec<f64> {
        self.unit_log_likelihoods_par(docs, current_state, false)
    }

    /// As [`Franchise::unit_log_likelihoods`], optionally scoring tables on the
    /// rayon pool. Per-table terms are summed in table order either way, so the
    /// result does not depend on the thread count.
    pub fn unit_log_likelihoods_par(&self, docs: &[usize], current_state: Option<usize>, parallel: bool) -> Vec<f64> {
        let nc = self.seating.n_states();
        let exclusion = current_state.map(|c| self.exclusion_for(docs, c));
        let g2 = self.gammas().gamma2;
        let mut out = vec![0.0; nc];
        let mut tables: Vec<&Table> = Vec::new();
        for &d in docs {
            let prior = crp_log_prob(self.seating.live_tables(d).map(|(_, t)| t.customers as u64), g2);
            for v in out.iter_mut() {
                *v += prior;
            }
            tables.extend(self.seating.live_tables(d).map(|(_, t)| t));
        }
        let score = |table: &&Table| self.table_log_predictive(&table.words, exclusion.as_ref());
        let terms: Vec<Vec<f64>> = if parallel && tables.len() > 1 {
            use rayon::prelude::*;
            tables.par_iter().map(score).collect()
        } else {
            tables.iter().map(score).collect()
        };
        for term in terms {
            for (v, t) in out.iter_mut().zip(term) {
                *v += t;
            }
        }
        out
    }

    /// Log predictive of one table's block under each state's dish mixture.
    fn table_log_predictive(&self, block: &WordCounts, exclusion: Option<&Exclusion>) -> Vec<f64> {
        let g1 = self.gammas().gamma1;
        let atom_lls = self.atom_block_lls(block);
        let new_dish = g1.ln() + self.new_dish_block_ln(&atom_lls, block, exclusion);
        (0..self.seating.n_states())
            .map(|c| {
                let mut lws = vec![new_dish];
                let mut total = 0.0;
                for (s, dish) in self.seating.live_dishes(c) {
                    let j = dish.tables - exclusion.map_or(0, |e| e.tables_removed(c, s));
                    if j == 0 {
                        continue;
                    }
                    total += j as f64;
                    lws.push((j as f64).ln() + atom_lls[dish.atom as usize]);
                }
                log_sum_exp(&lws) - (total + g1).ln()
            })
            .collect()
    }

    pub fn unit_log_likelihood(&self, docs: &[usize], state: usize, current_state: Option<usize>) -> Result<f64> {
        let nc = self.seating.n_states();
        if state >= nc {
            return Err(Error::StateOutOfRange { state, n_states: nc });
        }
        Ok(self.unit_log_likelihoods(docs, current_state)[state])
    }

    /// Importance estimate of the unit's marginal log-likelihood under `state`,
    /// integrating over fresh seatings of its tokens. Each replicate re-seats
    /// the tokens sequentially from their exact conditional and multiplies the
    /// one-step predictive probabilities; replicates are averaged in linear space.
    pub fn unit_log_marginal_estimate(
        &self,
        docs: &[(usize, Vec<u32>)],
        current_state: usize,
        state: usize,
        replicates: usize,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let nc = self.seating.n_states();
        if state >= nc {
            return Err(Error::StateOutOfRange { state, n_states: nc });
        }
        if replicates == 0 {
            return Err(Error::Config("marginal estimate needs at least one replicate".into()));
        }
        let mut stripped = self.clone();
        for (d, tokens) in docs {
            for (n, &w) in tokens.iter().enumerate() {
                if stripped.seating.z[*d][n] != DETACHED {
                    stripped.remove_customer(*d, n, w, current_state);
                }
            }
        }
        let mut estimates = Vec::with_capacity(replicates);
        for _ in 0..replicates {
            let mut scratch = stripped.clone();
            let mut lp = 0.0;
            for (d, tokens) in docs {
                for (n, &w) in tokens.iter().enumerate() {
                    lp += scratch.token_predictive(*d, w, state).ln();
                    scratch.sample_table(*d, n, w, state, rng);
                }
            }
            estimates.push(lp);
        }
        Ok(log_sum_exp(&estimates) - (replicates as f64).ln())
    }

    /// `log P(z, s, k, χ | θ)`: CRP priors at all three levels plus token likelihoods.
    pub fn seating_log_joint(&self) -> f64 {
        let g = self.gammas();
        let mut lp = 0.0;
        for d in 0..self.seating.z.len() {
            lp += crp_log_prob(self.seating.live_tables(d).map(|(_, t)| t.customers as u64), g.gamma2);
        }
        for c in 0..self.seating.n_states() {
            lp += crp_log_prob(self.seating.live_dishes(c).map(|(_, d)| d.tables as u64), g.gamma1);
        }
        match self.params.policy {
            AtomPolicy::Nonparametric => {
                lp += crp_log_prob(self.seating.live_atoms().map(|(_, a)| a.dishes as u64), g.gamma0);
            }
            AtomPolicy::Fixed => {
                let prior = self.fixed_prior_mass();
                let total = self.seating.total_dishes();
                for (_, a) in self.seating.live_atoms() {
                    lp += ln_gamma(a.dishes as f64 + prior) - ln_gamma(prior);
                }
                lp += ln_gamma(g.gamma0) - ln_gamma(g.gamma0 + total as f64);
            }
        }
        for (k, atom) in self.seating.live_atoms() {
            let row = self.topics.log_row(k);
            for (w, &n) in atom.counts.iter().enumerate() {
                if n > 0 {
                    lp += n as f64 * row[w];
                }
            }
        }
        lp
    }

    /// Probability of each word for a new customer in a new document of `state`.
    pub fn state_token_distribution(&self, state: usize, view: ThetaView) -> Vec<f64> {
        let v = self.vocab_size();
        let g = self.gammas();
        let row = |k: usize| -> Vec<f64> {
            match view {
                ThetaView::Sampled => self.topics.theta[k].clone(),
                ThetaView::PosteriorMean => (0..v).map(|w| self.collapsed_predictive(k, w as u32)).collect(),
            }
        };
        let mut atom_mix = vec![0.0; v];
        let mut o_total = 0.0;
        let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
        for (k, atom) in self.seating.live_atoms() {
            let weight = match self.params.policy {
                AtomPolicy::Nonparametric => atom.dishes as f64,
                AtomPolicy::Fixed => atom.dishes as f64 + self.fixed_prior_mass(),
            };
            o_total += atom.dishes as f64;
            let r = rows.entry(k).or_insert_with(|| row(k));
            for (m, p) in atom_mix.iter_mut().zip(r.iter()) {
                *m += weight * p;
            }
        }
        if self.params.policy == AtomPolicy::Nonparametric {
            for m in atom_mix.iter_mut() {
                *m += g.gamma0 / v as f64;
            }
        }
        atom_mix.iter_mut().for_each(|m| *m /= o_total + g.gamma0);

        let mut out: Vec<f64> = atom_mix.iter().map(|m| g.gamma1 * m).collect();
        let mut j_total = 0.0;
        for (_, dish) in self.seating.live_dishes(state) {
            let k = dish.atom as usize;
            let r = rows.entry(k).or_insert_with(|| row(k));
            for (o, p) in out.iter_mut().zip(r.iter()) {
                *o += dish.tables as f64 * p;
            }
            j_total += dish.tables as f64;
        }
        out.iter_mut().for_each(|o| *o /= j_total + g.gamma1);
        out
    }

    /// Probability of a word outside the vocabulary for a new customer in a new
    /// document of `state`: every component's posterior mean is extended by one
    /// unseen slot carrying `eta0` pseudo-counts, and a brand-new atom gives it `1 / (V + 1)`.
    pub fn state_oov_probability(&self, state: usize) -> f64 {
        let g = self.gammas();
        let eta = self.params.eta0;
        let v1 = (self.vocab_size() + 1) as f64;
        let unseen = |k: usize| eta / (self.seating.atoms[k].total as f64 + v1 * eta);
        let mut atom_mix = 0.0;
        let mut o_total = 0.0;
        for (k, atom) in self.seating.live_atoms() {
            let weight = match self.params.policy {
                AtomPolicy::Nonparametric => atom.dishes as f64,
                AtomPolicy::Fixed => atom.dishes as f64 + self.fixed_prior_mass(),
            };
            o_total += atom.dishes as f64;
            atom_mix += weight * unseen(k);
        }
        if self.params.policy == AtomPolicy::Nonparametric {
            atom_mix += g.gamma0 / v1;
        }
        atom_mix /= o_total + g.gamma0;
        let mut out = g.gamma1 * atom_mix;
        let mut j_total = 0.0;
        for (_, dish) in self.seating.live_dishes(state) {
            out += dish.tables as f64 * unseen(dish.atom as usize);
            j_total += dish.tables as f64;
        }
        out / (j_total + g.gamma1)
    }

    /// Share of each atom among a state's tables: `Σ_{s: k_s = k} j_{c,s} / Σ_s j_{c,s}`.
    pub fn state_topic_shares(&self, state: usize) -> Vec<(usize, f64)> {
        let total = self.seating.tables_in_state(state) as f64;
        let mut shares: Vec<(usize, f64)> = Vec::new();
        if total == 0.0 {
            return shares;
        }
        for (_, dish) in self.seating.live_dishes(state) {
            let k = dish.atom as usize;
            match shares.iter_mut().find(|(a, _)| *a == k) {
                Some((_, x)) => *x += dish.tables as f64,
                None => shares.push((k, dish.tables as f64)),
            }
        }
        for (_, x) in shares.iter_mut() {
            *x /= total;
        }
        shares
    }

    /// Renumber live tables, dishes and atoms densely, preserving order.
    pub fn compact(&mut self, doc_states: &[u32]) {
        let policy = self.params.policy;
        let mut atom_map = vec![DETACHED; self.seating.atoms.len()];
        let mut atoms = Vec::new();
        let mut theta = Vec::new();
        for (k, atom) in self.seating.atoms.drain(..).enumerate() {
            if atom.alive || policy == AtomPolicy::Fixed {
                atom_map[k] = atoms.len() as u32;
                atoms.push(atom);
                theta.push(std::mem::take(&mut self.topics.theta[k]));
            }
        }
        self.seating.atoms = atoms;
        self.topics.theta = theta;
        self.topics.refresh_logs();

        let mut dish_maps = Vec::with_capacity(self.seating.dishes.len());
        for dishes in self.seating.dishes.iter_mut() {
            let mut map = vec![DETACHED; dishes.len()];
            let mut kept = Vec::new();
            for (s, mut dish) in dishes.drain(..).enumerate() {
                if dish.tables > 0 {
                    dish.atom = atom_map[dish.atom as usize];
                    map[s] = kept.len() as u32;
                    kept.push(dish);
                }
            }
            *dishes = kept;
            dish_maps.push(map);
        }

        for (d, tables) in self.seating.tables.iter_mut().enumerate() {
            let c = doc_states[d] as usize;
            let mut map = vec![DETACHED; tables.len()];
            let mut kept = Vec::new();
            for (t, mut table) in tables.drain(..).enumerate() {
                if table.customers > 0 {
                    if table.dish != DETACHED {
                        table.dish = dish_maps[c][table.dish as usize];
                    }
                    map[t] = kept.len() as u32;
                    kept.push(table);
                }
            }
            *tables = kept;
            for zt in self.seating.z[d].iter_mut() {
                if *zt != DETACHED {
                    *zt = map[*zt as usize];
                }
            }
        }
    }

    /// Rebuild derived counts and log rows after deserialization.
    pub fn restore_derived(&mut self, doc_tokens: &dyn Fn(usize) -> Vec<u32>, doc_states: &[u32]) {
        self.seating.rebuild_word_counts(doc_tokens, doc_states);
        self.topics.refresh_logs();
    }

    pub fn audit(&self, doc_tokens: &dyn Fn(usize) -> Vec<u32>, doc_states: &[u32]) -> Result<()> {
        self.seating.audit(doc_tokens, doc_states, self.params.policy)?;
        for (k, atom) in self.seating.atoms.iter().enumerate() {
            if !atom.alive {
                continue;
            }
            let row = self
                .topics
                .theta
                .get(k)
                .filter(|r| r.len() == self.vocab_size())
                .ok_or_else(|| Error::invariant(format!("atom {k}: missing theta row")))?;
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::invariant(format!("atom {k}: theta row not a distribution")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(g0: f64, g1: f64, g2: f64) -> CrfParams {
        CrfParams {
            concentrations: DpConcentrations {
                gamma0: g0,
                gamma1: g1,
                gamma2: g2,
            },
            eta0: 0.5,
            policy: AtomPolicy::Nonparametric,
        }
    }

    #[test]
    fn first_customer_opens_a_table() {
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[1], 1, 3);
        let mut rng = SeededRng::seed_from_u64(1);
        assert_eq!(f.sample_table(0, 0, 2, 0, &mut rng), Choice::New);
        assert_eq!(f.seating.table_count(0), 1);
        assert_eq!(f.seating.dish_count(0), 1);
        assert_eq!(f.seating.atom_count(), 1);
        f.audit(&|_| vec![2], &[0]).unwrap();
    }

    #[test]
    fn table_weights_example() {
        let w = table_choice_weights(&[3, 1], &[0.5, 0.5], 1.0, 0.5);
        assert_eq!(w, vec![1.5, 0.5, 0.5]);
        let total: f64 = w.iter().sum();
        assert!((w[0] / total - 0.6).abs() < 1e-15);
    }

    #[test]
    fn dish_weights_example() {
        let w = dish_choice_weights(&[2, 2], &[1.0, 1.0], 4.0, 1.0);
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        assert_eq!(p, vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn atom_weights_example() {
        let w = atom_choice_weights(&[5, 1], &[1.0, 1.0], 1.0, 1.0);
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        assert!((p[0] - 5.0 / 7.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 7.0).abs() < 1e-15);
        assert!((p[2] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn first_table_of_unseen_state_gets_new_dish() {
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[1, 1], 2, 3);
        let mut rng = SeededRng::seed_from_u64(2);
        f.sample_table(0, 0, 0, 0, &mut rng);
        assert_eq!(f.seating.dish_count(1), 0);
        f.sample_table(1, 0, 0, 1, &mut rng);
        assert_eq!(f.seating.dish_count(1), 1);
    }

    #[test]
    fn theta_posterior_mean_arithmetic() {
        // V=2, eta0=0.5, counts (3,1): Dirichlet(3.5, 1.5) has mean (0.7, 0.3)
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[4], 1, 2);
        let mut rng = SeededRng::seed_from_u64(3);
        let tokens = [0u32, 0, 0, 1];
        for (n, &w) in tokens.iter().enumerate() {
            f.sample_table(0, n, w, 0, &mut rng);
        }
        // force everything onto one atom
        while f.seating.atom_count() > 1 {
            for s in 0..f.seating.dishes[0].len() {
                if f.seating.dishes[0][s].tables > 0 {
                    f.detach_dish(0, s);
                    let k = f.seating.live_atoms().next().unwrap().0;
                    f.attach_dish(0, s, k);
                }
            }
        }
        let k = f.seating.live_atoms().next().unwrap().0;
        assert!((f.collapsed_predictive(k, 0) - 0.7).abs() < 1e-12);
        assert!((f.collapsed_predictive(k, 1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crp_sequence_probability_two_customers() {
        let together: f64 = crp_sequence_probability(&[0, 0], 2.0);
        let apart: f64 = crp_sequence_probability(&[0, 1], 2.0);
        assert!((together - 1.0 / 3.0).abs() < 1e-15);
        assert!((apart - 2.0 / 3.0).abs() < 1e-15);
        assert!((crp_log_prob([2], 2.0).exp() - together).abs() < 1e-12);
        assert!((crp_log_prob([1, 1], 2.0).exp() - apart).abs() < 1e-12);
    }

    #[test]
    fn token_predictive_sums_to_one() {
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[6, 3], 2, 5);
        let mut rng = SeededRng::seed_from_u64(4);
        for (n, w) in [0u32, 1, 1, 4, 2, 2].iter().enumerate() {
            f.sample_table(0, n, *w, 0, &mut rng);
        }
        for (n, w) in [3u32, 3, 0].iter().enumerate() {
            f.sample_table(1, n, *w, 1, &mut rng);
        }
        f.sample_theta(&mut rng);
        for (d, c) in [(0, 0), (1, 1)] {
            let s: f64 = (0..5).map(|w| f.token_predictive(d, w, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for c in 0..2 {
            for view in [ThetaView::Sampled, ThetaView::PosteriorMean] {
                let d = f.state_token_distribution(c, view);
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_likelihood_is_deterministic_and_range_checked() {
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[3, 3], 2, 3);
        let mut rng = SeededRng::seed_from_u64(5);
        for d in 0..2 {
            for (n, w) in [0u32, 1, 2].iter().enumerate() {
                f.sample_table(d, n, *w, 0, &mut rng);
            }
        }
        let a = f.unit_log_likelihoods(&[0], Some(0));
        let b = f.unit_log_likelihoods(&[0], Some(0));
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.is_finite()));
        assert!(matches!(
            f.unit_log_likelihood(&[0], 2, Some(0)),
            Err(Error::StateOutOfRange { state: 2, n_states: 2 })
        ));
    }

    #[test]
    fn detached_and_excluded_views_agree() {
        let mut f = Franchise::new(params(1.0, 1.5, 0.7), &[4, 3, 5], 2, 4);
        let mut rng = SeededRng::seed_from_u64(6);
        let docs: [&[u32]; 3] = [&[0, 1, 1, 3], &[2, 2, 0], &[3, 3, 1, 0, 2]];
        let states = [0usize, 0, 1];
        for (d, toks) in docs.iter().enumerate() {
            for (n, w) in toks.iter().enumerate() {
                f.sample_table(d, n, *w, states[d], &mut rng);
            }
        }
        f.sample_theta(&mut rng);
        let attached = f.unit_log_likelihoods(&[1], Some(0));
        let mut g = f.clone();
        g.detach_docs(&[1], 0);
        let detached = g.unit_log_likelihoods(&[1], None);
        for (a, b) in attached.iter().zip(&detached) {
            assert!((a - b).abs() < 1e-12, "{attached:?} vs {detached:?}");
        }
    }

    #[test]
    fn compaction_preserves_audit() {
        let mut f = Franchise::new(params(1.0, 1.0, 1.0), &[8], 1, 4);
        let mut rng = SeededRng::seed_from_u64(7);
        let tokens = [0u32, 1, 2, 3, 0, 1, 2, 3];
        for (n, &w) in tokens.iter().enumerate() {
            f.sample_table(0, n, w, 0, &mut rng);
        }
        for _ in 0..20 {
            for (n, &w) in tokens.iter().enumerate() {
                f.remove_customer(0, n, w, 0);
                f.sample_table(0, n, w, 0, &mut rng);
            }
        }
        f.audit(&|_| tokens.to_vec(), &[0]).unwrap();
        f.compact(&[0]);
        f.audit(&|_| tokens.to_vec(), &[0]).unwrap();
        assert!(f.seating.tables[0].iter().all(|t| t.customers > 0));
        assert!(f.seating.atoms.iter().all(|a| a.alive));
    }
}
