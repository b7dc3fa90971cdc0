//! Recruitment-state layer: a Bayesian first-order Markov chain over per-unit
//! states with the transition matrix integrated out.
//!
//! Transition counts are pooled over every chain into one ledger. `from[c]`
//! counts positions in state `c` that have a successor, so `Σ_c' pair[c][c'] ==
//! from[c]` always. Chain-initial units draw from the fixed uniform row of the
//! virtual initial state (never entered in the ledger) or, for later chains of
//! an entity, from the market-wide fallback mixture.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{StartRule, UnitLink};
use crate::error::{Error, Result};
use crate::math::{sample_log_weights, sample_weights};
use crate::rng::SeededRng;

const UNASSIGNED: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionLedger {
    pub n_states: usize,
    /// Row-major `n_states × n_states` ordered-pair counts.
    pub pair: Vec<u64>,
    pub from: Vec<u64>,
    /// Chain-initial occurrences per state (virtual-start transitions).
    pub start: Vec<u64>,
}

impl TransitionLedger {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            pair: vec![0; n_states * n_states],
            from: vec![0; n_states],
            start: vec![0; n_states],
        }
    }

    pub fn pair(&self, from: usize, to: usize) -> u64 {
        self.pair[from * self.n_states + to]
    }

    fn add_pair(&mut self, from: usize, to: usize) {
        self.pair[from * self.n_states + to] += 1;
        self.from[from] += 1;
    }

    fn remove_pair(&mut self, from: usize, to: usize) {
        let slot = &mut self.pair[from * self.n_states + to];
        assert!(*slot > 0 && self.from[from] > 0, "transition ledger underflow");
        *slot -= 1;
        self.from[from] -= 1;
    }
}

/// Row-stochastic transition matrix plus the fixed initial row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub rho: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl TransitionMatrix {
    pub fn n_states(&self) -> usize {
        self.rho.len()
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.rho[from]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "from\\to")?;
        for c in 0..self.n_states() {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (c, row) in self.rho.iter().enumerate() {
            write!(w, "{c}")?;
            for p in row {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallbackDistribution {
    pub probs: Vec<f64>,
    /// No entity had a state at the previous epoch; `probs` is uniform.
    pub used_uniform: bool,
}

#[derive(Debug, Clone)]
pub struct StateChain {
    n_states: usize,
    alpha: f64,
    links: Vec<UnitLink>,
    assignments: Vec<u32>,
    ledger: TransitionLedger,
    /// `occupancy[epoch][state]`: units currently assigned to `state` at `epoch`.
    occupancy: Vec<Vec<u64>>,
    /// Times the fallback rule found an empty previous epoch.
    pub fallback_uniform_events: u64,
}

pub fn initial_state(n_states: usize, rng: &mut SeededRng) -> usize {
    rng.below(n_states)
}

impl StateChain {
    pub fn new(links: Vec<UnitLink>, n_states: usize, alpha: f64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::Config("state count must be >= 1".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        let n_epochs = links.iter().map(|l| l.epoch as usize + 1).max().unwrap_or(0);
        Ok(Self {
            n_states,
            alpha,
            assignments: vec![UNASSIGNED; links.len()],
            links,
            ledger: TransitionLedger::new(n_states),
            occupancy: vec![vec![0; n_states]; n_epochs],
            fallback_uniform_events: 0,
        })
    }

    /// Chain with every unit drawn from the uniform initial rule.
    pub fn new_uniform(
        links: Vec<UnitLink>,
        n_states: usize,
        alpha: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut chain = Self::new(links, n_states, alpha)?;
        for u in 0..chain.links.len() {
            let c = initial_state(n_states, rng);
            chain.assign(u, c);
        }
        Ok(chain)
    }

    pub fn with_assignments(
        links: Vec<UnitLink>,
        n_states: usize,
        alpha: f64,
        assignments: &[u32],
    ) -> Result<Self> {
        if assignments.len() != links.len() {
            return Err(Error::invariant("assignment count differs from unit count"));
        }
        let mut chain = Self::new(links, n_states, alpha)?;
        for (u, &c) in assignments.iter().enumerate() {
            if c as usize >= n_states {
                return Err(Error::StateOutOfRange {
                    state: c as usize,
                    n_states,
                });
            }
            chain.assign(u, c as usize);
        }
        Ok(chain)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_units(&self) -> usize {
        self.links.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn links(&self) -> &[UnitLink] {
        &self.links
    }

    pub fn ledger(&self) -> &TransitionLedger {
        &self.ledger
    }

    pub fn n_epochs(&self) -> usize {
        self.occupancy.len()
    }

    pub fn occupancy(&self, epoch: usize) -> &[u64] {
        &self.occupancy[epoch]
    }

    pub fn state(&self, unit: usize) -> Option<usize> {
        let c = self.assignments[unit];
        (c != UNASSIGNED).then_some(c as usize)
    }

    /// All assignments; panics if any unit is unassigned.
    pub fn assignments(&self) -> Vec<u32> {
        assert!(self.assignments.iter().all(|&c| c != UNASSIGNED));
        self.assignments.clone()
    }

    pub fn state_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.n_states];
        for &c in &self.assignments {
            if c != UNASSIGNED {
                counts[c as usize] += 1;
            }
        }
        counts
    }

    /// Enter `unit` in state `c` and add its transitions to assigned neighbours.
    pub fn assign(&mut self, unit: usize, c: usize) {
        assert_eq!(self.assignments[unit], UNASSIGNED, "unit {unit} already assigned");
        let link = self.links[unit];
        if let Some(p) = link.prev.and_then(|p| self.state(p as usize)) {
            self.ledger.add_pair(p, c);
        } else if link.prev.is_none() {
            self.ledger.start[c] += 1;
        }
        if let Some(n) = link.next.and_then(|n| self.state(n as usize)) {
            self.ledger.add_pair(c, n);
        }
        self.occupancy[link.epoch as usize][c] += 1;
        self.assignments[unit] = c as u32;
    }

    /// Remove `unit`'s state and its transitions; returns the old state.
    pub fn unassign(&mut self, unit: usize) -> usize {
        let c = self.state(unit).expect("unassigning an unassigned unit");
        let link = self.links[unit];
        if let Some(p) = link.prev.and_then(|p| self.state(p as usize)) {
            self.ledger.remove_pair(p, c);
        } else if link.prev.is_none() {
            self.ledger.start[c] -= 1;
        }
        if let Some(n) = link.next.and_then(|n| self.state(n as usize)) {
            self.ledger.remove_pair(c, n);
        }
        self.occupancy[link.epoch as usize][c] -= 1;
        self.assignments[unit] = UNASSIGNED;
        c
    }

    /// Posterior-mean transition matrix from the current ledger.
    pub fn estimate_rho(&self) -> TransitionMatrix {
        estimate_rho(&self.ledger, self.alpha)
    }

    /// Market-wide state distribution for a unit at `epoch` with no predecessor:
    /// the empirical state frequencies at `epoch - 1` pushed through `rho`.
    pub fn fallback_state_distribution(
        &self,
        epoch: usize,
        rho: &TransitionMatrix,
    ) -> FallbackDistribution {
        let c = self.n_states;
        let uniform = || FallbackDistribution {
            probs: vec![1.0 / c as f64; c],
            used_uniform: true,
        };
        if epoch == 0 || epoch > self.occupancy.len() {
            return uniform();
        }
        let prev = &self.occupancy[epoch - 1];
        let total: u64 = prev.iter().sum();
        if total == 0 {
            return uniform();
        }
        let mut probs = vec![0.0; c];
        for (from, &n) in prev.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let freq = n as f64 / total as f64;
            for (to, p) in probs.iter_mut().enumerate() {
                *p += freq * rho.rho[from][to];
            }
        }
        FallbackDistribution {
            probs,
            used_uniform: false,
        }
    }

    /// Log prior weight of each candidate state for an unassigned `unit`:
    /// the predecessor factor times the corrected successor factor.
    pub fn conditional_prior_ln(&mut self, unit: usize) -> Vec<f64> {
        assert!(self.state(unit).is_none(), "unit must be unassigned");
        let link = self.links[unit];
        let nc = self.n_states;
        let a = self.alpha;
        let ca = nc as f64 * a;
        let prev = link.prev.and_then(|p| self.state(p as usize));
        let next = link.next.and_then(|n| self.state(n as usize));

        let start_row: Option<Vec<f64>> = match (link.prev, link.start) {
            (Some(_), _) => None,
            (None, StartRule::Uniform) => Some(vec![1.0 / nc as f64; nc]),
            (None, StartRule::Fallback) => {
                let rho = self.estimate_rho();
                let fb = self.fallback_state_distribution(link.epoch as usize, &rho);
                if fb.used_uniform {
                    self.fallback_uniform_events += 1;
                }
                Some(fb.probs)
            }
        };

        (0..nc)
            .map(|c| {
                let mut lw = match (&start_row, prev) {
                    (Some(row), _) => row[c].ln(),
                    (None, Some(p)) => ((self.ledger.pair(p, c) as f64 + a)
                        / (self.ledger.from[p] as f64 + ca))
                        .ln(),
                    // predecessor exists but is unassigned: no information
                    (None, None) => -(nc as f64).ln(),
                };
                if let Some(n) = next {
                    let same_prev = prev == Some(c);
                    let both = same_prev && n == c;
                    let num = self.ledger.pair(c, n) as f64 + both as u8 as f64 + a;
                    let den = self.ledger.from[c] as f64 + same_prev as u8 as f64 + ca;
                    lw += (num / den).ln();
                }
                lw
            })
            .collect()
    }

    /// Gibbs update of one unit's state given per-state log-likelihoods of its data.
    pub fn sample_state(&mut self, unit: usize, unit_ll: &[f64], rng: &mut SeededRng) -> usize {
        debug_assert_eq!(unit_ll.len(), self.n_states);
        if self.state(unit).is_some() {
            self.unassign(unit);
        }
        let mut lw = self.conditional_prior_ln(unit);
        for (w, ll) in lw.iter_mut().zip(unit_ll) {
            *w += ll;
        }
        let c = sample_log_weights(&lw, rng);
        self.assign(unit, c);
        c
    }

    /// Recompute the ledger and occupancy from the assignment array alone.
    pub fn recount(&self) -> (TransitionLedger, Vec<Vec<u64>>) {
        let mut ledger = TransitionLedger::new(self.n_states);
        let mut occupancy = vec![vec![0; self.n_states]; self.occupancy.len()];
        for (u, link) in self.links.iter().enumerate() {
            let Some(c) = self.state(u) else { continue };
            occupancy[link.epoch as usize][c] += 1;
            match link.prev {
                None => ledger.start[c] += 1,
                Some(p) => {
                    if let Some(pc) = self.state(p as usize) {
                        ledger.add_pair(pc, c);
                    }
                }
            }
        }
        (ledger, occupancy)
    }

    pub fn audit(&self) -> Result<()> {
        let (ledger, occupancy) = self.recount();
        if ledger != self.ledger {
            return Err(Error::invariant("transition ledger differs from recount"));
        }
        if occupancy != self.occupancy {
            return Err(Error::invariant("epoch occupancy differs from recount"));
        }
        for c in 0..self.n_states {
            let row: u64 = (0..self.n_states).map(|d| self.ledger.pair(c, d)).sum();
            if row != self.ledger.from[c] {
                return Err(Error::invariant("pair row sum differs from successor count"));
            }
        }
        Ok(())
    }

    /// Replace the stored ledger (from a checkpoint) after checking it against a recount.
    pub fn verify_ledger(&self, stored: &TransitionLedger) -> Result<()> {
        if stored != &self.ledger {
            return Err(Error::invariant("stored transition ledger differs from assignments"));
        }
        Ok(())
    }

    /// Log probability of all assignments with the transition rows integrated out,
    /// accumulated in unit order.
    pub fn log_prior(&self) -> f64 {
        let nc = self.n_states;
        let a = self.alpha;
        let rho = self.estimate_rho();
        let mut ledger = TransitionLedger::new(nc);
        let mut total = 0.0;
        for (u, link) in self.links.iter().enumerate() {
            let c = self.state(u).expect("log_prior needs every unit assigned");
            match link.prev {
                Some(p) => {
                    let pc = self.state(p as usize).unwrap();
                    total += ((ledger.pair(pc, c) as f64 + a)
                        / (ledger.from[pc] as f64 + nc as f64 * a))
                        .ln();
                    ledger.add_pair(pc, c);
                }
                None => {
                    let p = match link.start {
                        StartRule::Uniform => 1.0 / nc as f64,
                        StartRule::Fallback => {
                            self.fallback_state_distribution(link.epoch as usize, &rho).probs[c]
                        }
                    };
                    total += p.ln();
                }
            }
        }
        total
    }

    /// Relabel states: unit in state `c` moves to `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> StateChain {
        let assignments: Vec<u32> = self
            .assignments
            .iter()
            .map(|&c| perm[c as usize] as u32)
            .collect();
        StateChain::with_assignments(self.links.clone(), self.n_states, self.alpha, &assignments)
            .expect("permutation of a valid chain")
    }

    /// Draw a state from a probability vector (used by forward simulation).
    pub fn draw(probs: &[f64], rng: &mut SeededRng) -> usize {
        sample_weights(probs, rng)
    }
}

pub fn estimate_rho(ledger: &TransitionLedger, alpha: f64) -> TransitionMatrix {
    let nc = ledger.n_states;
    let rho = (0..nc)
        .map(|c| {
            let den = ledger.from[c] as f64 + nc as f64 * alpha;
            (0..nc)
                .map(|d| (ledger.pair(c, d) as f64 + alpha) / den)
                .collect()
        })
        .collect();
    TransitionMatrix {
        rho,
        initial: vec![1.0 / nc as f64; nc],
    }
}
