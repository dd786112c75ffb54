//! Finite Markov chains.
//!
//! Every target parameter (motion model, signal type, transmit on/off) is a
//! finite-state Markov process. This module holds the chain type, stationary
//! distributions, sampling, transition estimation from observed state
//! sequences, and the normalized Shannon entropy used as a bandit reward.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums and distribution totals must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("transition matrix must be non-empty and square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("transition entry [{row}][{col}] = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("expected {expected} state labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("distribution is invalid: {0}")]
    InvalidDistribution(String),
    #[error("chain has {0} closed communicating classes; stationary distribution is not unique")]
    NonUniqueStationary(usize),
    #[error("state sequence needs at least two states, got {0}")]
    EmptySequence(usize),
    #[error("state index {index} out of range for {num_states} states")]
    StateOutOfRange { index: usize, num_states: usize },
}

/// A row-stochastic transition matrix over `p` labelled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl MarkovChain {
    pub fn new(transition: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, MarkovError> {
        let p = transition.len();
        if labels.len() != p {
            return Err(MarkovError::LabelCount {
                expected: p,
                got: labels.len(),
            });
        }
        validate_stochastic(&transition)?;
        Ok(Self { transition, labels })
    }

    /// Chain with labels `s0, s1, ...`.
    pub fn unlabeled(transition: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        let labels = (0..transition.len()).map(|i| format!("s{i}")).collect();
        Self::new(transition, labels)
    }

    /// Every row uniform over `p` states.
    pub fn uniform(p: usize) -> Self {
        assert!(p > 0, "chain needs at least one state");
        let row = vec![1.0 / p as f64; p];
        Self {
            transition: vec![row; p],
            labels: (0..p).map(|i| format!("s{i}")).collect(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, MarkovError> {
        if labels.len() != self.num_states() {
            return Err(MarkovError::LabelCount {
                expected: self.num_states(),
                got: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i]
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Draws the successor of `current` by inverting the row CDF.
    pub fn sample_next<R: Rng + ?Sized>(&self, current: usize, rng: &mut R) -> usize {
        let row = &self.transition[current];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding left u above the last partial sum: take the last state with mass.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }

    /// Draws a state from an arbitrary distribution over this chain's states.
    pub fn sample_from<R: Rng + ?Sized>(dist: &StateDistribution, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in dist.probs().iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Closed communicating classes of the chain (recurrent sets).
    pub fn closed_classes(&self) -> Vec<Vec<usize>> {
        let p = self.num_states();
        let mut reach = vec![vec![false; p]; p];
        for (i, row) in self.transition.iter().enumerate() {
            reach[i][i] = true;
            for (j, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    reach[i][j] = true;
                }
            }
        }
        // Warshall transitive closure; p is tiny for every chain in this crate.
        for k in 0..p {
            for i in 0..p {
                if reach[i][k] {
                    for j in 0..p {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        let mut seen = vec![false; p];
        let mut classes = Vec::new();
        for i in 0..p {
            if seen[i] {
                continue;
            }
            let class: Vec<usize> = (0..p).filter(|&j| reach[i][j] && reach[j][i]).collect();
            for &j in &class {
                seen[j] = true;
            }
            let closed = class
                .iter()
                .all(|&a| (0..p).all(|b| !reach[a][b] || class.contains(&b)));
            if closed {
                classes.push(class);
            }
        }
        classes
    }

    /// Solves `pi P = pi`, `sum(pi) = 1` directly.
    pub fn stationary_distribution(&self) -> Result<StateDistribution, MarkovError> {
        let p = self.num_states();
        let closed = self.closed_classes().len();
        if closed != 1 {
            return Err(MarkovError::NonUniqueStationary(closed));
        }
        if p == 1 {
            return Ok(StateDistribution(vec![1.0]));
        }
        // (P^T - I) pi = 0 with the last equation replaced by the normalisation row.
        let mut a = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] = self.transition[j][i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..p {
            a[(p - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(p);
        b[p - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or(MarkovError::NonUniqueStationary(closed))?;
        let mut probs: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|x| *x /= total);
        Ok(StateDistribution(probs))
    }

    /// One step of the chain applied to a distribution: `dist * P`.
    pub fn propagate(&self, dist: &StateDistribution) -> StateDistribution {
        let p = self.num_states();
        let mut out = vec![0.0; p];
        for (i, &pi) in dist.probs().iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += pi * self.transition[i][j];
            }
        }
        StateDistribution(out)
    }
}

fn validate_stochastic(transition: &[Vec<f64>]) -> Result<(), MarkovError> {
    let p = transition.len();
    if p == 0 {
        return Err(MarkovError::NotSquare { rows: 0, cols: 0 });
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != p {
            return Err(MarkovError::NotSquare {
                rows: p,
                cols: row.len(),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(MarkovError::EntryOutOfRange {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MarkovError::RowSum { row: i, sum });
        }
    }
    Ok(())
}

/// Probability vector over the states of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, MarkovError> {
        if probs.is_empty() {
            return Err(MarkovError::InvalidDistribution("empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(MarkovError::InvalidDistribution(format!(
                "entry {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MarkovError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// All mass on `state`.
    pub fn degenerate(n: usize, state: usize) -> Self {
        let mut v = vec![0.0; n];
        v[state] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn normalized_entropy(&self) -> f64 {
        normalized_entropy(&self.0)
    }

    /// Empirical state frequencies of `states` over `num_states` states.
    pub fn occupancy(states: &[usize], num_states: usize) -> Self {
        if states.is_empty() {
            return Self::uniform(num_states);
        }
        let mut counts = vec![0.0; num_states];
        for &s in states {
            counts[s] += 1.0;
        }
        let n = states.len() as f64;
        Self(counts.into_iter().map(|c| c / n).collect())
    }
}

/// States observed at consecutive time steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateSequence {
    pub states: Vec<usize>,
    pub step_duration: f64,
}

impl StateSequence {
    pub fn new(states: Vec<usize>, step_duration: f64) -> Self {
        Self {
            states,
            step_duration,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Transition counts accumulated from one or more state sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    counts: Vec<Vec<f64>>,
}

impl TransitionCounts {
    pub fn new(num_states: usize) -> Self {
        Self {
            counts: vec![vec![0.0; num_states]; num_states],
        }
    }

    /// Adds every consecutive pair of `states`.
    pub fn add_sequence(&mut self, states: &[usize]) -> Result<(), MarkovError> {
        let p = self.counts.len();
        if let Some(&bad) = states.iter().find(|&&s| s >= p) {
            return Err(MarkovError::StateOutOfRange {
                index: bad,
                num_states: p,
            });
        }
        for w in states.windows(2) {
            self.counts[w[0]][w[1]] += 1.0;
        }
        Ok(())
    }

    pub fn row_total(&self, i: usize) -> f64 {
        self.counts[i].iter().sum()
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    /// Row `i` is `(count(i->j) + smoothing) / (count(i->.) + p * smoothing)`;
    /// a row with no mass at all estimates to uniform.
    pub fn to_chain(&self, smoothing: f64) -> MarkovChain {
        let p = self.counts.len();
        let transition = self
            .counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + p as f64 * smoothing;
                if total <= 0.0 {
                    vec![1.0 / p as f64; p]
                } else {
                    row.iter().map(|c| (c + smoothing) / total).collect()
                }
            })
            .collect();
        MarkovChain {
            transition,
            labels: (0..p).map(|i| format!("s{i}")).collect(),
        }
    }
}

/// Maximum-likelihood (optionally pseudo-count smoothed) transition estimate.
pub fn estimate_transitions(
    seq: &StateSequence,
    num_states: usize,
    smoothing: f64,
) -> Result<MarkovChain, MarkovError> {
    if seq.len() < 2 {
        return Err(MarkovError::EmptySequence(seq.len()));
    }
    assert!(smoothing >= 0.0, "smoothing must be non-negative");
    let mut counts = TransitionCounts::new(num_states);
    counts.add_sequence(&seq.states)?;
    Ok(counts.to_chain(smoothing))
}

/// Shannon entropy in bits divided by `log2(n)`; 0 for a single state.
///
/// ```
/// use crn_core::markov::normalized_entropy;
/// assert_eq!(normalized_entropy(&[0.5, 0.5]), 1.0);
/// assert_eq!(normalized_entropy(&[1.0, 0.0]), 0.0);
/// ```
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    let n = probs.len();
    if n < 2 {
        return 0.0;
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    (h / (n as f64).log2()).clamp(0.0, 1.0)
}

/// Same state count and stationary probabilities within `tol` (max-abs).
pub fn equal_in_state_distribution(a: &StateDistribution, b: &StateDistribution, tol: f64) -> bool {
    a.len() == b.len()
        && a
            .probs()
            .iter()
            .zip(b.probs())
            .all(|(x, y)| (x - y).abs() <= tol)
}

/// Total-variation distance between two distributions of equal length.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
