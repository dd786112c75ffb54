//! Learning target classes from per-target parameter estimates.
//!
//! A [`ParameterVector`] stacks a target's estimated distributions into named
//! blocks. Vectors are compared with a weighted sum of per-block
//! Jensen-Shannon divergences, clustered with k-means under that distance,
//! and the number of clusters is chosen by AIC. The resulting
//! [`ClassLibrary`] persists across epochs and maps new tracks to classes.

use std::sync::Arc;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::markov::MarkovChain;
use crate::tracking::EstimatedParams;

/// Upper bound used by [`select_k_aic`] callers when none is configured.
pub const DEFAULT_K_MAX: usize = 6;
pub const DEFAULT_ACCEPT_RADIUS: f64 = 0.25;
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERATIONS: usize = 100;
const LIBRARY_VERSION: u32 = 1;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassError {
    #[error("parameter vectors have different block structures")]
    BlockMismatch,
    #[error("block `{name}` sums to {sum}, not 1")]
    InvalidBlock { name: String, sum: f64 },
    #[error("cannot form {k} clusters from {points} points")]
    TooFewPoints { points: usize, k: usize },
    #[error("library document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("library document: {0}")]
    Format(String),
}

/// One named distribution inside a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub length: usize,
    /// Weight of this block in the distance.
    #[serde(skip)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    blocks: Vec<BlockSpec>,
}

const PI_MOTION: &str = "pi_motion";
const PI_SIGNAL: &str = "pi_signal";
const P_MOTION: &str = "P_motion";
const P_SIGNAL: &str = "P_signal";

impl BlockLayout {
    /// Stationary blocks (weight 1) followed by transition rows whose weights
    /// add to 0.5 per chain.
    pub fn standard(v: usize, s: usize) -> Self {
        let mut names = vec![(PI_MOTION.to_string(), v), (PI_SIGNAL.to_string(), s)];
        names.extend((0..v).map(|i| (format!("{P_MOTION}[{i}]"), v)));
        names.extend((0..s).map(|i| (format!("{P_SIGNAL}[{i}]"), s)));
        Self::from_names(names).expect("standard block names are known")
    }

    /// Stationary blocks only.
    pub fn stationary(v: usize, s: usize) -> Self {
        Self::from_names(vec![(PI_MOTION.to_string(), v), (PI_SIGNAL.to_string(), s)])
            .expect("standard block names are known")
    }

    /// Rebuilds a layout (and its weights) from persisted block names.
    pub fn from_names(names: Vec<(String, usize)>) -> Result<Self, ClassError> {
        let count = |prefix: &str| names.iter().filter(|(n, _)| n.starts_with(&format!("{prefix}["))).count();
        let (mrows, srows) = (count(P_MOTION), count(P_SIGNAL));
        let blocks = names
            .into_iter()
            .map(|(name, length)| {
                let weight = if name == PI_MOTION || name == PI_SIGNAL {
                    1.0
                } else if name.starts_with(&format!("{P_MOTION}[")) {
                    0.5 / mrows as f64
                } else if name.starts_with(&format!("{P_SIGNAL}[")) {
                    0.5 / srows as f64
                } else {
                    return Err(ClassError::Format(format!("unknown block `{name}`")));
                };
                if length == 0 {
                    return Err(ClassError::Format(format!("block `{name}` is empty")));
                }
                Ok(BlockSpec { name, length, weight })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// Free parameters of one centroid: block lengths minus one per block.
    pub fn free_parameters(&self) -> usize {
        self.blocks.iter().map(|b| b.length - 1).sum()
    }

    pub fn has_transition_rows(&self) -> bool {
        self.blocks.len() > 2
    }
}

/// One target's (or one centroid's) distributions, block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<BlockLayout>,
    blocks: Vec<Vec<f64>>,
    /// Effective sample size behind each block (0 for centroids).
    sample_sizes: Vec<f64>,
}

impl ParameterVector {
    pub fn new(
        layout: Arc<BlockLayout>,
        blocks: Vec<Vec<f64>>,
        sample_sizes: Vec<f64>,
    ) -> Result<Self, ClassError> {
        if blocks.len() != layout.blocks.len() || sample_sizes.len() != blocks.len() {
            return Err(ClassError::BlockMismatch);
        }
        for (spec, b) in layout.blocks.iter().zip(&blocks) {
            if b.len() != spec.length {
                return Err(ClassError::BlockMismatch);
            }
            let sum: f64 = b.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || b.iter().any(|&x| !(0.0..=1.0 + 1e-12).contains(&x)) {
                return Err(ClassError::InvalidBlock {
                    name: spec.name.clone(),
                    sum,
                });
            }
        }
        Ok(Self {
            layout,
            blocks,
            sample_sizes,
        })
    }

    /// Builds a vector from a track's estimates. Transition rows carry their
    /// transition counts as sample size; the stationary blocks summarise the
    /// same sequences and count as a single draw each.
    pub fn from_estimates(layout: Arc<BlockLayout>, est: &EstimatedParams) -> Result<Self, ClassError> {
        let mut blocks = vec![
            est.motion_stationary.probs().to_vec(),
            est.signal_stationary.probs().to_vec(),
        ];
        let mut sizes = vec![1.0, 1.0];
        if layout.has_transition_rows() {
            for (i, row) in est.motion_transition.transition().iter().enumerate() {
                blocks.push(row.clone());
                sizes.push(est.motion_row_counts[i]);
            }
            for (i, row) in est.signal_transition.transition().iter().enumerate() {
                blocks.push(row.clone());
                sizes.push(est.signal_row_counts[i]);
            }
        }
        Self::new(layout, blocks, sizes)
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.blocks[i].as_slice())
    }

    pub fn sample_sizes(&self) -> &[f64] {
        &self.sample_sizes
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// Motion transition chain encoded by the `P_motion` rows, if present.
    pub fn motion_chain(&self) -> Option<MarkovChain> {
        let rows: Vec<Vec<f64>> = self
            .layout
            .blocks
            .iter()
            .zip(&self.blocks)
            .filter(|(s, _)| s.name.starts_with(&format!("{P_MOTION}[")))
            .map(|(_, b)| {
                let total: f64 = b.iter().sum();
                b.iter().map(|x| x / total).collect()
            })
            .collect();
        if rows.is_empty() {
            return None;
        }
        MarkovChain::unlabeled(rows).ok()
    }

    /// Block-wise arithmetic mean.
    pub fn mean_of(members: &[&ParameterVector]) -> Option<ParameterVector> {
        let first = members.first()?;
        let n = members.len() as f64;
        let blocks = first
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| {
                (0..block.len())
                    .map(|j| members.iter().map(|m| m.blocks[b][j]).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        Some(ParameterVector {
            layout: first.layout.clone(),
            blocks,
            sample_sizes: vec![0.0; first.blocks.len()],
        })
    }
}

fn xlog2x_ratio(x: f64, m: f64) -> f64 {
    if x > 0.0 {
        x * (x / m).log2()
    } else {
        0.0
    }
}

/// Jensen-Shannon divergence in bits; lies in [0, 1].
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if m > 0.0 {
            total += 0.5 * xlog2x_ratio(a, m) + 0.5 * xlog2x_ratio(b, m);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Weighted sum of per-block Jensen-Shannon divergences.
pub fn distribution_distance(a: &ParameterVector, b: &ParameterVector) -> Result<f64, ClassError> {
    if !a.same_layout(b) {
        return Err(ClassError::BlockMismatch);
    }
    Ok(distance_unchecked(a, b, None))
}

/// Distance restricted to a subset of block indices (all blocks if `None`).
fn distance_unchecked(a: &ParameterVector, b: &ParameterVector, only: Option<&[usize]>) -> f64 {
    let blocks = &a.layout.blocks;
    match only {
        Some(idx) => idx
            .iter()
            .map(|&i| blocks[i].weight * jensen_shannon(&a.blocks[i], &b.blocks[i]))
            .sum(),
        None => blocks
            .iter()
            .enumerate()
            .map(|(i, s)| s.weight * jensen_shannon(&a.blocks[i], &b.blocks[i]))
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<ParameterVector>,
    /// Sum of member-to-centroid distances.
    pub objective: f64,
    /// Objective after every assignment and centroid step of the winning restart.
    pub trace: Vec<f64>,
}

fn nearest(point: &ParameterVector, centroids: &[ParameterVector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = distance_unchecked(point, centroid, None);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng + ?Sized>(points: &[ParameterVector], k: usize, rng: &mut R) -> Vec<ParameterVector> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| distance_unchecked(p, &centroids[0], None))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(distance_unchecked(p, &c, None));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[ParameterVector], mut centroids: Vec<ParameterVector>) -> KMeansResult {
    let k = centroids.len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let (next, objective): (Vec<usize>, f64) = {
            let pairs: Vec<(usize, f64)> = points.iter().map(|p| nearest(p, &centroids)).collect();
            (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).sum())
        };
        trace.push(objective);
        if next == assignments {
            break;
        }
        assignments = next;
        let updated: Vec<ParameterVector> = (0..k)
            .map(|c| {
                let members: Vec<&ParameterVector> = points
                    .iter()
                    .zip(&assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| p)
                    .collect();
                ParameterVector::mean_of(&members).unwrap_or_else(|| centroids[c].clone())
            })
            .collect();
        let moved: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| distance_unchecked(p, &updated[a], None))
            .sum();
        // The block mean does not minimise the divergence, so keep the old
        // centroids whenever the mean would raise the objective.
        if moved > objective {
            break;
        }
        trace.push(moved);
        centroids = updated;
    }
    let objective = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| distance_unchecked(p, &centroids[a], None))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        objective,
        trace,
    }
}

/// k-means under [`distribution_distance`]: k-means++ seeding, guarded Lloyd
/// iterations, best of [`KMEANS_RESTARTS`] restarts.
pub fn kmeans_distributions<R: Rng + ?Sized>(
    vectors: &[ParameterVector],
    k: usize,
    rng: &mut R,
) -> Result<KMeansResult, ClassError> {
    if k == 0 || k > vectors.len() {
        return Err(ClassError::TooFewPoints {
            points: vectors.len(),
            k,
        });
    }
    if vectors.iter().any(|v| !v.same_layout(&vectors[0])) {
        return Err(ClassError::BlockMismatch);
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let result = lloyd(vectors, kmeans_plus_plus(vectors, k, rng));
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
        if k == 1 {
            break;
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per-cluster centroids used by the likelihood: each block pools its members
/// weighted by their sample sizes, which maximises the categorical likelihood
/// for the given partition. Blocks with no evidence fall back to the k-means
/// centroid.
pub fn pooled_centroids(vectors: &[ParameterVector], fit: &KMeansResult) -> Vec<ParameterVector> {
    fit.centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| {
            let mut pooled = centroid.clone();
            for (b, block) in pooled.blocks.iter_mut().enumerate() {
                let mut acc = vec![0.0; block.len()];
                let mut total = 0.0;
                for (v, _) in vectors.iter().zip(&fit.assignments).filter(|(_, &a)| a == c) {
                    let n = v.sample_sizes[b];
                    total += n;
                    acc.iter_mut().zip(&v.blocks[b]).for_each(|(a, x)| *a += n * x);
                }
                if total > 0.0 {
                    *block = acc.into_iter().map(|a| a / total).collect();
                }
            }
            pooled
        })
        .collect()
}

/// Log-density of one member under one centroid: each block is a categorical
/// sample of the member's effective size.
fn member_log_density(v: &ParameterVector, c: &ParameterVector) -> f64 {
    v.blocks
        .iter()
        .zip(&c.blocks)
        .zip(&v.sample_sizes)
        .filter(|(_, n)| **n > 0.0)
        .map(|((x, cb), n)| {
            n * x
                .iter()
                .zip(cb)
                .filter(|(xi, _)| **xi > 0.0)
                .map(|(xi, ci)| xi * ci.max(PROB_FLOOR).ln())
                .sum::<f64>()
        })
        .sum()
}

/// Finite-mixture log-likelihood of the pool: members are drawn from the
/// pooled cluster centroids with weights equal to the cluster proportions.
pub fn clustering_log_likelihood(vectors: &[ParameterVector], fit: &KMeansResult) -> f64 {
    let n = vectors.len() as f64;
    let centroids = pooled_centroids(vectors, fit);
    let log_w: Vec<f64> = (0..centroids.len())
        .map(|c| {
            let size = fit.assignments.iter().filter(|&&a| a == c).count() as f64;
            if size > 0.0 {
                (size / n).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    vectors
        .iter()
        .map(|v| {
            let terms: Vec<f64> = centroids
                .iter()
                .zip(&log_w)
                .map(|(c, lw)| lw + member_log_density(v, c))
                .collect();
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AicFit {
    pub k: usize,
    pub fit: KMeansResult,
    /// AIC for k = 1, 2, ...
    pub aic: Vec<f64>,
}

/// Fits k = 1..=k_max and keeps the minimum-AIC fit (smaller k on ties).
pub fn fit_aic<R: Rng + ?Sized>(vectors: &[ParameterVector], k_max: usize, rng: &mut R) -> Result<AicFit, ClassError> {
    if vectors.is_empty() {
        return Err(ClassError::TooFewPoints { points: 0, k: 1 });
    }
    let d = vectors[0].layout.free_parameters() as f64;
    let mut best: Option<(f64, usize, KMeansResult)> = None;
    let mut aic = Vec::new();
    for k in 1..=k_max.max(1).min(vectors.len()) {
        let fit = kmeans_distributions(vectors, k, rng)?;
        let score = 2.0 * k as f64 * d - 2.0 * clustering_log_likelihood(vectors, &fit);
        aic.push(score);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, k, fit));
        }
    }
    let (_, k, fit) = best.expect("k = 1 is always fitted");
    Ok(AicFit { k, fit, aic })
}

pub fn select_k_aic<R: Rng + ?Sized>(vectors: &[ParameterVector], k_max: usize, rng: &mut R) -> usize {
    fit_aic(vectors, k_max, rng).map(|f| f.k).unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedClass {
    pub id: usize,
    pub centroid: ParameterVector,
    pub member_count: usize,
    /// Motion chain for filter tuning: member transition rows pooled by
    /// their transition counts.
    pub motion_chain: Option<MarkovChain>,
}

/// Accuracy of one epoch's class learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub formation: f64,
    pub association: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassLibrary {
    layout: Arc<BlockLayout>,
    classes: Vec<LearnedClass>,
    next_id: usize,
    pub epoch_history: Vec<EpochAccuracy>,
}

impl ClassLibrary {
    pub fn new(layout: Arc<BlockLayout>) -> Self {
        Self {
            layout,
            classes: Vec::new(),
            next_id: 0,
            epoch_history: Vec::new(),
        }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn classes(&self) -> &[LearnedClass] {
        &self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, id: usize) -> Option<&LearnedClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Nearest class and its distance, optionally over a subset of blocks.
    pub fn nearest(&self, vector: &ParameterVector, blocks: Option<&[usize]>) -> Option<(usize, f64)> {
        self.classes
            .iter()
            .map(|c| (c.id, distance_unchecked(vector, &c.centroid, blocks)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Serialises to the library JSON document.
    pub fn to_json(&self) -> Result<String, ClassError> {
        #[derive(Serialize)]
        struct Block<'a> {
            name: &'a str,
            length: usize,
        }
        #[derive(Serialize)]
        struct Class {
            id: usize,
            centroid: Box<RawValue>,
            member_count: usize,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            blocks: Vec<Block<'a>>,
            classes: Vec<Class>,
        }
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let values: Vec<String> = c.centroid.blocks.iter().flatten().map(|x| format!("{x:.16e}")).collect();
                Ok(Class {
                    id: c.id,
                    centroid: RawValue::from_string(format!("[{}]", values.join(",")))?,
                    member_count: c.member_count,
                })
            })
            .collect::<Result<Vec<_>, serde_json::Error>>()?;
        let doc = Doc {
            version: LIBRARY_VERSION,
            blocks: self
                .layout
                .blocks
                .iter()
                .map(|b| Block {
                    name: &b.name,
                    length: b.length,
                })
                .collect(),
            classes,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ClassError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Block {
            name: String,
            length: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Class {
            id: usize,
            centroid: Vec<f64>,
            member_count: usize,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            version: u32,
            blocks: Vec<Block>,
            classes: Vec<Class>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.version != LIBRARY_VERSION {
            return Err(ClassError::Format(format!("unsupported version {}", doc.version)));
        }
        let layout = Arc::new(BlockLayout::from_names(
            doc.blocks.into_iter().map(|b| (b.name, b.length)).collect(),
        )?);
        let mut classes = Vec::with_capacity(doc.classes.len());
        for c in doc.classes {
            let total: usize = layout.blocks.iter().map(|b| b.length).sum();
            if c.centroid.len() != total {
                return Err(ClassError::BlockMismatch);
            }
            let mut rest = c.centroid.as_slice();
            let mut blocks = Vec::new();
            for b in &layout.blocks {
                let (head, tail) = rest.split_at(b.length);
                blocks.push(head.to_vec());
                rest = tail;
            }
            let n = blocks.len();
            if classes.iter().any(|x: &LearnedClass| x.id == c.id) {
                return Err(ClassError::Format(format!("duplicate class id {}", c.id)));
            }
            let centroid = ParameterVector::new(layout.clone(), blocks, vec![0.0; n])?;
            classes.push(LearnedClass {
                id: c.id,
                motion_chain: centroid.motion_chain(),
                centroid,
                member_count: c.member_count,
            });
        }
        let next_id = classes.iter().map(|c| c.id + 1).max().unwrap_or(0);
        Ok(Self {
            layout,
            classes,
            next_id,
            epoch_history: Vec::new(),
        })
    }
}

/// Re-clusters the cumulative pool and carries class ids over by greedy
/// nearest-centroid matching. Returns the new library and each pooled
/// vector's class id.
pub fn update_library<R: Rng + ?Sized>(
    library: &ClassLibrary,
    pool: &[ParameterVector],
    k_max: usize,
    rng: &mut R,
) -> Result<(ClassLibrary, Vec<usize>), ClassError> {
    if pool.iter().any(|v| !Arc::ptr_eq(v.layout(), &library.layout) && **v.layout() != *library.layout) {
        return Err(ClassError::BlockMismatch);
    }
    let fitted = fit_aic(pool, k_max, rng)?;
    let k = fitted.k;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (n, centroid) in fitted.fit.centroids.iter().enumerate() {
        for (o, old) in library.classes.iter().enumerate() {
            pairs.push((distance_unchecked(centroid, &old.centroid, None), n, o));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut new_ids: Vec<Option<usize>> = vec![None; k];
    let mut old_used = vec![false; library.classes.len()];
    for (_, n, o) in pairs {
        if new_ids[n].is_none() && !old_used[o] {
            new_ids[n] = Some(library.classes[o].id);
            old_used[o] = true;
        }
    }
    let mut next_id = library.next_id;
    let ids: Vec<usize> = new_ids
        .into_iter()
        .map(|id| {
            id.unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            })
        })
        .collect();
    let pooled = pooled_centroids(pool, &fitted.fit);
    let mut classes: Vec<LearnedClass> = fitted
        .fit
        .centroids
        .into_iter()
        .zip(pooled)
        .enumerate()
        .map(|(n, (centroid, pooled))| LearnedClass {
            id: ids[n],
            centroid,
            member_count: fitted.fit.assignments.iter().filter(|&&a| a == n).count(),
            motion_chain: pooled.motion_chain(),
        })
        .collect();
    classes.sort_by_key(|c| c.id);
    let memberships = fitted.fit.assignments.iter().map(|&a| ids[a]).collect();
    Ok((
        ClassLibrary {
            layout: library.layout.clone(),
            classes,
            next_id,
            epoch_history: library.epoch_history.clone(),
        },
        memberships,
    ))
}

/// Nearest class within `accept_radius`, or `None` (unclassified).
pub fn assign_class(library: &ClassLibrary, vector: &ParameterVector, accept_radius: f64) -> Option<usize> {
    assign_class_on(library, vector, accept_radius, None)
}

/// [`assign_class`] measuring distance over a subset of blocks.
pub fn assign_class_on(
    library: &ClassLibrary,
    vector: &ParameterVector,
    accept_radius: f64,
    blocks: Option<&[usize]>,
) -> Option<usize> {
    if !Arc::ptr_eq(vector.layout(), &library.layout) && **vector.layout() != *library.layout {
        return None;
    }
    library
        .nearest(vector, blocks)
        .filter(|(_, d)| *d <= accept_radius)
        .map(|(id, _)| id)
}

/// `max(0, 1 - |k_hat - k| / k)`.
pub fn formation_accuracy(k_hat: usize, k_true: usize) -> f64 {
    if k_true == 0 {
        return if k_hat == 0 { 1.0 } else { 0.0 };
    }
    (1.0 - (k_hat as f64 - k_true as f64).abs() / k_true as f64).max(0.0)
}

/// Fraction of targets whose learned class maps to their true class under the
/// best one-to-one matching. Unassigned targets count as wrong.
pub fn association_accuracy(labels: &[(Option<usize>, usize)]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut learned: Vec<usize> = labels.iter().filter_map(|l| l.0).collect();
    learned.sort_unstable();
    learned.dedup();
    let mut truth: Vec<usize> = labels.iter().map(|l| l.1).collect();
    truth.sort_unstable();
    truth.dedup();
    if learned.is_empty() {
        return 0.0;
    }
    let n = learned.len().max(truth.len());
    let mut m = Matrix::new(n, n, 0i64);
    for (l, t) in labels {
        if let Some(l) = l {
            let r = learned.binary_search(l).expect("collected above");
            let c = truth.binary_search(t).expect("collected above");
            m[(r, c)] += 1;
        }
    }
    let (matched, _) = kuhn_munkres(&m);
    matched as f64 / labels.len() as f64
}

/// `(formation_accuracy, association_accuracy)`.
pub fn score_classes(k_hat: usize, k_true: usize, labels: &[(Option<usize>, usize)]) -> EpochAccuracy {
    EpochAccuracy {
        formation: formation_accuracy(k_hat, k_true),
        association: association_accuracy(labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stationary_vec(layout: &Arc<BlockLayout>, motion: &[f64], signal: &[f64]) -> ParameterVector {
        ParameterVector::new(layout.clone(), vec![motion.to_vec(), signal.to_vec()], vec![50.0, 50.0]).unwrap()
    }

    fn single_block(p: &[f64]) -> ParameterVector {
        let layout = Arc::new(BlockLayout::from_names(vec![(PI_MOTION.into(), p.len())]).unwrap());
        ParameterVector::new(layout, vec![p.to_vec()], vec![1.0]).unwrap()
    }

    #[test]
    fn distance_examples() {
        let layout = Arc::new(BlockLayout::stationary(3, 4));
        let a = stationary_vec(&layout, &[1.0, 0.0, 0.0], &[0.25; 4]);
        let b = stationary_vec(&layout, &[0.0, 1.0, 0.0], &[0.25; 4]);
        assert_eq!(distribution_distance(&a, &a).unwrap(), 0.0);
        assert!((distribution_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let d = distribution_distance(&single_block(&[0.5, 0.5]), &single_block(&[0.9, 0.1])).unwrap();
        assert!((d - 0.146_793_102_436_052_1).abs() < 1e-12, "{d}");
        let other = Arc::new(BlockLayout::stationary(2, 4));
        let c = stationary_vec(&other, &[0.5, 0.5], &[0.25; 4]);
        assert!(matches!(distribution_distance(&a, &c), Err(ClassError::BlockMismatch)));
    }

    #[test]
    fn invalid_block_rejected() {
        let layout = Arc::new(BlockLayout::stationary(2, 2));
        let r = ParameterVector::new(layout, vec![vec![0.5, 0.6], vec![0.5, 0.5]], vec![1.0, 1.0]);
        assert!(matches!(r, Err(ClassError::InvalidBlock { .. })));
    }

    #[test]
    fn standard_layout_weights() {
        let l = BlockLayout::standard(3, 4);
        assert_eq!(l.blocks().len(), 2 + 3 + 4);
        assert_eq!(l.free_parameters(), 2 + 3 + 3 * 2 + 4 * 3);
        let row_weight: f64 = l.blocks()[2..5].iter().map(|b| b.weight).sum();
        assert!((row_weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let layout = Arc::new(BlockLayout::stationary(2, 2));
        let pts = vec![
            stationary_vec(&layout, &[1.0, 0.0], &[0.5, 0.5]),
            stationary_vec(&layout, &[0.0, 1.0], &[0.5, 0.5]),
            stationary_vec(&layout, &[0.5, 0.5], &[1.0, 0.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = kmeans_distributions(&pts, 1, &mut rng).unwrap();
        let c = &r.centroids[0];
        assert!((c.blocks()[0][0] - 0.5).abs() < 1e-12);
        assert!((c.blocks()[1][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            kmeans_distributions(&pts, 4, &mut rng),
            Err(ClassError::TooFewPoints { points: 3, k: 4 })
        ));
    }

    #[test]
    fn kmeans_duplicates_have_zero_objective() {
        let layout = Arc::new(BlockLayout::stationary(2, 2));
        let v = stationary_vec(&layout, &[0.3, 0.7], &[0.9, 0.1]);
        let pts = vec![v; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 1..=5 {
            assert_eq!(kmeans_distributions(&pts, k, &mut rng).unwrap().objective, 0.0);
        }
        assert_eq!(select_k_aic(&pts, 5, &mut rng), 1);
    }

    #[test]
    fn association_examples() {
        let perfect: Vec<_> = (0..30).map(|i| (Some(i % 3 + 10), i % 3)).collect();
        assert_eq!(score_classes(3, 3, &perfect), EpochAccuracy { formation: 1.0, association: 1.0 });
        let mut tenth = perfect.clone();
        for l in tenth.iter_mut().take(3) {
            l.0 = Some((l.0.unwrap() - 10 + 1) % 3 + 10);
        }
        let s = score_classes(3, 3, &tenth);
        assert_eq!(s.formation, 1.0);
        assert!((s.association - 0.9).abs() < 1e-12);
        assert_eq!(formation_accuracy(4, 3), 1.0 - 1.0 / 3.0);
        assert_eq!(formation_accuracy(7, 3), 0.0);
        assert_eq!(association_accuracy(&[(None, 0), (None, 1)]), 0.0);
    }

    #[test]
    fn library_json_round_trip() {
        let layout = Arc::new(BlockLayout::standard(2, 2));
        let v = ParameterVector::new(
            layout.clone(),
            vec![
                vec![0.1, 0.9],
                vec![1.0 / 3.0, 2.0 / 3.0],
                vec![0.5, 0.5],
                vec![0.25, 0.75],
                vec![1.0, 0.0],
                vec![0.7, 0.3],
            ],
            vec![1.0; 6],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lib, members) = update_library(&ClassLibrary::new(layout), &[v.clone(), v], 3, &mut rng).unwrap();
        assert_eq!(members, vec![0, 0]);
        let text = lib.to_json().unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["blocks", "classes", "version"]);
        assert!(text.contains("3.3333333333333331e-1"));
        let back = ClassLibrary::from_json(&text).unwrap();
        assert_eq!(back.classes(), lib.classes());
    }
}
