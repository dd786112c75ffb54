//! One epoch: a freshly spawned scenario run for a fixed number of steps.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{baseline_policy, compute_rewards, BanditState, NodeMode, Policy, TargetBelief};
use crate::classes::{
    assign_class, assign_class_on, distribution_distance, score_classes, update_library, BlockLayout,
    ClassLibrary, ParameterVector,
};
use crate::dynamics::{step_motion, step_signal};
use crate::rng::SimRng;
use crate::scenario::{Scenario, TargetFamily};
use crate::sensing::{
    associate_node_detections, horizontal_distance, passive_detect, radar_measure, BearingCandidate, PassiveDetection,
    RadarMeasurement, SensingParams,
};
use crate::tracking::{classifier_tuning, learned_tuning, track_rmse, untuned_tuning, FilterTuning, Track};

use super::config::SimConfig;

/// Metrics of one epoch under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// RMSE of every tracked target over its tracked steps (m).
    pub per_target_rmse: Vec<f64>,
    pub median_rmse: f64,
    pub mean_rmse: f64,
    pub formation_accuracy: f64,
    pub association_accuracy: f64,
    /// Fraction of node-steps spent in active mode.
    pub radar_utilization: f64,
    pub active_steps: usize,
    pub passive_steps: usize,
    pub num_nodes: usize,
    pub num_targets: usize,
    /// Per node, the `(mode, reward)` played at each step.
    pub reward_traces: Vec<Vec<(NodeMode, f64)>>,
    /// Number of learned classes after the epoch's library update.
    pub k_hat: Option<usize>,
    /// Mean distance from each true class to its nearest learned centroid.
    pub centroid_error: Option<f64>,
    /// Vectors harvested this epoch.
    pub harvested: usize,
    /// Fraction of motion-state labels matching the truth.
    pub motion_label_accuracy: f64,
    /// Fraction of recorded signal observations matching the truth.
    pub signal_label_accuracy: f64,
    /// Fraction of harvested tracks that ran with a learned class tuning.
    pub tuned_track_fraction: f64,
    /// SHA-256 of the ground-truth trajectories.
    pub truth_hash: String,
}

/// What a step did, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub modes: Vec<NodeMode>,
    pub radar: Vec<RadarMeasurement>,
    pub detections: Vec<PassiveDetection>,
}

struct Candidate {
    id: usize,
    position: [f64; 3],
}

impl BearingCandidate for Candidate {
    fn candidate_id(&self) -> usize {
        self.id
    }

    fn position_estimate(&self) -> [f64; 3] {
        self.position
    }
}

/// Per-epoch random streams.
pub struct EpochStreams {
    pub truth: SimRng,
    pub sensing: SimRng,
    pub policy: SimRng,
    pub clustering: SimRng,
}

/// Mutable state of one epoch.
pub struct EpochSim<'a> {
    config: &'a SimConfig,
    family: &'a TargetFamily,
    policy: Policy,
    library: &'a ClassLibrary,
    sensing: SensingParams,
    untuned: FilterTuning,
    classifier: FilterTuning,
    learned: BTreeMap<usize, FilterTuning>,
    pub scenario: Scenario,
    pub tracks: BTreeMap<usize, Track>,
    bandits: Vec<BanditState>,
    modes_played: Vec<Vec<(NodeMode, f64)>>,
    errors: BTreeMap<usize, (Vec<[f64; 3]>, Vec<[f64; 3]>)>,
    label_hits: usize,
    label_total: usize,
    signal_hits: usize,
    signal_total: usize,
    truth_hasher: Sha256,
    step: usize,
    streams: EpochStreams,
}

fn smoothed_occupancy(history: &[(u32, usize)], n: usize, alpha: f64) -> Vec<f64> {
    let mut counts = vec![alpha; n];
    for &(_, s) in history {
        counts[s] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

impl<'a> EpochSim<'a> {
    pub fn new(
        config: &'a SimConfig,
        family: &'a TargetFamily,
        policy: Policy,
        library: &'a ClassLibrary,
        scenario: Scenario,
        streams: EpochStreams,
    ) -> Self {
        let learned = library
            .classes()
            .iter()
            .filter_map(|c| c.motion_chain.clone().map(|m| (c.id, learned_tuning(m, family))))
            .collect();
        let n = scenario.nodes.len();
        let mut truth_hasher = Sha256::new();
        hash_targets(&mut truth_hasher, &scenario);
        Self {
            config,
            family,
            policy,
            library,
            sensing: config.sensing.params(),
            untuned: untuned_tuning(family),
            classifier: classifier_tuning(family, config.tracking.classifier_stickiness),
            learned,
            tracks: BTreeMap::new(),
            bandits: vec![BanditState::new(config.bandit.exploration); n],
            modes_played: vec![Vec::new(); n],
            errors: BTreeMap::new(),
            label_hits: 0,
            label_total: 0,
            signal_hits: 0,
            signal_total: 0,
            truth_hasher,
            step: 0,
            scenario,
            streams,
        }
    }

    /// Class centroid distributions for an assigned track, else smoothed
    /// running occupancies (`None` below the evidence threshold).
    fn belief(&self, track: &Track) -> TargetBelief {
        if let Some(class) = track.class_assignment.and_then(|c| self.library.get(c)) {
            let block = |name: &str| class.centroid.block(name).map(<[f64]>::to_vec);
            return TargetBelief {
                motion: block("pi_motion"),
                signal: block("pi_signal"),
            };
        }
        let min = self.config.bandit.min_belief_observations;
        let alpha = self.config.tracking.belief_smoothing;
        let v = self.family.motion_state_count();
        let s = self.family.signal_state_count();
        TargetBelief {
            motion: (track.motion_history.len() >= min).then(|| smoothed_occupancy(&track.motion_history, v, alpha)),
            signal: (track.signal_history.len() >= min).then(|| smoothed_occupancy(&track.signal_history, s, alpha)),
        }
    }

    fn select_modes(&mut self) -> Vec<NodeMode> {
        let t = self.step as u64 + 1;
        match self.policy {
            Policy::Bandit => self.bandits.iter().map(|b| b.ucb_select(t)).collect(),
            other => (0..self.bandits.len())
                .map(|_| baseline_policy(other, &mut self.streams.policy))
                .collect(),
        }
    }

    /// Whether a track has enough evidence to be described by a vector.
    fn has_evidence(&self, track: &Track) -> bool {
        track.radar_steps >= self.config.tracking.min_radar_observations
            && track.signal_history.len() >= self.config.tracking.min_passive_detections
    }

    fn vector(&self, track: &Track) -> Option<ParameterVector> {
        let est = track.estimated_params(self.family.motion_state_count(), self.family.signal_state_count(), 0.0);
        ParameterVector::from_estimates(self.library.layout().clone(), &est).ok()
    }

    /// Advances the epoch by one step.
    pub fn run_step(&mut self) -> StepReport {
        let dt = self.config.dt_s;
        let step = self.step as u32;
        let time = (self.step + 1) as f64 * dt;

        // (1) Modes from the state through the previous step.
        let modes = self.select_modes();

        // (2) Ground truth moves.
        for target in &mut self.scenario.targets {
            let class = self.family.class(target.class_id);
            step_motion(target, class, self.family, dt, &mut self.streams.truth);
            step_signal(target, class, &mut self.streams.truth);
        }
        hash_targets(&mut self.truth_hasher, &self.scenario);

        // (3) Sensing.
        let mut radar = Vec::new();
        let mut detections = Vec::new();
        for (node, &mode) in self.scenario.nodes.iter().zip(&modes) {
            for target in &self.scenario.targets {
                let class = self.family.class(target.class_id);
                if let Some(m) = radar_measure(node, target, mode, &self.sensing.radar_noise, time, &mut self.streams.sensing) {
                    radar.push(m);
                }
                if let Some(d) = passive_detect(node, target, class, mode, &self.sensing, time, &mut self.streams.sensing) {
                    detections.push(d);
                }
            }
        }

        // (4) Tracking: predict, radar updates, passive association.
        for track in self.tracks.values_mut() {
            track.predict(dt);
        }
        let mut returns: BTreeMap<usize, Vec<(RadarMeasurement, [f64; 3])>> = BTreeMap::new();
        for m in &radar {
            let node = self.scenario.nodes[m.node_id].position;
            returns.entry(m.target_id).or_default().push((m.clone(), node));
        }
        for (target_id, rets) in &returns {
            let track = self
                .tracks
                .entry(*target_id)
                .or_insert_with(|| Track::new(*target_id, *target_id));
            track.apply_radar(rets, step, time, &self.untuned, &self.classifier);
            if let Some(&(s, label)) = track.motion_history.last() {
                if s == step {
                    self.label_total += 1;
                    self.label_hits += (label == self.scenario.targets[*target_id].motion_state) as usize;
                }
            }
        }
        let candidates: Vec<Candidate> = self
            .tracks
            .values()
            .filter_map(|t| t.position().map(|p| Candidate { id: t.id, position: p }))
            .collect();
        let mut by_node: BTreeMap<usize, Vec<&PassiveDetection>> = BTreeMap::new();
        for d in &detections {
            by_node.entry(d.node_id).or_default().push(d);
        }
        let mut votes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (node_id, dets) in &by_node {
            let node = &self.scenario.nodes[*node_id];
            for (d, id) in dets.iter().zip(associate_node_detections(dets, &candidates, node, self.sensing.gate_rad)) {
                if let Some(id) = id {
                    votes.entry(id).or_default().push(d.signal_type);
                }
            }
        }
        let s = self.family.signal_state_count();
        let listening = modes.iter().filter(|m| **m == NodeMode::Passive).count();
        let min_votes = self
            .config
            .tracking
            .min_signal_votes
            .max((self.config.tracking.signal_vote_fraction * listening as f64).ceil() as usize);
        for (id, types) in votes {
            let mut tally = vec![0usize; s];
            types.iter().for_each(|&t| tally[t] += 1);
            let winner = (0..s).max_by(|a, b| tally[*a].cmp(&tally[*b]).then(b.cmp(a))).unwrap_or(0);
            if tally[winner] < min_votes {
                continue;
            }
            if let Some(track) = self.tracks.get_mut(&id) {
                if track.record_signal(step, winner) {
                    let target = &self.scenario.targets[track.target_key];
                    self.signal_total += 1;
                    self.signal_hits += (target.tx_on && target.signal_state == winner) as usize;
                }
            }
        }

        // (5) Estimates: class assignment and retuning for class-aware policies.
        if self.policy.uses_classes() && !self.library.is_empty() {
            let stationary = [0usize, 1usize];
            let ids: Vec<usize> = self.tracks.keys().copied().collect();
            for id in ids {
                let track = &self.tracks[&id];
                if !track.is_running() || !self.has_evidence(track) {
                    continue;
                }
                let Some(vector) = self.vector(track) else { continue };
                let class = assign_class_on(self.library, &vector, self.config.classes.accept_radius, Some(&stationary));
                let tuning = class.and_then(|c| self.learned.get(&c)).unwrap_or(&self.untuned).clone();
                let track = self.tracks.get_mut(&id).expect("id from keys");
                track.class_assignment = class;
                track.retune(tuning);
            }
        }

        // (6) Rewards for the arms played.
        for (n, node) in self.scenario.nodes.iter().enumerate() {
            let range = node.radar_range_km * 1e3;
            let covered: Vec<TargetBelief> = self
                .tracks
                .values()
                .filter(|t| t.position().is_some_and(|p| horizontal_distance(node.position, p) <= range))
                .map(|t| self.belief(t))
                .collect();
            let (active, passive) = compute_rewards(&covered);
            let reward = match modes[n] {
                NodeMode::Active => active,
                NodeMode::Passive => passive,
            };
            self.bandits[n]
                .record_reward(modes[n], reward)
                .expect("rewards are means of values in [0, 1]");
            self.modes_played[n].push((modes[n], reward));
        }

        // Tracking error bookkeeping.
        for track in self.tracks.values() {
            if let (true, Some(p)) = (track.is_running(), track.position()) {
                let truth = self.scenario.targets[track.target_key].position;
                let entry = self.errors.entry(track.id).or_default();
                entry.0.push(p);
                entry.1.push(truth);
            }
        }

        self.step += 1;
        StepReport { modes, radar, detections }
    }

    /// Runs the remaining steps and closes the epoch: harvests vectors,
    /// updates the library (class-aware policies only) and scores.
    pub fn finish(
        mut self,
        pool: &mut Vec<ParameterVector>,
        pool_truth: &mut Vec<usize>,
    ) -> Result<(EpochMetrics, Option<ClassLibrary>), super::SimError> {
        let steps = self.config.steps_per_epoch();
        while self.step < steps {
            self.run_step();
        }
        let per_target_rmse: Vec<f64> = self
            .errors
            .values()
            .map(|(est, truth)| track_rmse(est, truth).expect("aligned by construction"))
            .collect();
        let (median_rmse, mean_rmse) = summarize(&per_target_rmse);
        let active_steps = self
            .modes_played
            .iter()
            .flatten()
            .filter(|(m, _)| *m == NodeMode::Active)
            .count();
        let total = self.modes_played.iter().map(Vec::len).sum::<usize>();

        let mut formation = 0.0;
        let mut association = 0.0;
        let mut k_hat = None;
        let mut centroid_error = None;
        let mut harvested = 0;
        let mut tuned_fraction = 0.0;
        let mut new_library = None;
        if self.policy.uses_classes() {
            let mut labels = Vec::new();
            let mut in_epoch = Vec::new();
            for track in self.tracks.values() {
                if !self.has_evidence(track) {
                    continue;
                }
                let Some(vector) = self.vector(track) else { continue };
                let true_class = self.scenario.targets[track.target_key].class_id;
                labels.push((assign_class(self.library, &vector, self.config.classes.accept_radius), true_class));
                in_epoch.push((track.class_assignment, true_class));
                pool.push(vector);
                pool_truth.push(true_class);
                harvested += 1;
            }
            tuned_fraction = if in_epoch.is_empty() {
                0.0
            } else {
                in_epoch.iter().filter(|l| l.0.is_some()).count() as f64 / in_epoch.len() as f64
            };
            let true_k = self.family.classes().len();
            if !pool.is_empty() {
                let (updated, _) = update_library(self.library, pool, self.config.classes.k_max, &mut self.streams.clustering)?;
                let acc = score_classes(updated.len(), true_k, &labels);
                formation = acc.formation;
                association = acc.association;
                k_hat = Some(updated.len());
                centroid_error = Some(true_class_error(&updated, self.family, self.library.layout()));
                let mut updated = updated;
                updated.epoch_history.push(acc);
                new_library = Some(updated);
            }
        }

        let truth_hash = format!("{:x}", self.truth_hasher.finalize());
        Ok((
            EpochMetrics {
                per_target_rmse,
                median_rmse,
                mean_rmse,
                formation_accuracy: formation,
                association_accuracy: association,
                radar_utilization: if total == 0 { 0.0 } else { active_steps as f64 / total as f64 },
                active_steps,
                passive_steps: total - active_steps,
                num_nodes: self.scenario.nodes.len(),
                num_targets: self.scenario.targets.len(),
                reward_traces: self.modes_played,
                k_hat,
                centroid_error,
                harvested,
                motion_label_accuracy: ratio(self.label_hits, self.label_total),
                signal_label_accuracy: ratio(self.signal_hits, self.signal_total),
                tuned_track_fraction: tuned_fraction,
                truth_hash,
            },
            new_library,
        ))
    }
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

fn hash_targets(h: &mut Sha256, scenario: &Scenario) {
    for t in &scenario.targets {
        for x in t.position.iter().chain(&t.velocity) {
            h.update(x.to_le_bytes());
        }
        h.update([t.motion_state as u8, t.signal_state as u8, t.tx_on as u8]);
    }
}

/// `(median, mean)`; zeros when empty.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (median, v.iter().sum::<f64>() / n as f64)
}

/// The parameter vector a perfectly observed class would converge to.
pub fn true_class_vector(family: &TargetFamily, class_id: usize, layout: &Arc<BlockLayout>) -> ParameterVector {
    let class = family.class(class_id);
    let mut blocks = vec![
        class.motion_stationary().into_vec(),
        class.signal_stationary().into_vec(),
    ];
    if layout.has_transition_rows() {
        blocks.extend(class.motion_chain.transition().iter().cloned());
        blocks.extend(class.signal_chain.transition().iter().cloned());
    }
    let n = blocks.len();
    ParameterVector::new(layout.clone(), blocks, vec![0.0; n]).expect("class chains are valid distributions")
}

/// Mean over true classes of the distance to the nearest learned centroid.
pub fn true_class_error(library: &ClassLibrary, family: &TargetFamily, layout: &Arc<BlockLayout>) -> f64 {
    let k = family.classes().len();
    (0..k)
        .map(|c| {
            let truth = true_class_vector(family, c, layout);
            library
                .classes()
                .iter()
                .map(|l| distribution_distance(&truth, &l.centroid).unwrap_or(f64::INFINITY))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / k as f64
}
