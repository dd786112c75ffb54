//! Target tracking with interacting-multiple-model (IMM) Kalman filters.
//!
//! Each motion state of the family gets one model in the bank: constant
//! velocity, coordinated turn (using a per-track turn-rate estimate), and a
//! high-g model that is constant velocity with large acceleration noise. A
//! [`FilterTuning`] supplies the model-switching chain and per-model process
//! noise; class-tuned filters use a class's motion chain and noise, the
//! untuned filter mixes uniformly with one shared noise level.
//!
//! Every track runs two banks on the same measurements: the tracking filter
//! (whatever tuning the coordinator picked) and a motion classifier with a
//! fixed reference tuning whose mode posteriors label the motion state at each
//! radar update. Keeping the classifier fixed makes motion histories
//! comparable across tracks, classes and policies.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{MotionKind, VERTICAL_NOISE_RATIO};
use crate::markov::{MarkovChain, MarkovError, StateDistribution, TransitionCounts};
use crate::scenario::{TargetClass, TargetFamily};
use crate::sensing::{wrap_angle, BearingCandidate, RadarMeasurement};

pub type StateVec = SVector<f64, 6>;
pub type StateCov = SMatrix<f64, 6, 6>;
type Row6 = SMatrix<f64, 1, 6>;

/// Turn-rate estimates are clamped to this magnitude (rad/s).
const MAX_TURN_RATE: f64 = 0.5;
/// Below this horizontal speed the heading is too noisy to estimate a turn.
const MIN_TURN_SPEED: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("tuning has {chain} chain states, {noise} noise levels and {kinds} model kinds")]
    DimensionMismatch { chain: usize, noise: usize, kinds: usize },
    #[error("track has {0} radar updates; motion inference needs at least 2")]
    InsufficientHistory(usize),
    #[error("estimate has {estimate} samples but truth has {truth}")]
    LengthMismatch { estimate: usize, truth: usize },
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Model-switching chain plus per-model process noise for an IMM bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTuning {
    pub mode_transition: MarkovChain,
    /// Acceleration standard deviation per model (m/s²).
    pub process_noise: Vec<f64>,
    pub kinds: Vec<MotionKind>,
}

impl FilterTuning {
    pub fn new(
        mode_transition: MarkovChain,
        process_noise: Vec<f64>,
        kinds: Vec<MotionKind>,
    ) -> Result<Self, TrackingError> {
        let chain = mode_transition.num_states();
        if process_noise.len() != chain || kinds.len() != chain {
            return Err(TrackingError::DimensionMismatch {
                chain,
                noise: process_noise.len(),
                kinds: kinds.len(),
            });
        }
        Ok(Self {
            mode_transition,
            process_noise,
            kinds,
        })
    }

    /// A single-model bank.
    pub fn single(kind: MotionKind, accel_std: f64) -> Self {
        Self {
            mode_transition: MarkovChain::uniform(1),
            process_noise: vec![accel_std],
            kinds: vec![kind],
        }
    }

    pub fn num_models(&self) -> usize {
        self.kinds.len()
    }

    /// Initial mode probabilities: stationary if unique, otherwise uniform.
    pub fn initial_mode_probs(&self) -> Vec<f64> {
        self.mode_transition
            .stationary_distribution()
            .map(StateDistribution::into_vec)
            .unwrap_or_else(|_| vec![1.0 / self.num_models() as f64; self.num_models()])
    }
}

fn family_kinds(family: &TargetFamily) -> Vec<MotionKind> {
    family.motion_states().iter().map(|m| m.kind).collect()
}

/// The class's true motion chain and process noise.
pub fn tuned_tuning(class: &TargetClass, family: &TargetFamily) -> FilterTuning {
    FilterTuning {
        mode_transition: class.motion_chain.clone(),
        process_noise: class.process_noise.clone(),
        kinds: family_kinds(family),
    }
}

/// No prior motion knowledge: uniform switching and one shared noise level
/// (the geometric mean of the family's reference noises).
pub fn untuned_tuning(family: &TargetFamily) -> FilterTuning {
    let v = family.motion_state_count();
    let log_mean = family
        .motion_states()
        .iter()
        .map(|m| m.accel_std.max(1e-6).ln())
        .sum::<f64>()
        / v as f64;
    FilterTuning {
        mode_transition: MarkovChain::uniform(v),
        process_noise: vec![log_mean.exp(); v],
        kinds: family_kinds(family),
    }
}

/// Reference noises with a symmetric sticky chain; used to label motion states.
pub fn classifier_tuning(family: &TargetFamily, stickiness: f64) -> FilterTuning {
    let v = family.motion_state_count();
    let off = if v > 1 { (1.0 - stickiness) / (v - 1) as f64 } else { 0.0 };
    let rows = (0..v)
        .map(|i| (0..v).map(|j| if i == j { if v > 1 { stickiness } else { 1.0 } } else { off }).collect())
        .collect();
    FilterTuning {
        mode_transition: MarkovChain::unlabeled(rows).expect("sticky chain is stochastic"),
        process_noise: family.motion_states().iter().map(|m| m.accel_std).collect(),
        kinds: family_kinds(family),
    }
}

/// Tuning from a learned motion chain, with noise looked up from the family's
/// reference motion states.
pub fn learned_tuning(motion_chain: MarkovChain, family: &TargetFamily) -> FilterTuning {
    FilterTuning {
        mode_transition: motion_chain,
        process_noise: family.motion_states().iter().map(|m| m.accel_std).collect(),
        kinds: family_kinds(family),
    }
}

/// Discrete white-noise-acceleration process noise.
pub fn process_noise_matrix(accel_std: f64, dt: f64) -> StateCov {
    let mut q = StateCov::zeros();
    let (a, b, c) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
    for i in 0..3 {
        let s2 = if i == 2 {
            (accel_std * VERTICAL_NOISE_RATIO).powi(2)
        } else {
            accel_std * accel_std
        };
        q[(i, i)] = a * s2;
        q[(i, i + 3)] = b * s2;
        q[(i + 3, i)] = b * s2;
        q[(i + 3, i + 3)] = c * s2;
    }
    q
}

/// State transition for one model kind.
pub fn transition_matrix(kind: MotionKind, turn_rate: f64, dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    if kind == MotionKind::CoordinatedTurn && turn_rate.abs() > 1e-9 {
        let w = turn_rate;
        let (s, c) = (w * dt).sin_cos();
        f[(0, 3)] = s / w;
        f[(0, 4)] = -(1.0 - c) / w;
        f[(1, 3)] = (1.0 - c) / w;
        f[(1, 4)] = s / w;
        f[(3, 3)] = c;
        f[(3, 4)] = -s;
        f[(4, 3)] = s;
        f[(4, 4)] = c;
    }
    f
}

fn symmetrize(p: &mut StateCov) {
    *p = (*p + p.transpose()) * 0.5;
}

/// A radar return in filter coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Cartesian position with covariance.
    Position { z: Vector3<f64>, r: Matrix3<f64> },
    /// Radial velocity seen from `node`.
    Radial { node: [f64; 3], value: f64, variance: f64 },
}

/// Polar-to-Cartesian conversion with multiplicative debiasing and
/// Jacobian-propagated covariance.
pub fn convert_position(m: &RadarMeasurement, node: [f64; 3]) -> (Vector3<f64>, Matrix3<f64>) {
    let (sa, ca) = m.azimuth_rad.sin_cos();
    let (se, ce) = m.elevation_rad.sin_cos();
    let (sr, saz, sel) = (m.noise.range_m, m.noise.azimuth_rad, m.noise.elevation_rad);
    let lam_a = (-0.5 * saz * saz).exp();
    let lam_e = (-0.5 * sel * sel).exp();
    let r = m.range_m;
    let z = Vector3::new(
        node[0] + r * ce * ca / (lam_a * lam_e),
        node[1] + r * ce * sa / (lam_a * lam_e),
        node[2] + r * se / lam_e,
    );
    let j = Matrix3::new(
        ce * ca, -r * ce * sa, -r * se * ca,
        ce * sa, r * ce * ca, -r * se * sa,
        se, 0.0, r * ce,
    );
    let d = Matrix3::from_diagonal(&Vector3::new(sr * sr, saz * saz, sel * sel));
    let cov = j * d * j.transpose();
    (z, (cov + cov.transpose()) * 0.5)
}

/// Position plus radial-velocity observations of one radar return.
pub fn observations(m: &RadarMeasurement, node: [f64; 3]) -> [Observation; 2] {
    let (z, r) = convert_position(m, node);
    [
        Observation::Position { z, r },
        Observation::Radial {
            node,
            value: m.radial_velocity_mps,
            variance: m.noise.radial_velocity_mps.powi(2).max(1e-12),
        },
    ]
}

/// One step's returns as filter observations: the position fixes fused into a
/// single Cartesian fix (exact for the linear position update) followed by the
/// radial velocities.
pub fn step_observations(returns: &[(RadarMeasurement, [f64; 3])]) -> Vec<Observation> {
    let fixes: Vec<_> = returns.iter().map(|(m, n)| convert_position(m, *n)).collect();
    let mut obs = Vec::with_capacity(returns.len() + 1);
    if let Some((z, r)) = fuse_positions(&fixes) {
        obs.push(Observation::Position { z, r });
    }
    obs.extend(returns.iter().map(|(m, node)| Observation::Radial {
        node: *node,
        value: m.radial_velocity_mps,
        variance: m.noise.radial_velocity_mps.powi(2).max(1e-12),
    }));
    obs
}

/// Information-weighted fusion of several Cartesian fixes.
pub fn fuse_positions(fixes: &[(Vector3<f64>, Matrix3<f64>)]) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let mut info = Matrix3::zeros();
    let mut info_z = Vector3::zeros();
    for (z, r) in fixes {
        let ri = r.try_inverse()?;
        info += ri;
        info_z += ri * z;
    }
    let cov = info.try_inverse()?;
    Some((cov * info_z, cov))
}

/// One Kalman model's estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub x: StateVec,
    pub p: StateCov,
}

impl ModelEstimate {
    fn predict(&mut self, f: &StateCov, q: &StateCov) {
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        symmetrize(&mut self.p);
    }

    /// Joseph-form update; returns the Gaussian log-likelihood of the innovation.
    fn update(&mut self, obs: &Observation) -> f64 {
        match obs {
            Observation::Position { z, r } => {
                let h = SMatrix::<f64, 3, 6>::from_fn(|i, j| if i == j { 1.0 } else { 0.0 });
                let innov = z - h * self.x;
                let s = h * self.p * h.transpose() + r;
                let Some(s_inv) = s.try_inverse() else {
                    return 0.0;
                };
                let k = self.p * h.transpose() * s_inv;
                self.x += k * innov;
                let ikh = StateCov::identity() - k * h;
                self.p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
                symmetrize(&mut self.p);
                let det = s.determinant().max(1e-300);
                -0.5 * ((innov.transpose() * s_inv * innov)[(0, 0)]
                    + det.ln()
                    + 3.0 * (2.0 * std::f64::consts::PI).ln())
            }
            Observation::Radial {
                node,
                value,
                variance,
            } => {
                let d = Vector3::new(self.x[0] - node[0], self.x[1] - node[1], self.x[2] - node[2]);
                let range = d.norm();
                if range < 1e-6 {
                    return 0.0;
                }
                let u = d / range;
                let v = Vector3::new(self.x[3], self.x[4], self.x[5]);
                let predicted = u.dot(&v);
                let dp = (v - u * predicted) / range;
                let h = Row6::from_row_slice(&[dp[0], dp[1], dp[2], u[0], u[1], u[2]]);
                let s = (h * self.p * h.transpose())[(0, 0)] + variance;
                let innov = value - predicted;
                let k = self.p * h.transpose() / s;
                self.x += k * innov;
                let ikh = StateCov::identity() - k * h;
                self.p = ikh * self.p * ikh.transpose() + k * k.transpose() * *variance;
                symmetrize(&mut self.p);
                -0.5 * (innov * innov / s + s.ln() + (2.0 * std::f64::consts::PI).ln())
            }
        }
    }
}

/// Interacting-multiple-model bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Imm {
    tuning: FilterTuning,
    models: Vec<ModelEstimate>,
    mode_probs: Vec<f64>,
    turn_rate: f64,
    heading_ref: Option<(f64, f64)>,
    elapsed: f64,
    updates: usize,
}

impl Imm {
    pub fn new(tuning: FilterTuning, x: StateVec, p: StateCov) -> Self {
        let mode_probs = tuning.initial_mode_probs();
        let models = vec![ModelEstimate { x, p }; tuning.num_models()];
        Self {
            tuning,
            models,
            mode_probs,
            turn_rate: 0.0,
            heading_ref: None,
            elapsed: 0.0,
            updates: 0,
        }
    }

    pub fn tuning(&self) -> &FilterTuning {
        &self.tuning
    }

    pub fn mode_probs(&self) -> &[f64] {
        &self.mode_probs
    }

    pub fn models(&self) -> &[ModelEstimate] {
        &self.models
    }

    pub fn turn_rate(&self) -> f64 {
        self.turn_rate
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Moment-matched combined estimate.
    pub fn estimate(&self) -> (StateVec, StateCov) {
        let mut x = StateVec::zeros();
        for (m, &mu) in self.models.iter().zip(&self.mode_probs) {
            x += m.x * mu;
        }
        let mut p = StateCov::zeros();
        for (m, &mu) in self.models.iter().zip(&self.mode_probs) {
            let dx = m.x - x;
            p += (m.p + dx * dx.transpose()) * mu;
        }
        symmetrize(&mut p);
        (x, p)
    }

    /// Swaps in a new tuning, restarting every model from the combined estimate.
    pub fn retune(&mut self, tuning: FilterTuning) {
        let (x, p) = self.estimate();
        self.mode_probs = tuning.initial_mode_probs();
        self.models = vec![ModelEstimate { x, p }; tuning.num_models()];
        self.tuning = tuning;
    }

    /// Mixing, then a per-model kinematic predict.
    pub fn predict(&mut self, dt: f64) {
        assert!(dt > 0.0, "time step must be positive");
        let n = self.models.len();
        let chain = &self.tuning.mode_transition;
        let predicted: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| chain.prob(i, j) * self.mode_probs[i]).sum())
            .collect();
        let mixed: Vec<ModelEstimate> = (0..n)
            .map(|j| {
                if predicted[j] <= 1e-300 {
                    return self.models[j].clone();
                }
                let w: Vec<f64> = (0..n)
                    .map(|i| chain.prob(i, j) * self.mode_probs[i] / predicted[j])
                    .collect();
                let mut x = StateVec::zeros();
                for (m, &wi) in self.models.iter().zip(&w) {
                    x += m.x * wi;
                }
                let mut p = StateCov::zeros();
                for (m, &wi) in self.models.iter().zip(&w) {
                    let dx = m.x - x;
                    p += (m.p + dx * dx.transpose()) * wi;
                }
                symmetrize(&mut p);
                ModelEstimate { x, p }
            })
            .collect();
        self.models = mixed;
        for (j, model) in self.models.iter_mut().enumerate() {
            let f = transition_matrix(self.tuning.kinds[j], self.turn_rate, dt);
            let q = process_noise_matrix(self.tuning.process_noise[j], dt);
            model.predict(&f, &q);
        }
        let total: f64 = predicted.iter().sum();
        self.mode_probs = predicted.iter().map(|c| c / total).collect();
        self.elapsed += dt;
    }

    /// Applies all observations of one time step to every model and updates
    /// the mode probabilities once with the joint likelihood.
    pub fn update(&mut self, obs: &[Observation]) {
        if obs.is_empty() {
            return;
        }
        let log_lik: Vec<f64> = self
            .models
            .iter_mut()
            .map(|m| obs.iter().map(|o| m.update(o)).sum())
            .collect();
        let max = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut post: Vec<f64> = log_lik
            .iter()
            .zip(&self.mode_probs)
            .map(|(l, mu)| mu * (l - max).exp())
            .collect();
        let total: f64 = post.iter().sum();
        if total > 0.0 && total.is_finite() {
            post.iter_mut().for_each(|p| *p = (*p / total).max(1e-12));
            let renorm: f64 = post.iter().sum();
            post.iter_mut().for_each(|p| *p /= renorm);
            self.mode_probs = post;
        }
        self.updates += 1;
        self.refresh_turn_rate();
    }

    fn refresh_turn_rate(&mut self) {
        let (x, _) = self.estimate();
        let (vx, vy) = (x[3], x[4]);
        if vx.hypot(vy) < MIN_TURN_SPEED {
            self.heading_ref = None;
            self.turn_rate = 0.0;
            self.elapsed = 0.0;
            return;
        }
        let heading = vy.atan2(vx);
        if let Some((prev, _)) = self.heading_ref {
            if self.elapsed > 0.0 {
                let raw = wrap_angle(heading - prev) / self.elapsed;
                self.turn_rate = (0.5 * self.turn_rate + 0.5 * raw).clamp(-MAX_TURN_RATE, MAX_TURN_RATE);
            }
        }
        self.heading_ref = Some((heading, self.elapsed));
        self.elapsed = 0.0;
    }

    pub fn most_likely_mode(&self) -> usize {
        self.mode_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Kalman update of a whole bank with one radar return.
pub fn kalman_update(imm: &mut Imm, meas: &RadarMeasurement, node: [f64; 3]) {
    imm.update(&observations(meas, node));
}

#[derive(Debug, Clone, PartialEq)]
enum TrackPhase {
    /// No radar return yet.
    Empty,
    /// One fix; waiting for a second to difference.
    Pending { z: Vector3<f64>, r: Matrix3<f64>, time: f64 },
    Running { filter: Imm, classifier: Imm },
}

/// The coordinator's running estimate of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    /// Association identity (the radar side associates by ground truth).
    pub target_key: usize,
    phase: TrackPhase,
    /// `(step, motion state)` labels at steps with radar updates.
    pub motion_history: Vec<(u32, usize)>,
    /// `(step, signal type)` from associated passive detections.
    pub signal_history: Vec<(u32, usize)>,
    /// Steps with at least one radar return.
    pub radar_steps: usize,
    pub class_assignment: Option<usize>,
    pub last_update: f64,
}

impl BearingCandidate for Track {
    fn candidate_id(&self) -> usize {
        self.id
    }

    fn position_estimate(&self) -> [f64; 3] {
        self.position().unwrap_or([0.0; 3])
    }
}

/// Estimated parameter set of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedParams {
    pub motion_transition: MarkovChain,
    pub motion_stationary: StateDistribution,
    pub signal_transition: MarkovChain,
    pub signal_stationary: StateDistribution,
    /// Transition counts out of each motion state.
    pub motion_row_counts: Vec<f64>,
    pub signal_row_counts: Vec<f64>,
    pub motion_samples: usize,
    pub signal_samples: usize,
}

/// Transition counts over the runs of consecutive steps in a history.
pub fn history_counts(history: &[(u32, usize)], num_states: usize) -> TransitionCounts {
    let mut counts = TransitionCounts::new(num_states);
    let mut start = 0;
    for i in 1..=history.len() {
        let broken = i == history.len() || history[i].0 != history[i - 1].0 + 1;
        if broken {
            let run: Vec<usize> = history[start..i].iter().map(|h| h.1).collect();
            counts
                .add_sequence(&run)
                .expect("history states are within the family");
            start = i;
        }
    }
    counts
}

impl Track {
    pub fn new(id: usize, target_key: usize) -> Self {
        Self {
            id,
            target_key,
            phase: TrackPhase::Empty,
            motion_history: Vec::new(),
            signal_history: Vec::new(),
            radar_steps: 0,
            class_assignment: None,
            last_update: 0.0,
        }
    }

    /// Whether the two-point initialisation has completed.
    pub fn is_running(&self) -> bool {
        matches!(self.phase, TrackPhase::Running { .. })
    }

    pub fn filter(&self) -> Option<&Imm> {
        match &self.phase {
            TrackPhase::Running { filter, .. } => Some(filter),
            _ => None,
        }
    }

    pub fn classifier(&self) -> Option<&Imm> {
        match &self.phase {
            TrackPhase::Running { classifier, .. } => Some(classifier),
            _ => None,
        }
    }

    pub fn state(&self) -> Option<(StateVec, StateCov)> {
        self.filter().map(Imm::estimate)
    }

    /// Current position estimate (the pending fix before initialisation).
    pub fn position(&self) -> Option<[f64; 3]> {
        match &self.phase {
            TrackPhase::Empty => None,
            TrackPhase::Pending { z, .. } => Some([z[0], z[1], z[2]]),
            TrackPhase::Running { filter, .. } => {
                let (x, _) = filter.estimate();
                Some([x[0], x[1], x[2]])
            }
        }
    }

    pub fn predict(&mut self, dt: f64) {
        if let TrackPhase::Running { filter, classifier } = &mut self.phase {
            filter.predict(dt);
            classifier.predict(dt);
        }
    }

    pub fn retune(&mut self, tuning: FilterTuning) {
        if let TrackPhase::Running { filter, .. } = &mut self.phase {
            if filter.tuning() != &tuning {
                filter.retune(tuning);
            }
        }
    }

    /// Feeds one step's radar returns. The first two steps initialise the track
    /// by two-point differencing; later steps update both banks and append the
    /// inferred motion state to the history.
    pub fn apply_radar(
        &mut self,
        returns: &[(RadarMeasurement, [f64; 3])],
        step: u32,
        time: f64,
        tracking: &FilterTuning,
        classifier: &FilterTuning,
    ) {
        if returns.is_empty() {
            return;
        }
        self.radar_steps += 1;
        self.last_update = time;
        match &mut self.phase {
            TrackPhase::Empty | TrackPhase::Pending { .. } => {
                let fixes: Vec<_> = returns.iter().map(|(m, n)| convert_position(m, *n)).collect();
                let Some((z, r)) = fuse_positions(&fixes) else {
                    return;
                };
                match &self.phase {
                    TrackPhase::Pending { z: z1, r: r1, time: t1 } if time > *t1 => {
                        let dt = time - t1;
                        let mut x = StateVec::zeros();
                        let mut p = StateCov::zeros();
                        for i in 0..3 {
                            x[i] = z[i];
                            x[i + 3] = (z[i] - z1[i]) / dt;
                        }
                        for i in 0..3 {
                            for j in 0..3 {
                                p[(i, j)] = r[(i, j)];
                                p[(i, j + 3)] = r[(i, j)] / dt;
                                p[(i + 3, j)] = r[(i, j)] / dt;
                                p[(i + 3, j + 3)] = (r[(i, j)] + r1[(i, j)]) / (dt * dt);
                            }
                        }
                        let mut filter = Imm::new(tracking.clone(), x, p);
                        let mut cls = Imm::new(classifier.clone(), x, p);
                        // Radial velocities were not used by the differencing.
                        let radial: Vec<Observation> = step_observations(returns)
                            .into_iter()
                            .filter(|o| matches!(o, Observation::Radial { .. }))
                            .collect();
                        filter.update(&radial);
                        cls.update(&radial);
                        self.phase = TrackPhase::Running {
                            filter,
                            classifier: cls,
                        };
                    }
                    _ => self.phase = TrackPhase::Pending { z, r, time },
                }
            }
            TrackPhase::Running { filter, classifier } => {
                let obs = step_observations(returns);
                filter.update(&obs);
                classifier.update(&obs);
                if let Ok(state) = self.infer_motion_state() {
                    self.motion_history.push((step, state));
                }
            }
        }
    }

    /// Most probable motion model of the classifier bank.
    pub fn infer_motion_state(&self) -> Result<usize, TrackingError> {
        match &self.phase {
            TrackPhase::Running { classifier, .. } if classifier.updates() >= 2 => {
                Ok(classifier.most_likely_mode())
            }
            TrackPhase::Running { classifier, .. } => {
                Err(TrackingError::InsufficientHistory(classifier.updates()))
            }
            _ => Err(TrackingError::InsufficientHistory(0)),
        }
    }

    /// Records the signal type heard this step (first report per step wins).
    /// Records the step's signal type; only the first per step counts.
    /// Returns whether it was recorded.
    pub fn record_signal(&mut self, step: u32, signal: usize) -> bool {
        let fresh = self.signal_history.last().map(|h| h.0) != Some(step);
        if fresh {
            self.signal_history.push((step, signal));
        }
        fresh
    }

    pub fn estimated_params(&self, v: usize, s: usize, smoothing: f64) -> EstimatedParams {
        let motion_states: Vec<usize> = self.motion_history.iter().map(|h| h.1).collect();
        let signal_states: Vec<usize> = self.signal_history.iter().map(|h| h.1).collect();
        let mc = history_counts(&self.motion_history, v);
        let sc = history_counts(&self.signal_history, s);
        EstimatedParams {
            motion_transition: mc.to_chain(smoothing),
            motion_stationary: StateDistribution::occupancy(&motion_states, v),
            signal_transition: sc.to_chain(smoothing),
            signal_stationary: StateDistribution::occupancy(&signal_states, s),
            motion_row_counts: (0..v).map(|i| mc.row_total(i)).collect(),
            signal_row_counts: (0..s).map(|i| sc.row_total(i)).collect(),
            motion_samples: motion_states.len(),
            signal_samples: signal_states.len(),
        }
    }
}

/// Root-mean-square 3D position error over aligned samples.
pub fn track_rmse(estimate: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<f64, TrackingError> {
    if estimate.len() != truth.len() {
        return Err(TrackingError::LengthMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (0..3).map(|i| (e[i] - t[i]).powi(2)).sum::<f64>())
        .sum();
    Ok((sse / estimate.len() as f64).sqrt())
}
