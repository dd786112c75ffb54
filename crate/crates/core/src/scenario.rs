//! Scenario generation: region geometry, Poisson point process placement of
//! nodes and targets, and the ground-truth target family.
//!
//! A family is a set of classes sharing the same parameter structure (the same
//! motion and signal state spaces) whose parameter distributions are pairwise
//! distinguishable, so that a good parameter estimate identifies one class.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{MotionKind, MotionStateSpec};
use crate::markov::{total_variation, MarkovChain, MarkovError, StateDistribution};
use crate::sensing::ReceiverParams;

/// Index of the "On" state in every transmit on/off chain.
pub const TX_ON: usize = 0;
/// Index of the "Off" state in every transmit on/off chain.
pub const TX_OFF: usize = 1;

/// Minimum total-variation distance that must separate two classes on at
/// least one parameter distribution.
pub const DEFAULT_FAMILY_SEPARATION: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario drew {nodes} nodes and {targets} targets; both must be non-zero")]
    DegenerateScenario { nodes: usize, targets: usize },
    #[error("invalid target family: {0}")]
    InvalidFamily(String),
    #[error("invalid region {width_km} x {height_km} km")]
    InvalidRegion { width_km: f64, height_km: f64 },
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Axis-aligned rectangle `[0, width] x [0, height]` in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub width_km: f64,
    pub height_km: f64,
}

impl Region {
    pub fn new(width_km: f64, height_km: f64) -> Result<Self, ScenarioError> {
        if !(width_km > 0.0 && height_km > 0.0) {
            return Err(ScenarioError::InvalidRegion {
                width_km,
                height_km,
            });
        }
        Ok(Self {
            width_km,
            height_km,
        })
    }

    pub fn area_km2(&self) -> f64 {
        self.width_km * self.height_km
    }

    /// Whether a horizontal position in metres lies inside the region.
    pub fn contains(&self, x_m: f64, y_m: f64) -> bool {
        (0.0..=self.width_km * 1e3).contains(&x_m) && (0.0..=self.height_km * 1e3).contains(&y_m)
    }
}

impl Default for Region {
    fn default() -> Self {
        Self {
            width_km: 10.0,
            height_km: 10.0,
        }
    }
}

/// Ground-truth generative description of one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetClass {
    pub id: usize,
    pub name: String,
    pub motion_chain: MarkovChain,
    pub signal_chain: MarkovChain,
    /// On/off chain; state [`TX_ON`] is "transmitting".
    pub tx_chain: MarkovChain,
    pub transmit_power_w: f64,
    /// Acceleration standard deviation per motion state (m/s²).
    pub process_noise: Vec<f64>,
    pub speed_range: (f64, f64),
    pub altitude_range: (f64, f64),
}

impl TargetClass {
    pub fn motion_stationary(&self) -> StateDistribution {
        self.motion_chain
            .stationary_distribution()
            .expect("family classes have unique stationary distributions")
    }

    pub fn signal_stationary(&self) -> StateDistribution {
        self.signal_chain
            .stationary_distribution()
            .expect("family classes have unique stationary distributions")
    }

    pub fn tx_stationary(&self) -> StateDistribution {
        self.tx_chain
            .stationary_distribution()
            .expect("family classes have unique stationary distributions")
    }

    fn validate(&self, v: usize, s: usize) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidFamily(format!("{}: {msg}", self.name)));
        if self.motion_chain.num_states() != v {
            return bad(format!("motion chain has {} states, family has {v}", self.motion_chain.num_states()));
        }
        if self.signal_chain.num_states() != s {
            return bad(format!("signal chain has {} states, family has {s}", self.signal_chain.num_states()));
        }
        if self.tx_chain.num_states() != 2 {
            return bad("tx chain must have exactly On/Off states".into());
        }
        if !(self.transmit_power_w > 0.0) {
            return bad("transmit power must be positive".into());
        }
        if self.process_noise.len() != v || self.process_noise.iter().any(|&q| !(q >= 0.0)) {
            return bad("need one non-negative process noise per motion state".into());
        }
        if !(self.speed_range.0 >= 0.0 && self.speed_range.0 <= self.speed_range.1) {
            return bad("speed range must satisfy 0 <= min <= max".into());
        }
        if self.altitude_range.0 > self.altitude_range.1 {
            return bad("altitude range must satisfy min <= max".into());
        }
        for chain in [&self.motion_chain, &self.signal_chain, &self.tx_chain] {
            chain.stationary_distribution()?;
        }
        Ok(())
    }

    /// Largest total-variation distance to `other` over the motion, signal
    /// and transmit stationary distributions.
    pub fn separation_from(&self, other: &TargetClass) -> f64 {
        [
            total_variation(self.motion_stationary().probs(), other.motion_stationary().probs()),
            total_variation(self.signal_stationary().probs(), other.signal_stationary().probs()),
            total_variation(self.tx_stationary().probs(), other.tx_stationary().probs()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// A set of classes over common motion and signal state spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFamily {
    classes: Vec<TargetClass>,
    motion_states: Vec<MotionStateSpec>,
    signal_labels: Vec<String>,
    separation: f64,
}

impl TargetFamily {
    pub fn new(
        classes: Vec<TargetClass>,
        motion_states: Vec<MotionStateSpec>,
        signal_labels: Vec<String>,
        separation: f64,
    ) -> Result<Self, ScenarioError> {
        if classes.is_empty() {
            return Err(ScenarioError::InvalidFamily("no classes".into()));
        }
        let (v, s) = (motion_states.len(), signal_labels.len());
        for (i, c) in classes.iter().enumerate() {
            if c.id != i {
                return Err(ScenarioError::InvalidFamily(format!(
                    "class ids must be 0..n in order, found {} at {i}",
                    c.id
                )));
            }
            c.validate(v, s)?;
        }
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[i + 1..] {
                let d = a.separation_from(b);
                if d <= separation {
                    return Err(ScenarioError::InvalidFamily(format!(
                        "classes {} and {} are separated by only {d:.3} (need > {separation})",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(Self {
            classes,
            motion_states,
            signal_labels,
            separation,
        })
    }

    pub fn classes(&self) -> &[TargetClass] {
        &self.classes
    }

    pub fn class(&self, id: usize) -> &TargetClass {
        &self.classes[id]
    }

    pub fn motion_states(&self) -> &[MotionStateSpec] {
        &self.motion_states
    }

    pub fn signal_labels(&self) -> &[String] {
        &self.signal_labels
    }

    pub fn motion_state_count(&self) -> usize {
        self.motion_states.len()
    }

    pub fn signal_state_count(&self) -> usize {
        self.signal_labels.len()
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// Class whose stationary distributions are nearest (summed total
    /// variation) to the given motion and signal distributions.
    pub fn nearest_class(&self, motion: &[f64], signal: &[f64]) -> usize {
        self.classes
            .iter()
            .map(|c| {
                total_variation(c.motion_stationary().probs(), motion)
                    + total_variation(c.signal_stationary().probs(), signal)
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// A target in flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: usize,
    pub class_id: usize,
    /// `[x, y, z]` in metres.
    pub position: [f64; 3],
    /// `[vx, vy, vz]` in m/s.
    pub velocity: [f64; 3],
    /// Turn rate while in a coordinated turn (rad/s).
    pub turn_rate: f64,
    pub motion_state: usize,
    pub signal_state: usize,
    pub tx_on: bool,
}

/// A ground-based multi-mode sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    /// `[x, y, 0]` in metres.
    pub position: [f64; 3],
    pub radar_range_km: f64,
    pub receiver: ReceiverParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub node_density: f64,
    pub target_density: f64,
    pub region: Region,
    pub radar_range_km: f64,
    pub receiver: ReceiverParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            node_density: 0.2,
            target_density: 0.3,
            region: Region::default(),
            radar_range_km: 4.0,
            receiver: ReceiverParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<Node>,
    pub targets: Vec<Target>,
}

/// Homogeneous Poisson point process over `region`; points in metres.
pub fn sample_ppp<R: Rng + ?Sized>(density_per_km2: f64, region: &Region, rng: &mut R) -> Vec<[f64; 2]> {
    assert!(density_per_km2 >= 0.0, "density must be non-negative");
    let mean = density_per_km2 * region.area_km2();
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng) as usize;
    let (w, h) = (region.width_km * 1e3, region.height_km * 1e3);
    (0..count)
        .map(|_| [rng.random::<f64>() * w, rng.random::<f64>() * h])
        .collect()
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn chain(rows: [&[f64]; 4], names: &[&str]) -> MarkovChain {
    MarkovChain::new(rows.iter().map(|r| r.to_vec()).collect(), labels(names))
        .expect("default chains are row-stochastic")
}

fn chain3(rows: [[f64; 3]; 3], names: &[&str]) -> MarkovChain {
    MarkovChain::new(rows.iter().map(|r| r.to_vec()).collect(), labels(names))
        .expect("default chains are row-stochastic")
}

fn tx(on_on: f64, off_on: f64) -> MarkovChain {
    MarkovChain::new(
        vec![vec![on_on, 1.0 - on_on], vec![off_on, 1.0 - off_on]],
        labels(&["On", "Off"]),
    )
    .expect("default chains are row-stochastic")
}

pub const MOTION_LABELS: [&str; 3] = ["CruiseCV", "CoordinatedTurn", "HighGManeuver"];
pub const SIGNAL_LABELS: [&str; 4] = ["UAVControl", "Telemetry", "ADSB", "FMVoice"];

/// Reference motion states shared by the default family.
pub fn default_motion_states() -> Vec<MotionStateSpec> {
    vec![
        MotionStateSpec {
            kind: MotionKind::CruiseCV,
            accel_std: 0.1,
            turn_rate_range: (0.0, 0.0),
        },
        MotionStateSpec {
            kind: MotionKind::CoordinatedTurn,
            accel_std: 1.0,
            turn_rate_range: (0.02, 0.1),
        },
        MotionStateSpec {
            kind: MotionKind::HighGManeuver,
            accel_std: 8.0,
            turn_rate_range: (0.0, 0.0),
        },
    ]
}

/// Three example classes: a dynamic mid-altitude UAV emitting control and
/// telemetry links, stable low-altitude general aviation emitting ADS-B and FM
/// voice, and a barely-manoeuvring balloon emitting telemetry only.
pub fn default_family() -> TargetFamily {
    let motion_states = default_motion_states();
    let noise: Vec<f64> = motion_states.iter().map(|m| m.accel_std).collect();
    let uav = TargetClass {
        id: 0,
        name: "UAV".into(),
        motion_chain: chain3(
            [[0.90, 0.05, 0.05], [0.10, 0.85, 0.05], [0.10, 0.05, 0.85]],
            &MOTION_LABELS,
        ),
        signal_chain: chain(
            [
                &[0.8, 0.2, 0.0, 0.0],
                &[0.3, 0.7, 0.0, 0.0],
                &[0.5, 0.5, 0.0, 0.0],
                &[0.5, 0.5, 0.0, 0.0],
            ],
            &SIGNAL_LABELS,
        ),
        tx_chain: tx(0.9, 0.3),
        transmit_power_w: 0.1,
        process_noise: noise.clone(),
        speed_range: (8.0, 30.0),
        altitude_range: (800.0, 2000.0),
    };
    let general_aviation = TargetClass {
        id: 1,
        name: "GeneralAviation".into(),
        motion_chain: chain3(
            [[0.95, 0.05, 0.0], [0.15, 0.85, 0.0], [0.5, 0.5, 0.0]],
            &MOTION_LABELS,
        ),
        signal_chain: chain(
            [
                &[0.0, 0.0, 0.5, 0.5],
                &[0.0, 0.0, 0.5, 0.5],
                &[0.0, 0.0, 0.85, 0.15],
                &[0.0, 0.0, 0.35, 0.65],
            ],
            &SIGNAL_LABELS,
        ),
        tx_chain: tx(0.95, 0.2),
        transmit_power_w: 10.0,
        process_noise: noise.clone(),
        speed_range: (40.0, 70.0),
        altitude_range: (300.0, 1000.0),
    };
    let balloon = TargetClass {
        id: 2,
        name: "Balloon".into(),
        motion_chain: chain3(
            [[0.98, 0.02, 0.0], [0.3, 0.7, 0.0], [0.5, 0.5, 0.0]],
            &MOTION_LABELS,
        ),
        signal_chain: chain(
            [
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
            ],
            &SIGNAL_LABELS,
        ),
        tx_chain: tx(0.8, 0.4),
        transmit_power_w: 1.0,
        process_noise: noise,
        speed_range: (1.0, 8.0),
        altitude_range: (2000.0, 4000.0),
    };
    TargetFamily::new(
        vec![uav, general_aviation, balloon],
        motion_states,
        labels(&SIGNAL_LABELS),
        DEFAULT_FAMILY_SEPARATION,
    )
    .expect("default family satisfies the family invariants")
}

/// Spawns one target of `class` at horizontal position `xy`.
pub fn spawn_target<R: Rng + ?Sized>(
    id: usize,
    class: &TargetClass,
    family: &TargetFamily,
    xy: [f64; 2],
    rng: &mut R,
) -> Target {
    let motion_state = MarkovChain::sample_from(&class.motion_stationary(), rng);
    let signal_state = MarkovChain::sample_from(&class.signal_stationary(), rng);
    let tx_on = MarkovChain::sample_from(&class.tx_stationary(), rng) == TX_ON;
    let (amin, amax) = class.altitude_range;
    let z = amin + rng.random::<f64>() * (amax - amin);
    let (smin, smax) = class.speed_range;
    let speed = smin + rng.random::<f64>() * (smax - smin);
    let heading = rng.random::<f64>() * 2.0 * PI;
    let spec = &family.motion_states()[motion_state];
    let turn_rate = if spec.kind == MotionKind::CoordinatedTurn {
        spec.draw_turn_rate(rng)
    } else {
        0.0
    };
    Target {
        id,
        class_id: class.id,
        position: [xy[0], xy[1], z],
        velocity: [speed * heading.cos(), speed * heading.sin(), 0.0],
        turn_rate,
        motion_state,
        signal_state,
        tx_on,
    }
}

/// Places nodes and targets by independent Poisson processes and assigns each
/// target a class uniformly at random.
pub fn spawn_scenario<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    family: &TargetFamily,
    rng: &mut R,
) -> Result<Scenario, ScenarioError> {
    let node_xy = sample_ppp(config.node_density, &config.region, rng);
    let target_xy = sample_ppp(config.target_density, &config.region, rng);
    if node_xy.is_empty() || target_xy.is_empty() {
        return Err(ScenarioError::DegenerateScenario {
            nodes: node_xy.len(),
            targets: target_xy.len(),
        });
    }
    let nodes = node_xy
        .into_iter()
        .enumerate()
        .map(|(id, [x, y])| Node {
            id,
            position: [x, y, 0.0],
            radar_range_km: config.radar_range_km,
            receiver: config.receiver.clone(),
        })
        .collect();
    let n_classes = family.classes().len();
    let targets = target_xy
        .into_iter()
        .enumerate()
        .map(|(id, xy)| {
            let class = family.class(rng.random_range(0..n_classes));
            spawn_target(id, class, family, xy, rng)
        })
        .collect();
    Ok(Scenario { nodes, targets })
}
