//! Experiment configuration.

use serde::{Deserialize, Serialize};

use crate::bandit::Policy;
use crate::classes::{DEFAULT_ACCEPT_RADIUS, DEFAULT_K_MAX};
use crate::scenario::{Region, ScenarioConfig};
use crate::sensing::{RadarNoise, ReceiverParams, SensingParams};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Bandit,
    RadarOnly,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Probability of radar for the random policy.
    #[serde(default = "default_random_p")]
    pub p: f64,
}

fn default_random_p() -> f64 {
    0.8
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Bandit,
            p: default_random_p(),
        }
    }
}

impl PolicyConfig {
    pub fn policy(&self) -> Policy {
        match self.kind {
            PolicyKind::Bandit => Policy::Bandit,
            PolicyKind::RadarOnly => Policy::RadarOnly,
            PolicyKind::Random => Policy::Random(self.p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub radar_range_km: f64,
    pub radar_noise: RadarNoise,
    pub receiver: ReceiverParams,
    pub tx_gain: f64,
    pub doa_std_rad: f64,
    pub gate_rad: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        let p = SensingParams::default();
        Self {
            radar_range_km: 4.0,
            radar_noise: p.radar_noise,
            receiver: ReceiverParams::default(),
            tx_gain: p.tx_gain,
            doa_std_rad: p.doa_std_rad,
            gate_rad: p.gate_rad,
        }
    }
}

impl SensingConfig {
    pub fn params(&self) -> SensingParams {
        SensingParams {
            radar_noise: self.radar_noise.clone(),
            tx_gain: self.tx_gain,
            doa_std_rad: self.doa_std_rad,
            gate_rad: self.gate_rad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// Self-transition probability of the motion classifier bank.
    pub classifier_stickiness: f64,
    /// Radar update steps a track needs before its estimates are harvested
    /// or used for class assignment.
    pub min_radar_observations: usize,
    /// Signal observations needed for the same.
    pub min_passive_detections: usize,
    /// Node votes the winning signal type of a step needs before it is
    /// recorded on a track; filters out stray bearings.
    pub min_signal_votes: usize,
    /// The same threshold as a fraction of the nodes listening that step;
    /// the larger of the two applies.
    pub signal_vote_fraction: f64,
    /// Pseudo-count for the occupancy beliefs that feed the rewards.
    pub belief_smoothing: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            classifier_stickiness: 0.9,
            min_radar_observations: 5,
            min_passive_detections: 3,
            min_signal_votes: 2,
            signal_vote_fraction: 0.7,
            belief_smoothing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassConfig {
    pub k_max: usize,
    pub accept_radius: f64,
}

impl Default for ClassConfig {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            accept_radius: DEFAULT_ACCEPT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub exploration: f64,
    /// Observations below which a belief counts as maximally uncertain.
    pub min_belief_observations: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            exploration: 1.0,
            min_belief_observations: 3,
        }
    }
}

/// Everything needed to run an experiment. Defaults reproduce the reference
/// setup: 0.2 nodes/km², 0.3 targets/km², a 10 km x 10 km region, 15 epochs of
/// 25 s at 0.5 s steps, averaged over 30 runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub node_density: f64,
    pub target_density: f64,
    pub region_km: [f64; 2],
    pub num_epochs: usize,
    pub epoch_duration_s: f64,
    pub dt_s: f64,
    pub num_runs: usize,
    pub policy: PolicyConfig,
    pub seed: u64,
    /// Run all three policies on paired seeds instead of only `policy`.
    #[serde(default = "default_true")]
    pub compare_policies: bool,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub tracking: TrackingConfig,
    #[serde(default)]
    pub classes: ClassConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
}

fn default_true() -> bool {
    true
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            node_density: 0.2,
            target_density: 0.3,
            region_km: [10.0, 10.0],
            num_epochs: 15,
            epoch_duration_s: 25.0,
            dt_s: 0.5,
            num_runs: 30,
            policy: PolicyConfig::default(),
            seed: 1,
            compare_policies: true,
            sensing: SensingConfig::default(),
            tracking: TrackingConfig::default(),
            classes: ClassConfig::default(),
            bandit: BanditConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        let positive = |name: &str, x: f64| -> Result<(), SimError> {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} must be positive, got {x}")))
            }
        };
        for (name, x) in [("node_density", self.node_density), ("target_density", self.target_density)] {
            if !(x.is_finite() && x >= 0.0) {
                return fail(format!("{name} must be non-negative, got {x}"));
            }
        }
        positive("region_km[0]", self.region_km[0])?;
        positive("region_km[1]", self.region_km[1])?;
        positive("epoch_duration_s", self.epoch_duration_s)?;
        positive("dt_s", self.dt_s)?;
        if self.num_epochs < 1 {
            return fail("num_epochs must be at least 1".into());
        }
        if self.num_runs < 1 {
            return fail("num_runs must be at least 1".into());
        }
        let steps = self.epoch_duration_s / self.dt_s;
        if (steps - steps.round()).abs() * self.dt_s > 1e-9 || steps.round() < 1.0 {
            return fail(format!(
                "dt_s = {} must divide epoch_duration_s = {}",
                self.dt_s, self.epoch_duration_s
            ));
        }
        if !(0.0..=1.0).contains(&self.policy.p) {
            return fail(format!("policy.p must lie in [0, 1], got {}", self.policy.p));
        }
        positive("sensing.radar_range_km", self.sensing.radar_range_km)?;
        positive("sensing.gate_rad", self.sensing.gate_rad)?;
        positive("sensing.tx_gain", self.sensing.tx_gain)?;
        let rx = &self.sensing.receiver;
        for (name, x) in [
            ("sensing.receiver.noise_figure", rx.noise_figure),
            ("sensing.receiver.bandwidth_hz", rx.bandwidth_hz),
            ("sensing.receiver.rx_gain", rx.rx_gain),
            ("sensing.receiver.losses", rx.losses),
            ("sensing.receiver.wavelength_m", rx.wavelength_m),
        ] {
            positive(name, x)?;
        }
        let n = &self.sensing.radar_noise;
        for (name, x) in [
            ("sensing.radar_noise.range_m", n.range_m),
            ("sensing.radar_noise.azimuth_rad", n.azimuth_rad),
            ("sensing.radar_noise.elevation_rad", n.elevation_rad),
            ("sensing.radar_noise.radial_velocity_mps", n.radial_velocity_mps),
            ("sensing.radar_noise.angular_velocity_radps", n.angular_velocity_radps),
            ("sensing.doa_std_rad", self.sensing.doa_std_rad),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return fail(format!("{name} must be non-negative, got {x}"));
            }
        }
        if !(0.0..1.0).contains(&self.tracking.classifier_stickiness) {
            return fail("tracking.classifier_stickiness must lie in [0, 1)".into());
        }
        if self.tracking.min_signal_votes < 1 {
            return fail("tracking.min_signal_votes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tracking.signal_vote_fraction) {
            return fail("tracking.signal_vote_fraction must lie in [0, 1]".into());
        }
        if !(self.tracking.belief_smoothing >= 0.0) {
            return fail("tracking.belief_smoothing must be non-negative".into());
        }
        if self.classes.k_max < 1 {
            return fail("classes.k_max must be at least 1".into());
        }
        if !(self.classes.accept_radius >= 0.0) {
            return fail("classes.accept_radius must be non-negative".into());
        }
        if !(self.bandit.exploration >= 0.0) {
            return fail("bandit.exploration must be non-negative".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.epoch_duration_s / self.dt_s).round() as usize
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig, SimError> {
        Ok(ScenarioConfig {
            node_density: self.node_density,
            target_density: self.target_density,
            region: Region::new(self.region_km[0], self.region_km[1])
                .map_err(|e| SimError::InvalidConfig(e.to_string()))?,
            radar_range_km: self.sensing.radar_range_km,
            receiver: self.sensing.receiver.clone(),
        })
    }

    /// Policies to simulate, in output order.
    pub fn policies(&self) -> Vec<Policy> {
        if self.compare_policies {
            vec![Policy::Bandit, Policy::RadarOnly, Policy::Random(self.policy.p)]
        } else {
            vec![self.policy.policy()]
        }
    }
}
