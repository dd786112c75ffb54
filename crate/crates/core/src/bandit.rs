//! Per-node mode control.
//!
//! Each node runs its own two-armed UCB bandit over {Active, Passive}. The
//! reward for an arm is the mean normalized entropy of the corresponding
//! parameter distribution (motion for radar, signal for spectrum sensing) over
//! the targets the node covers: the more uncertain a behaviour, the more an
//! observation of it is worth.
//!
//! Selection maximises `mean + c * sqrt(ln t / N)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::normalized_entropy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("reward {0} is outside [0, 1]")]
    OutOfRangeReward(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeMode {
    Active,
    Passive,
}

impl NodeMode {
    pub const ALL: [NodeMode; 2] = [NodeMode::Active, NodeMode::Passive];

    pub fn index(self) -> usize {
        match self {
            NodeMode::Active => 0,
            NodeMode::Passive => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    counts: [u64; 2],
    means: [f64; 2],
    total_steps: u64,
    exploration: f64,
}

impl Default for BanditState {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl BanditState {
    pub fn new(exploration: f64) -> Self {
        assert!(exploration >= 0.0, "exploration constant must be non-negative");
        Self {
            counts: [0; 2],
            means: [0.0; 2],
            total_steps: 0,
            exploration,
        }
    }

    pub fn count(&self, mode: NodeMode) -> u64 {
        self.counts[mode.index()]
    }

    pub fn mean(&self, mode: NodeMode) -> f64 {
        self.means[mode.index()]
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Index of an arm; `None` means the arm is unplayed (infinite bonus).
    pub fn index(&self, mode: NodeMode, t: u64) -> Option<f64> {
        let n = self.counts[mode.index()];
        (n > 0).then(|| {
            self.means[mode.index()] + self.exploration * ((t as f64).ln() / n as f64).sqrt()
        })
    }

    /// Unplayed arms first; otherwise the larger index. Ties go to Active.
    pub fn ucb_select(&self, t: u64) -> NodeMode {
        assert!(t >= 1, "steps are 1-based");
        match (self.index(NodeMode::Active, t), self.index(NodeMode::Passive, t)) {
            (None, _) => NodeMode::Active,
            (_, None) => NodeMode::Passive,
            (Some(a), Some(p)) => {
                if p > a {
                    NodeMode::Passive
                } else {
                    NodeMode::Active
                }
            }
        }
    }

    /// Running-mean update of the played arm.
    pub fn record_reward(&mut self, mode: NodeMode, value: f64) -> Result<(), BanditError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(BanditError::OutOfRangeReward(value));
        }
        let i = mode.index();
        self.counts[i] += 1;
        self.means[i] += (value - self.means[i]) / self.counts[i] as f64;
        self.total_steps += 1;
        Ok(())
    }
}

/// What the coordinator believes about one covered target's behaviour.
/// `None` means too little evidence, which counts as maximum uncertainty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetBelief {
    pub motion: Option<Vec<f64>>,
    pub signal: Option<Vec<f64>>,
}

/// `(reward_active, reward_passive)`: mean normalized entropy of the motion
/// and signal beliefs over the covered targets; `(0, 0)` with no coverage.
pub fn compute_rewards(covered: &[TargetBelief]) -> (f64, f64) {
    if covered.is_empty() {
        return (0.0, 0.0);
    }
    let eta = |d: &Option<Vec<f64>>| d.as_deref().map_or(1.0, normalized_entropy);
    let m = covered.len() as f64;
    let active = covered.iter().map(|b| eta(&b.motion)).sum::<f64>() / m;
    let passive = covered.iter().map(|b| eta(&b.signal)).sum::<f64>() / m;
    (active.clamp(0.0, 1.0), passive.clamp(0.0, 1.0))
}

/// Mode-selection policy for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Bandit,
    RadarOnly,
    /// Active with probability `p`.
    Random(f64),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Bandit => "bandit",
            Policy::RadarOnly => "radar-only",
            Policy::Random(_) => "random",
        }
    }

    /// Only the bandit policy exploits learned target classes.
    pub fn uses_classes(&self) -> bool {
        matches!(self, Policy::Bandit)
    }
}

/// Non-learning baselines. `Policy::Bandit` is not a baseline and panics.
pub fn baseline_policy<R: Rng + ?Sized>(policy: Policy, rng: &mut R) -> NodeMode {
    match policy {
        Policy::RadarOnly => NodeMode::Active,
        Policy::Random(p) => {
            assert!((0.0..=1.0).contains(&p), "probability must lie in [0, 1]");
            if rng.random::<f64>() < p {
                NodeMode::Active
            } else {
                NodeMode::Passive
            }
        }
        Policy::Bandit => panic!("the bandit policy needs bandit state"),
    }
}
