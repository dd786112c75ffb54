//! Ground-truth target propagation under the Markov motion model, plus the
//! signal-type and transmit on/off chains.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::{Target, TargetClass, TargetFamily, TX_OFF, TX_ON};

/// Vertical acceleration noise is this fraction of the horizontal noise.
pub const VERTICAL_NOISE_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionKind {
    CruiseCV,
    CoordinatedTurn,
    HighGManeuver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionStateSpec {
    pub kind: MotionKind,
    /// Reference acceleration noise for this state (m/s²).
    pub accel_std: f64,
    /// Turn-rate magnitude bounds (rad/s); only used by coordinated turns.
    pub turn_rate_range: (f64, f64),
}

impl MotionStateSpec {
    /// Magnitude uniform in `turn_rate_range`, sign uniform.
    pub fn draw_turn_rate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.turn_rate_range;
        let mag = lo + rng.random::<f64>() * (hi - lo);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    }
}

/// Rotates the horizontal components of `v` by `angle` radians.
pub fn rotate_horizontal(v: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Advances one time step: resample the motion state, then move the target.
pub fn step_motion<R: Rng + ?Sized>(
    target: &mut Target,
    class: &TargetClass,
    family: &TargetFamily,
    dt: f64,
    rng: &mut R,
) {
    assert!(dt > 0.0, "time step must be positive");
    let previous = target.motion_state;
    target.motion_state = class.motion_chain.sample_next(previous, rng);
    let spec = &family.motion_states()[target.motion_state];
    if spec.kind == MotionKind::CoordinatedTurn && previous != target.motion_state {
        target.turn_rate = spec.draw_turn_rate(rng);
    }
    let sigma = class.process_noise[target.motion_state];
    advance_kinematics(target, spec.kind, sigma, dt, rng);
    clamp_speed(&mut target.velocity, class.speed_range);
}

/// Kinematic update for one motion kind with white acceleration noise `sigma`.
pub fn advance_kinematics<R: Rng + ?Sized>(
    target: &mut Target,
    kind: MotionKind,
    sigma: f64,
    dt: f64,
    rng: &mut R,
) {
    let mut accel = [0.0; 3];
    if sigma > 0.0 {
        for (i, a) in accel.iter_mut().enumerate() {
            let n: f64 = StandardNormal.sample(rng);
            let scale = if i == 2 { sigma * VERTICAL_NOISE_RATIO } else { sigma };
            *a = n * scale;
        }
    }
    let v = target.velocity;
    match kind {
        MotionKind::CruiseCV | MotionKind::HighGManeuver => {
            for i in 0..3 {
                target.position[i] += v[i] * dt + 0.5 * accel[i] * dt * dt;
                target.velocity[i] = v[i] + accel[i] * dt;
            }
        }
        MotionKind::CoordinatedTurn => {
            let w = target.turn_rate;
            let (dx, dy) = if w.abs() < 1e-9 {
                (v[0] * dt, v[1] * dt)
            } else {
                let (s, c) = (w * dt).sin_cos();
                (
                    (s * v[0] - (1.0 - c) * v[1]) / w,
                    ((1.0 - c) * v[0] + s * v[1]) / w,
                )
            };
            let rotated = rotate_horizontal(v, w * dt);
            target.position[0] += dx + 0.5 * accel[0] * dt * dt;
            target.position[1] += dy + 0.5 * accel[1] * dt * dt;
            target.position[2] += v[2] * dt + 0.5 * accel[2] * dt * dt;
            for i in 0..3 {
                target.velocity[i] = rotated[i] + accel[i] * dt;
            }
        }
    }
}

fn clamp_speed(v: &mut [f64; 3], (lo, hi): (f64, f64)) {
    let speed = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = speed.clamp(lo, hi);
    if speed > 0.0 && target != speed {
        let k = target / speed;
        v.iter_mut().for_each(|x| *x *= k);
    }
}

/// Resamples transmit activity and the emitted signal type, independently of
/// motion.
pub fn step_signal<R: Rng + ?Sized>(target: &mut Target, class: &TargetClass, rng: &mut R) {
    let tx_state = if target.tx_on { TX_ON } else { TX_OFF };
    target.tx_on = class.tx_chain.sample_next(tx_state, rng) == TX_ON;
    target.signal_state = class.signal_chain.sample_next(target.signal_state, rng);
}
