//! Node observations: active radar measurements and passive spectrum-sensing
//! detections, plus direction-of-arrival association of detections to tracks.
//!
//! Passive detection is gated by the free-space link budget (an emitter is
//! *in range* while its instantaneous SNR is at least 0 dB), by the target's
//! transmit activity, and by the node being in passive mode. Detection inside
//! that gate is treated as certain and signal classes are never confused.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::NodeMode;
use crate::scenario::{Node, Target, TargetClass};

/// Boltzmann's constant (J/K).
pub const BOLTZMANN: f64 = 1.38065e-23;
/// Reference noise temperature (K).
pub const T0_KELVIN: f64 = 290.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("range must be positive, got {0} m")]
    ZeroRange(f64),
}

/// Passive receiver chain, all quantities linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverParams {
    pub noise_figure: f64,
    pub bandwidth_hz: f64,
    pub rx_gain: f64,
    pub losses: f64,
    pub wavelength_m: f64,
}

impl Default for ReceiverParams {
    fn default() -> Self {
        Self {
            noise_figure: 10.0,
            bandwidth_hz: 1e6,
            rx_gain: 1.0,
            losses: 2.0,
            wavelength_m: 0.3,
        }
    }
}

/// Radar measurement noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarNoise {
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub radial_velocity_mps: f64,
    pub angular_velocity_radps: f64,
}

impl Default for RadarNoise {
    fn default() -> Self {
        Self {
            range_m: 25.0,
            azimuth_rad: 1f64.to_radians(),
            elevation_rad: 1f64.to_radians(),
            radial_velocity_mps: 1.0,
            angular_velocity_radps: 0.5f64.to_radians(),
        }
    }
}

/// Everything a node needs to sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    pub radar_noise: RadarNoise,
    /// Transmit antenna gain of emitters (omnidirectional).
    pub tx_gain: f64,
    /// Direction-of-arrival error standard deviation (rad).
    pub doa_std_rad: f64,
    /// Association gate on bearing residual (rad).
    pub gate_rad: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            radar_noise: RadarNoise::default(),
            tx_gain: 1.0,
            doa_std_rad: 2f64.to_radians(),
            gate_rad: 6f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarMeasurement {
    pub node_id: usize,
    /// Ground-truth link, used for scoring and radar-side association.
    pub target_id: usize,
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub radial_velocity_mps: f64,
    pub angular_velocity_radps: f64,
    pub noise: RadarNoise,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveDetection {
    pub node_id: usize,
    pub signal_type: usize,
    pub bearing_rad: f64,
    pub timestamp: f64,
    /// Ground-truth link, used for scoring only.
    pub target_id: usize,
}

/// `k T0 F B`.
pub fn receiver_noise_power(rx: &ReceiverParams) -> f64 {
    BOLTZMANN * T0_KELVIN * rx.noise_figure * rx.bandwidth_hz
}

/// Free-space one-way SNR at the passive receiver (linear).
pub fn passive_snr(
    tx_power_w: f64,
    tx_gain: f64,
    rx: &ReceiverParams,
    range_m: f64,
) -> Result<f64, SensingError> {
    if !(range_m > 0.0) {
        return Err(SensingError::ZeroRange(range_m));
    }
    let spreading = (4.0 * PI * range_m).powi(2);
    Ok(tx_power_w * tx_gain * rx.rx_gain * rx.wavelength_m.powi(2)
        / (spreading * receiver_noise_power(rx) * rx.losses))
}

/// Range at which [`passive_snr`] falls to 0 dB.
///
/// ```
/// use crn_core::sensing::{max_detectable_range, ReceiverParams};
/// let r = max_detectable_range(1.0, 1.0, &ReceiverParams::default());
/// assert!((r / 1e3 - 84.4).abs() < 0.1);
/// ```
pub fn max_detectable_range(tx_power_w: f64, tx_gain: f64, rx: &ReceiverParams) -> f64 {
    assert!(tx_power_w > 0.0, "transmit power must be positive");
    rx.wavelength_m / (4.0 * PI)
        * (tx_power_w * tx_gain * rx.rx_gain / (receiver_noise_power(rx) * rx.losses)).sqrt()
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn horizontal_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Azimuth of `to` seen from `from`.
pub fn bearing(from: [f64; 3], to: [f64; 3]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

/// Exact polar view of a target from a node, no noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarView {
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub radial_velocity_mps: f64,
    pub angular_velocity_radps: f64,
}

pub fn polar_view(node_pos: [f64; 3], pos: [f64; 3], vel: [f64; 3]) -> PolarView {
    let d = sub(pos, node_pos);
    let range = norm(d);
    let horiz2 = d[0] * d[0] + d[1] * d[1];
    let radial = if range > 0.0 {
        (d[0] * vel[0] + d[1] * vel[1] + d[2] * vel[2]) / range
    } else {
        0.0
    };
    let angular = if horiz2 > 0.0 {
        (d[0] * vel[1] - d[1] * vel[0]) / horiz2
    } else {
        0.0
    };
    PolarView {
        range_m: range,
        azimuth_rad: d[1].atan2(d[0]),
        elevation_rad: d[2].atan2(horiz2.sqrt()),
        radial_velocity_mps: radial,
        angular_velocity_radps: angular,
    }
}

fn gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Active radar return for one node-target pair; `None` unless the node is
/// active and the target is within horizontal radar range.
pub fn radar_measure<R: Rng + ?Sized>(
    node: &Node,
    target: &Target,
    mode: NodeMode,
    noise: &RadarNoise,
    timestamp: f64,
    rng: &mut R,
) -> Option<RadarMeasurement> {
    if mode != NodeMode::Active
        || horizontal_distance(node.position, target.position) > node.radar_range_km * 1e3
    {
        return None;
    }
    let view = polar_view(node.position, target.position, target.velocity);
    Some(RadarMeasurement {
        node_id: node.id,
        target_id: target.id,
        range_m: (view.range_m + gaussian(noise.range_m, rng)).max(0.0),
        azimuth_rad: wrap_angle(view.azimuth_rad + gaussian(noise.azimuth_rad, rng)),
        elevation_rad: view.elevation_rad + gaussian(noise.elevation_rad, rng),
        radial_velocity_mps: view.radial_velocity_mps + gaussian(noise.radial_velocity_mps, rng),
        angular_velocity_radps: view.angular_velocity_radps
            + gaussian(noise.angular_velocity_radps, rng),
        noise: noise.clone(),
        timestamp,
    })
}

/// Whether a passive node can hear the target this step: in link range,
/// transmitting, and the node is sensing.
pub fn passive_gate(node: &Node, target: &Target, class: &TargetClass, mode: NodeMode, tx_gain: f64) -> bool {
    if mode != NodeMode::Passive || !target.tx_on {
        return false;
    }
    let range = norm(sub(target.position, node.position));
    range <= max_detectable_range(class.transmit_power_w, tx_gain, &node.receiver)
}

pub fn passive_detect<R: Rng + ?Sized>(
    node: &Node,
    target: &Target,
    class: &TargetClass,
    mode: NodeMode,
    params: &SensingParams,
    timestamp: f64,
    rng: &mut R,
) -> Option<PassiveDetection> {
    if !passive_gate(node, target, class, mode, params.tx_gain) {
        return None;
    }
    let truth = bearing(node.position, target.position);
    Some(PassiveDetection {
        node_id: node.id,
        signal_type: target.signal_state,
        bearing_rad: wrap_angle(truth + gaussian(params.doa_std_rad, rng)),
        timestamp,
        target_id: target.id,
    })
}

/// Anything with an identity and a position estimate a bearing can be
/// predicted from.
pub trait BearingCandidate {
    fn candidate_id(&self) -> usize;
    fn position_estimate(&self) -> [f64; 3];
}

/// Track whose predicted bearing from `node` is nearest the detection bearing,
/// if within `gate_rad`. Ties go to the smaller residual, then the lower id.
pub fn associate_detection<T: BearingCandidate>(
    detection: &PassiveDetection,
    tracks: &[T],
    node: &Node,
    gate_rad: f64,
) -> Option<usize> {
    assert!(gate_rad > 0.0, "gate must be positive");
    tracks
        .iter()
        .map(|t| {
            let predicted = bearing(node.position, t.position_estimate());
            (wrap_angle(detection.bearing_rad - predicted).abs(), t.candidate_id())
        })
        .filter(|(residual, _)| *residual <= gate_rad)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Exclusive association of one node's detections: (detection, track) pairs
/// within the gate are taken in order of increasing bearing residual, each
/// detection and each track at most once. Returns a track id per detection.
pub fn associate_node_detections<T: BearingCandidate>(
    detections: &[&PassiveDetection],
    tracks: &[T],
    node: &Node,
    gate_rad: f64,
) -> Vec<Option<usize>> {
    assert!(gate_rad > 0.0, "gate must be positive");
    let predicted: Vec<f64> = tracks.iter().map(|t| bearing(node.position, t.position_estimate())).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (d, det) in detections.iter().enumerate() {
        for (k, p) in predicted.iter().enumerate() {
            let residual = wrap_angle(det.bearing_rad - p).abs();
            if residual <= gate_rad {
                pairs.push((residual, tracks[k].candidate_id(), d));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; detections.len()];
    let mut taken = std::collections::BTreeSet::new();
    for (_, id, d) in pairs {
        if out[d].is_none() && !taken.contains(&id) {
            out[d] = Some(id);
            taken.insert(id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_family;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node_at(x: f64, y: f64) -> Node {
        Node {
            id: 0,
            position: [x, y, 0.0],
            radar_range_km: 4.0,
            receiver: ReceiverParams::default(),
        }
    }

    fn target_at(pos: [f64; 3], vel: [f64; 3]) -> Target {
        Target {
            id: 7,
            class_id: 0,
            position: pos,
            velocity: vel,
            turn_rate: 0.0,
            motion_state: 0,
            signal_state: 1,
            tx_on: true,
        }
    }

    #[test]
    fn noise_power_examples() {
        let mut rx = ReceiverParams {
            noise_figure: 1.0,
            bandwidth_hz: 1.0,
            ..ReceiverParams::default()
        };
        assert!((receiver_noise_power(&rx) - 4.003_885e-21).abs() < 1e-26);
        rx.noise_figure = 10.0;
        rx.bandwidth_hz = 1e6;
        let pn = receiver_noise_power(&rx);
        assert!((pn - 4.003_885e-14).abs() < 1e-19);
        rx.bandwidth_hz = 2e6;
        assert!((receiver_noise_power(&rx) / pn - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snr_examples() {
        let rx = ReceiverParams::default();
        let snr = passive_snr(1.0, 1.0, &rx, 10e3).unwrap();
        // Hand link budget: 0.09 / ((4 pi 1e4)^2 * 4.003885e-14 * 2).
        let oracle = 0.09 / ((4.0 * PI * 1e4).powi(2) * 4.003_885e-14 * 2.0);
        assert!((snr - oracle).abs() / oracle < 1e-9);
        assert!((snr - 71.17).abs() < 0.05);
        assert!((to_db(snr) - 18.52).abs() < 0.01);
        let far = passive_snr(1.0, 1.0, &rx, 20e3).unwrap();
        assert!((snr / far - 4.0).abs() < 1e-9);
        assert_eq!(passive_snr(1.0, 1.0, &rx, 0.0), Err(SensingError::ZeroRange(0.0)));
        assert!(passive_snr(1.0, 1.0, &rx, 50e3).unwrap() >= 1.0);
    }

    #[test]
    fn max_range_examples() {
        let rx = ReceiverParams::default();
        let r = max_detectable_range(1.0, 1.0, &rx);
        assert!((r - 84_363.0).abs() < 20.0, "{r}");
        assert!((passive_snr(1.0, 1.0, &rx, r).unwrap() - 1.0).abs() < 1e-9);
        assert!((max_detectable_range(4.0, 1.0, &rx) / r - 2.0).abs() < 1e-12);
        assert!((max_detectable_range(0.01, 1.0, &rx) / 1e3 - 8.44).abs() < 0.01);
        assert!((max_detectable_range(100.0, 1.0, &rx) / 1e3 - 843.6).abs() < 0.1);
    }

    #[test]
    fn passive_requires_passive_mode_and_transmission() {
        let family = default_family();
        let class = family.class(0);
        let node = node_at(0.0, 0.0);
        let mut t = target_at([1000.0, 0.0, 500.0], [10.0, 0.0, 0.0]);
        let p = SensingParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(passive_detect(&node, &t, class, NodeMode::Active, &p, 0.0, &mut rng).is_none());
        let d = passive_detect(&node, &t, class, NodeMode::Passive, &p, 0.0, &mut rng).unwrap();
        assert_eq!(d.signal_type, 1);
        assert_eq!(d.target_id, 7);
        t.tx_on = false;
        assert!(passive_detect(&node, &t, class, NodeMode::Passive, &p, 0.0, &mut rng).is_none());
        t.tx_on = true;
        t.position = [1e6, 0.0, 0.0];
        assert!(passive_detect(&node, &t, class, NodeMode::Passive, &p, 0.0, &mut rng).is_none());
    }

    #[test]
    fn bearing_error_has_configured_std() {
        let family = default_family();
        let node = node_at(0.0, 0.0);
        let t = target_at([3000.0, 4000.0, 500.0], [0.0; 3]);
        let p = SensingParams::default();
        let truth = bearing(node.position, t.position);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let errs: Vec<f64> = (0..n)
            .map(|_| {
                let d = passive_detect(&node, &t, family.class(0), NodeMode::Passive, &p, 0.0, &mut rng)
                    .unwrap();
                wrap_angle(d.bearing_rad - truth)
            })
            .collect();
        let std = (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        assert!((std / p.doa_std_rad - 1.0).abs() < 0.05);
    }

    #[test]
    fn radar_out_of_range_or_passive_is_none() {
        let node = node_at(0.0, 0.0);
        let noise = RadarNoise::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let far = target_at([5000.0, 0.0, 100.0], [0.0; 3]);
        assert!(radar_measure(&node, &far, NodeMode::Active, &noise, 0.0, &mut rng).is_none());
        let near = target_at([1000.0, 0.0, 100.0], [0.0; 3]);
        assert!(radar_measure(&node, &near, NodeMode::Passive, &noise, 0.0, &mut rng).is_none());
    }

    #[test]
    fn noiseless_radar_is_exact_polar() {
        let node = node_at(100.0, -200.0);
        let t = target_at([1100.0, 800.0, 1000.0], [10.0, -5.0, 1.0]);
        let noise = RadarNoise {
            range_m: 0.0,
            azimuth_rad: 0.0,
            elevation_rad: 0.0,
            radial_velocity_mps: 0.0,
            angular_velocity_radps: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = radar_measure(&node, &t, NodeMode::Active, &noise, 1.5, &mut rng).unwrap();
        let d = [1000.0, 1000.0, 1000.0];
        let r = (3.0f64).sqrt() * 1000.0;
        assert!((m.range_m - r).abs() < 1e-9);
        assert!((m.azimuth_rad - PI / 4.0).abs() < 1e-12);
        assert!((m.elevation_rad - (1000.0f64).atan2(2f64.sqrt() * 1000.0)).abs() < 1e-12);
        let vr = (d[0] * 10.0 + d[1] * -5.0 + d[2] * 1.0) / r;
        assert!((m.radial_velocity_mps - vr).abs() < 1e-12);
        let w = (d[0] * -5.0 - d[1] * 10.0) / 2e6;
        assert!((m.angular_velocity_radps - w).abs() < 1e-12);
        assert_eq!(m.timestamp, 1.5);
    }

    #[test]
    fn radar_residual_stds_match() {
        let node = node_at(0.0, 0.0);
        let t = target_at([2000.0, 1000.0, 800.0], [20.0, 5.0, 0.0]);
        let noise = RadarNoise::default();
        let truth = polar_view(node.position, t.position, t.velocity);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut sums = [0.0; 5];
        for _ in 0..n {
            let m = radar_measure(&node, &t, NodeMode::Active, &noise, 0.0, &mut rng).unwrap();
            let e = [
                m.range_m - truth.range_m,
                wrap_angle(m.azimuth_rad - truth.azimuth_rad),
                m.elevation_rad - truth.elevation_rad,
                m.radial_velocity_mps - truth.radial_velocity_mps,
                m.angular_velocity_radps - truth.angular_velocity_radps,
            ];
            for (s, x) in sums.iter_mut().zip(e) {
                *s += x * x;
            }
        }
        let expected = [
            noise.range_m,
            noise.azimuth_rad,
            noise.elevation_rad,
            noise.radial_velocity_mps,
            noise.angular_velocity_radps,
        ];
        for (s, e) in sums.iter().zip(expected) {
            let std = (s / n as f64).sqrt();
            assert!((std / e - 1.0).abs() < 0.05, "{std} vs {e}");
        }
    }

    struct Cand(usize, [f64; 3]);
    impl BearingCandidate for Cand {
        fn candidate_id(&self) -> usize {
            self.0
        }
        fn position_estimate(&self) -> [f64; 3] {
            self.1
        }
    }

    fn detection(bearing_rad: f64) -> PassiveDetection {
        PassiveDetection {
            node_id: 0,
            signal_type: 0,
            bearing_rad,
            timestamp: 0.0,
            target_id: 0,
        }
    }

    #[test]
    fn association_examples() {
        let node = node_at(0.0, 0.0);
        let none: Vec<Cand> = vec![];
        assert_eq!(associate_detection(&detection(0.0), &none, &node, 0.2), None);
        let one = vec![Cand(4, [1000.0, 0.0, 0.0])];
        assert_eq!(associate_detection(&detection(0.0), &one, &node, 0.2), Some(4));
        let at = |b: f64| [1000.0 * b.cos(), 1000.0 * b.sin(), 0.0];
        let two = vec![Cand(1, at(0.5)), Cand(2, at(0.0))];
        assert_eq!(associate_detection(&detection(0.1), &two, &node, 0.2), Some(2));
        assert_eq!(associate_detection(&detection(0.3), &two, &node, 0.05), None);
        let tied = vec![Cand(9, at(0.1)), Cand(3, at(-0.1))];
        assert_eq!(associate_detection(&detection(0.0), &tied, &node, 0.2), Some(3));
    }

    #[test]
    fn node_association_is_exclusive() {
        let node = node_at(0.0, 0.0);
        let at = |b: f64| [1000.0 * b.cos(), 1000.0 * b.sin(), 0.0];
        let tracks = vec![Cand(1, at(0.0)), Cand(2, at(0.3))];
        // Both detections prefer track 1; the farther one falls back to track 2.
        let (a, b) = (detection(0.02), detection(0.12));
        assert_eq!(associate_node_detections(&[&a, &b], &tracks, &node, 0.25), vec![Some(1), Some(2)]);
        // With a tight gate the fallback is out of reach.
        assert_eq!(associate_node_detections(&[&a, &b], &tracks, &node, 0.15), vec![Some(1), None]);
        // More detections than tracks: the surplus stays unassigned.
        let c = detection(0.01);
        let one = vec![Cand(7, at(0.0))];
        assert_eq!(associate_node_detections(&[&a, &c], &one, &node, 0.2), vec![None, Some(7)]);
        assert!(associate_node_detections(&[], &tracks, &node, 0.2).is_empty());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }
}
