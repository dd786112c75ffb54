//! Stand-alone studies: the passive link budget curve and the tuned versus
//! untuned filter comparison.

use serde::{Deserialize, Serialize};

use crate::bandit::NodeMode;
use crate::dynamics::{step_motion, step_signal};
use crate::rng::{stream, tag};
use crate::scenario::{sample_ppp, spawn_target, Node, TargetFamily};
use crate::sensing::{passive_snr, radar_measure, to_db, ReceiverParams};
use crate::tracking::{classifier_tuning, track_rmse, tuned_tuning, untuned_tuning, Track};

use super::{SimConfig, SimError};

/// Transmit powers of the reference link-budget curve (W).
pub const SNR_CURVE_POWERS_W: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub p_t_w: f64,
    pub range_km: f64,
    pub snr_db: f64,
}

/// SNR in dB for every power and range. With `ranges_km = None` the ranges
/// are 20 points per decade from 0.1 km to 1000 km (10 km included exactly).
pub fn snr_curve(powers_w: &[f64], ranges_km: Option<&[f64]>, tx_gain: f64, rx: &ReceiverParams) -> Vec<SnrRow> {
    let default: Vec<f64> = (-20..=60).map(|k| 10f64.powf(k as f64 / 20.0)).collect();
    let ranges = ranges_km.unwrap_or(&default);
    powers_w
        .iter()
        .flat_map(|&p| {
            ranges.iter().map(move |&r| SnrRow {
                p_t_w: p,
                range_km: r,
                snr_db: to_db(passive_snr(p, tx_gain, rx, r * 1e3).expect("ranges are positive")),
            })
        })
        .collect()
}

/// One paired comparison: the same epoch and measurements through filters
/// tuned to the class and through the untuned filter. RMSEs are epoch means
/// over the tracked targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub class_id: usize,
    pub class_name: String,
    pub seed: usize,
    pub tracked_targets: usize,
    pub tuned_rmse_m: f64,
    pub untuned_rmse_m: f64,
}

const PLACEMENT_ATTEMPTS: usize = 50;

/// Runs `seeds` epochs per class. Each epoch places nodes and targets as in the
/// experiment, with every target drawn from the one class and every node in
/// radar mode; returns are associated by truth so that only filtering differs.
pub fn tune_demo(config: &SimConfig, family: &TargetFamily, seeds: usize) -> Result<Vec<TuningRow>, SimError> {
    config.validate()?;
    let scenario = config.scenario_config()?;
    let params = config.sensing.params();
    let classifier = classifier_tuning(family, config.tracking.classifier_stickiness);
    let untuned = untuned_tuning(family);
    let steps = config.steps_per_epoch();
    let dt = config.dt_s;
    let mut rows = Vec::new();
    for class in family.classes() {
        let tuned = tuned_tuning(class, family);
        for seed in 0..seeds {
            let mut rng = stream(config.seed, &[tag::TUNE_DEMO, class.id as u64, seed as u64]);
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let nodes: Vec<Node> = sample_ppp(scenario.node_density, &scenario.region, &mut rng)
                    .into_iter()
                    .enumerate()
                    .map(|(id, [x, y])| Node {
                        id,
                        position: [x, y, 0.0],
                        radar_range_km: scenario.radar_range_km,
                        receiver: scenario.receiver.clone(),
                    })
                    .collect();
                let targets: Vec<_> = sample_ppp(scenario.target_density, &scenario.region, &mut rng)
                    .into_iter()
                    .enumerate()
                    .map(|(id, xy)| spawn_target(id, class, family, xy, &mut rng))
                    .collect();
                if !nodes.is_empty() && !targets.is_empty() {
                    placed = Some((nodes, targets));
                    break;
                }
            }
            let Some((nodes, mut targets)) = placed else {
                return Err(SimError::InvalidConfig(
                    "densities too low to populate a tuning epoch".into(),
                ));
            };
            let mut pairs: Vec<(Track, Track)> = (0..targets.len()).map(|i| (Track::new(2 * i, i), Track::new(2 * i + 1, i))).collect();
            let mut errors = vec![(Vec::new(), Vec::new(), Vec::new()); targets.len()];
            for step in 0..steps {
                let time = (step + 1) as f64 * dt;
                for ((target, (a, b)), (est_a, est_b, truth)) in targets.iter_mut().zip(&mut pairs).zip(&mut errors) {
                    step_motion(target, class, family, dt, &mut rng);
                    step_signal(target, class, &mut rng);
                    let returns: Vec<_> = nodes
                        .iter()
                        .filter_map(|n| {
                            radar_measure(n, target, NodeMode::Active, &params.radar_noise, time, &mut rng)
                                .map(|m| (m, n.position))
                        })
                        .collect();
                    a.predict(dt);
                    b.predict(dt);
                    a.apply_radar(&returns, step as u32, time, &tuned, &classifier);
                    b.apply_radar(&returns, step as u32, time, &untuned, &classifier);
                    if a.is_running() && b.is_running() {
                        est_a.push(a.position().expect("running"));
                        est_b.push(b.position().expect("running"));
                        truth.push(target.position);
                    }
                }
            }
            let per_target: Vec<(f64, f64)> = errors
                .iter()
                .filter(|(_, _, truth)| !truth.is_empty())
                .map(|(a, b, truth)| {
                    (
                        track_rmse(a, truth).expect("aligned"),
                        track_rmse(b, truth).expect("aligned"),
                    )
                })
                .collect();
            let n = per_target.len();
            let mean = |f: fn(&(f64, f64)) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    per_target.iter().map(f).sum::<f64>() / n as f64
                }
            };
            rows.push(TuningRow {
                class_id: class.id,
                class_name: class.name.clone(),
                seed,
                tracked_targets: n,
                tuned_rmse_m: mean(|p| p.0),
                untuned_rmse_m: mean(|p| p.1),
            });
        }
    }
    Ok(rows)
}
