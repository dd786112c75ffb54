//! Experiment orchestration: epochs, Monte Carlo runs, and policy comparison.
//!
//! Every `(run, epoch)` pair has its own scenario and ground-truth streams, so
//! all policies see identical targets; only sensing noise and policy draws
//! differ. Runs execute in parallel and are reduced in run order.

mod config;
mod demo;
mod epoch;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bandit::Policy;
use crate::classes::{BlockLayout, ClassError, ClassLibrary, ParameterVector};
use crate::rng::{stream, tag};
use crate::scenario::{default_family, spawn_scenario, Scenario, ScenarioError, TargetFamily};

pub use config::{BanditConfig, ClassConfig, PolicyConfig, PolicyKind, SensingConfig, SimConfig, TrackingConfig};
pub use demo::{snr_curve, tune_demo, SnrRow, TuningRow, SNR_CURVE_POWERS_W};
pub use epoch::{summarize, true_class_error, true_class_vector, EpochMetrics, EpochSim, EpochStreams, StepReport};

/// Scenario draws retried when a Poisson draw leaves no nodes or no targets.
pub const MAX_SCENARIO_ATTEMPTS: usize = 5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Classes(#[from] ClassError),
}

/// One row of the experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: usize,
    /// 1-based.
    pub epoch: usize,
    pub policy: String,
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<EpochRecord>,
    /// Final class library of each run under the class-aware policy.
    pub libraries: Vec<Option<ClassLibrary>>,
}

/// Mean and standard error of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, se: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAggregate {
    pub epoch: usize,
    pub policy: String,
    pub median_rmse: MeanSe,
    pub mean_rmse: MeanSe,
    pub formation_accuracy: MeanSe,
    pub association_accuracy: MeanSe,
    pub radar_utilization: MeanSe,
}

impl ExperimentResult {
    pub fn policies(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.policy) {
                seen.push(r.policy.clone());
            }
        }
        seen
    }

    pub fn records_for<'a>(&'a self, policy: &'a str, epoch: usize) -> impl Iterator<Item = &'a EpochRecord> + 'a {
        self.records.iter().filter(move |r| r.policy == policy && r.epoch == epoch)
    }

    pub fn num_epochs(&self) -> usize {
        self.records.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    /// Per-epoch, per-policy means and standard errors across runs.
    pub fn aggregate(&self) -> Vec<EpochAggregate> {
        let mut out = Vec::new();
        for epoch in 1..=self.num_epochs() {
            for policy in self.policies() {
                let rows: Vec<&EpochMetrics> = self.records_for(&policy, epoch).map(|r| &r.metrics).collect();
                let col = |f: fn(&EpochMetrics) -> f64| MeanSe::of(&rows.iter().map(|m| f(m)).collect::<Vec<_>>());
                out.push(EpochAggregate {
                    epoch,
                    policy: policy.clone(),
                    median_rmse: col(|m| m.median_rmse),
                    mean_rmse: col(|m| m.mean_rmse),
                    formation_accuracy: col(|m| m.formation_accuracy),
                    association_accuracy: col(|m| m.association_accuracy),
                    radar_utilization: col(|m| m.radar_utilization),
                });
            }
        }
        out
    }

    /// SHA-256 over the per-epoch metric rows; equal results give equal digests.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            let m = &r.metrics;
            h.update(format!("{},{},{},", r.run, r.epoch, r.policy));
            for x in [
                m.median_rmse,
                m.mean_rmse,
                m.formation_accuracy,
                m.association_accuracy,
                m.radar_utilization,
            ] {
                h.update(x.to_le_bytes());
            }
            for x in &m.per_target_rmse {
                h.update(x.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

/// Spawns the scenario of `(run, epoch)`, redrawing degenerate ones.
pub fn epoch_scenario(config: &SimConfig, family: &TargetFamily, run: usize, epoch: usize) -> Result<Scenario, SimError> {
    let scenario_config = config.scenario_config()?;
    let mut last = None;
    for attempt in 0..MAX_SCENARIO_ATTEMPTS {
        let mut rng = stream(config.seed, &[tag::SCENARIO, run as u64, epoch as u64, attempt as u64]);
        match spawn_scenario(&scenario_config, family, &mut rng) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Per-epoch streams; shared by all policies so that truth is paired.
pub fn epoch_streams(config: &SimConfig, run: usize, epoch: usize) -> EpochStreams {
    let path = |t: u64| [t, run as u64, epoch as u64];
    EpochStreams {
        truth: stream(config.seed, &path(tag::TRUTH)),
        sensing: stream(config.seed, &path(tag::SENSING)),
        policy: stream(config.seed, &path(tag::POLICY)),
        clustering: stream(config.seed, &path(tag::CLUSTERING)),
    }
}

/// Runs one epoch. Returns its metrics and, for class-aware policies, the
/// updated library. `pool` accumulates harvested vectors across epochs.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    config: &SimConfig,
    family: &TargetFamily,
    policy: Policy,
    library: &ClassLibrary,
    pool: &mut Vec<ParameterVector>,
    pool_truth: &mut Vec<usize>,
    run: usize,
    epoch: usize,
) -> Result<(EpochMetrics, Option<ClassLibrary>), SimError> {
    let scenario = epoch_scenario(config, family, run, epoch)?;
    let sim = EpochSim::new(config, family, policy, library, scenario, epoch_streams(config, run, epoch));
    sim.finish(pool, pool_truth)
}

/// All epochs of one run under one policy.
pub fn run_policy(
    config: &SimConfig,
    family: &TargetFamily,
    policy: Policy,
    run: usize,
) -> Result<(Vec<EpochRecord>, Option<ClassLibrary>), SimError> {
    let layout = Arc::new(BlockLayout::standard(family.motion_state_count(), family.signal_state_count()));
    let mut library = ClassLibrary::new(layout);
    let mut pool = Vec::new();
    let mut pool_truth = Vec::new();
    let mut records = Vec::with_capacity(config.num_epochs);
    for epoch in 1..=config.num_epochs {
        let (metrics, updated) = run_epoch(config, family, policy, &library, &mut pool, &mut pool_truth, run, epoch)?;
        if let Some(l) = updated {
            library = l;
        }
        records.push(EpochRecord {
            run,
            epoch,
            policy: policy.name().to_string(),
            metrics,
        });
    }
    let library = policy.uses_classes().then_some(library);
    Ok((records, library))
}

/// The full Monte Carlo experiment over the default target family.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult, SimError> {
    run_experiment_with(config, &default_family())
}

pub fn run_experiment_with(config: &SimConfig, family: &TargetFamily) -> Result<ExperimentResult, SimError> {
    config.validate()?;
    let policies = config.policies();
    let per_run: Vec<Result<(Vec<EpochRecord>, Option<ClassLibrary>), SimError>> = (0..config.num_runs)
        .into_par_iter()
        .map(|run| {
            let mut records = Vec::new();
            let mut library = None;
            for &policy in &policies {
                let (r, l) = run_policy(config, family, policy, run)?;
                records.extend(r);
                if l.is_some() {
                    library = l;
                }
            }
            Ok((records, library))
        })
        .collect();
    let mut records = Vec::new();
    let mut libraries = Vec::new();
    for r in per_run {
        let (recs, lib) = r?;
        records.extend(recs);
        libraries.push(lib);
    }
    records.sort_by(|a, b| {
        (a.run, a.epoch)
            .cmp(&(b.run, b.epoch))
            .then(policy_rank(&policies, &a.policy).cmp(&policy_rank(&policies, &b.policy)))
    });
    Ok(ExperimentResult { records, libraries })
}

fn policy_rank(policies: &[Policy], name: &str) -> usize {
    policies.iter().position(|p| p.name() == name).unwrap_or(usize::MAX)
}
