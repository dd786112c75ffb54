//! Configuration files and output artifacts.
//!
//! Configs are JSON documents mirroring [`SimConfig`]. Outputs are a
//! `manifest.json`, written first, and header-row CSV files for external
//! plotting:
//!
//! | file | columns |
//! |---|---|
//! | `epochs.csv` | run, epoch, policy, median_rmse_m, mean_rmse_m, formation_acc, association_acc, radar_utilization |
//! | `ecdf.csv` | policy, rmse_m (final epoch, one row per tracked target) |
//! | `snr_curve.csv` | P_t_W, range_km, snr_db |
//! | `tuning.csv` | class, tuned_rmse_m, untuned_rmse_m |

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::classes::ClassError;
use crate::sim::{ExperimentResult, PolicyKind, SimConfig, SimError, SnrRow, TuningRow};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}{}", key.as_ref().map(|k| format!(" (at `{k}`)")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        key: Option<String>,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("non-finite value in {file}, column {column}")]
    NonFinite { file: String, column: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Classes(#[from] ClassError),
}

/// Command-line values that take precedence over the config file. An
/// explicit policy also turns off the three-way policy comparison.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub policy: Option<PolicyKind>,
    pub p: Option<f64>,
    pub runs: Option<usize>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut SimConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(kind) = self.policy {
            config.policy.kind = kind;
            config.compare_policies = false;
        }
        if let Some(p) = self.p {
            config.policy.p = p;
        }
        if let Some(runs) = self.runs {
            config.num_runs = runs;
        }
        if let Some(epochs) = self.epochs {
            config.num_epochs = epochs;
        }
    }
}

/// Parses a config document; `path` is only used in diagnostics.
pub fn parse_config_str(text: &str, path: &Path) -> Result<SimConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            key: (key != ".").then_some(key),
            message: inner.to_string(),
        }
    })
}

/// Reads, overrides and validates a config file.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<SimConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config_str(&text, path)?;
    overrides.apply(&mut config);
    validate(&config)?;
    Ok(config)
}

pub fn validate(config: &SimConfig) -> Result<(), ConfigError> {
    config.validate().map_err(|e| match e {
        SimError::InvalidConfig(msg) => ConfigError::Validation(msg),
        other => ConfigError::Validation(other.to_string()),
    })
}

/// Everything one command produced.
#[derive(Debug, Clone, Default)]
pub struct OutputBundle {
    pub command: String,
    pub config: Option<SimConfig>,
    pub experiment: Option<ExperimentResult>,
    pub snr_curve: Vec<SnrRow>,
    pub tuning: Vec<TuningRow>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'static str,
    seed: Option<u64>,
    config: Option<&'a SimConfig>,
    digest: Option<String>,
    files: Vec<&'static str>,
}

pub const EPOCHS_HEADER: [&str; 8] = [
    "run",
    "epoch",
    "policy",
    "median_rmse_m",
    "mean_rmse_m",
    "formation_acc",
    "association_acc",
    "radar_utilization",
];
pub const ECDF_HEADER: [&str; 2] = ["policy", "rmse_m"];
pub const SNR_HEADER: [&str; 3] = ["P_t_W", "range_km", "snr_db"];
pub const TUNING_HEADER: [&str; 3] = ["class", "tuned_rmse_m", "untuned_rmse_m"];

const DATA_FILES: [&str; 4] = ["epochs.csv", "ecdf.csv", "snr_curve.csv", "tuning.csv"];

/// Writes the manifest, then every CSV (header-only when the bundle has no
/// rows for it), then one class library per run when available.
pub fn emit_outputs(bundle: &OutputBundle, out_dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(out_dir).map_err(|source| OutputError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    check_finite(bundle)?;
    let manifest = Manifest {
        command: &bundle.command,
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: bundle.config.as_ref().map(|c| c.seed),
        config: bundle.config.as_ref(),
        digest: bundle.experiment.as_ref().map(ExperimentResult::digest),
        files: DATA_FILES.to_vec(),
    };
    let mut written = Vec::new();
    let manifest_path = out_dir.join("manifest.json");
    write_file(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(manifest_path);

    let mut epochs = Vec::new();
    let mut ecdf = Vec::new();
    if let Some(result) = &bundle.experiment {
        let last = result.num_epochs();
        for r in &result.records {
            let m = &r.metrics;
            epochs.push(vec![
                r.run.to_string(),
                r.epoch.to_string(),
                r.policy.clone(),
                m.median_rmse.to_string(),
                m.mean_rmse.to_string(),
                m.formation_accuracy.to_string(),
                m.association_accuracy.to_string(),
                m.radar_utilization.to_string(),
            ]);
            if r.epoch == last {
                ecdf.extend(m.per_target_rmse.iter().map(|x| vec![r.policy.clone(), x.to_string()]));
            }
        }
    }
    let snr: Vec<Vec<String>> = bundle
        .snr_curve
        .iter()
        .map(|r| vec![r.p_t_w.to_string(), r.range_km.to_string(), r.snr_db.to_string()])
        .collect();
    let tuning: Vec<Vec<String>> = bundle
        .tuning
        .iter()
        .map(|r| vec![r.class_name.clone(), r.tuned_rmse_m.to_string(), r.untuned_rmse_m.to_string()])
        .collect();
    for (name, header, rows) in [
        ("epochs.csv", &EPOCHS_HEADER[..], epochs),
        ("ecdf.csv", &ECDF_HEADER[..], ecdf),
        ("snr_curve.csv", &SNR_HEADER[..], snr),
        ("tuning.csv", &TUNING_HEADER[..], tuning),
    ] {
        let path = out_dir.join(name);
        write_csv(&path, header, &rows)?;
        written.push(path);
    }

    if let Some(result) = &bundle.experiment {
        let dir = out_dir.join("libraries");
        for (run, library) in result.libraries.iter().enumerate() {
            let Some(library) = library else { continue };
            fs::create_dir_all(&dir).map_err(|source| OutputError::Io { path: dir.clone(), source })?;
            let path = dir.join(format!("run_{run:03}.json"));
            write_file(&path, library.to_json()?)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_file(path: &Path, contents: String) -> Result<(), OutputError> {
    fs::write(path, contents).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_finite(bundle: &OutputBundle) -> Result<(), OutputError> {
    let fail = |file: &str, column: &str| {
        Err(OutputError::NonFinite {
            file: file.into(),
            column: column.into(),
        })
    };
    if let Some(result) = &bundle.experiment {
        for r in &result.records {
            let m = &r.metrics;
            for (column, x) in [
                ("median_rmse_m", m.median_rmse),
                ("mean_rmse_m", m.mean_rmse),
                ("formation_acc", m.formation_accuracy),
                ("association_acc", m.association_accuracy),
                ("radar_utilization", m.radar_utilization),
            ] {
                if !x.is_finite() {
                    return fail("epochs.csv", column);
                }
            }
            if m.per_target_rmse.iter().any(|x| !x.is_finite()) {
                return fail("ecdf.csv", "rmse_m");
            }
        }
    }
    for r in &bundle.snr_curve {
        for (column, x) in [("P_t_W", r.p_t_w), ("range_km", r.range_km), ("snr_db", r.snr_db)] {
            if !x.is_finite() {
                return fail("snr_curve.csv", column);
            }
        }
    }
    for r in &bundle.tuning {
        for (column, x) in [("tuned_rmse_m", r.tuned_rmse_m), ("untuned_rmse_m", r.untuned_rmse_m)] {
            if !x.is_finite() {
                return fail("tuning.csv", column);
            }
        }
    }
    Ok(())
}
