//! `crn`: runs the experiment and its stand-alone studies, writing CSV and
//! JSON artifacts for external plotting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crn_core::io::{emit_outputs, parse_config, validate, ConfigError, OutputBundle, Overrides};
use crn_core::scenario::default_family;
use crn_core::sim::{run_experiment, snr_curve, tune_demo, PolicyKind, SimConfig, SNR_CURVE_POWERS_W};

#[derive(Parser)]
#[command(name = "crn", version, about = "Cognitive radar network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Full Monte Carlo experiment.
    Run,
    /// Passive link budget: SNR against range for the reference powers.
    SnrCurve,
    /// Tuned against untuned filtering, one epoch per class and seed.
    TuneDemo,
    /// Parse and validate the configuration only.
    ValidateConfig,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run only this policy instead of comparing all three.
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyArg>,
    /// Radar probability of the random policy.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Monte Carlo runs (seeds per class for tune-demo).
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Bandit,
    RadarOnly,
    Random,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Bandit => PolicyKind::Bandit,
            PolicyArg::RadarOnly => PolicyKind::RadarOnly,
            PolicyArg::Random => PolicyKind::Random,
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn load_config(common: &Common) -> Result<SimConfig, ConfigError> {
    let overrides = Overrides {
        seed: common.seed,
        policy: common.policy.map(Into::into),
        p: common.p,
        runs: common.runs,
        epochs: common.epochs,
    };
    match &common.config {
        Some(path) => parse_config(path, &overrides),
        None => {
            let mut config = SimConfig::default();
            overrides.apply(&mut config);
            validate(&config)?;
            Ok(config)
        }
    }
}

fn emit(bundle: &OutputBundle, out: &Path) -> Result<(), Failure> {
    emit_outputs(bundle, out).map(|_| ()).map_err(|e| Failure::Runtime(e.to_string()))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(&cli.common).map_err(|e| Failure::Config(e.to_string()))?;
    let quiet = cli.common.quiet;
    let out = &cli.common.out;
    match cli.command {
        Command::ValidateConfig => {
            if !quiet {
                println!("configuration ok");
            }
            Ok(())
        }
        Command::SnrCurve => {
            let rows = snr_curve(&SNR_CURVE_POWERS_W, None, config.sensing.tx_gain, &config.sensing.receiver);
            let bundle = OutputBundle {
                command: "snr-curve".into(),
                config: Some(config),
                snr_curve: rows,
                ..Default::default()
            };
            emit(&bundle, out)?;
            if !quiet {
                println!("wrote {} SNR samples to {}", bundle.snr_curve.len(), out.display());
            }
            Ok(())
        }
        Command::TuneDemo => {
            let family = default_family();
            let rows = tune_demo(&config, &family, config.num_runs).map_err(|e| Failure::Runtime(e.to_string()))?;
            if !quiet {
                for class in family.classes() {
                    let r: Vec<_> = rows.iter().filter(|r| r.class_id == class.id).collect();
                    let n = r.len().max(1) as f64;
                    let tuned = r.iter().map(|x| x.tuned_rmse_m).sum::<f64>() / n;
                    let untuned = r.iter().map(|x| x.untuned_rmse_m).sum::<f64>() / n;
                    let wins = r.iter().filter(|x| x.tuned_rmse_m < x.untuned_rmse_m).count();
                    println!(
                        "{:16} tuned {tuned:7.3} m  untuned {untuned:7.3} m  improved {wins}/{}",
                        class.name,
                        r.len()
                    );
                }
            }
            emit(
                &OutputBundle {
                    command: "tune-demo".into(),
                    config: Some(config),
                    tuning: rows,
                    ..Default::default()
                },
                out,
            )
        }
        Command::Run => {
            let result = run_experiment(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
            if !quiet {
                let last = result.num_epochs();
                for a in result.aggregate().iter().filter(|a| a.epoch == last) {
                    println!(
                        "epoch {last} {:10} median RMSE {:7.3} m  association {:.3}  radar {:.3}",
                        a.policy, a.median_rmse.mean, a.association_accuracy.mean, a.radar_utilization.mean
                    );
                }
            }
            emit(
                &OutputBundle {
                    command: "run".into(),
                    config: Some(config),
                    experiment: Some(result),
                    ..Default::default()
                },
                out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
