use std::fs;
use std::sync::Arc;

use crn_core::bandit::{NodeMode, Policy};
use crn_core::classes::{BlockLayout, ClassLibrary};
use crn_core::io::{emit_outputs, parse_config_str, OutputBundle, ECDF_HEADER, EPOCHS_HEADER, SNR_HEADER, TUNING_HEADER};
use crn_core::rng::stream;
use crn_core::scenario::{default_family, spawn_target, Node, Scenario, TargetFamily};
use crn_core::sensing::ReceiverParams;
use crn_core::sim::{
    epoch_scenario, epoch_streams, run_experiment, run_policy, snr_curve, EpochSim, ExperimentResult, SimConfig,
    SNR_CURVE_POWERS_W,
};

fn small(runs: usize, epochs: usize) -> SimConfig {
    SimConfig {
        num_runs: runs,
        num_epochs: epochs,
        epoch_duration_s: 10.0,
        seed: 11,
        ..SimConfig::default()
    }
}

fn empty_library(family: &TargetFamily) -> ClassLibrary {
    ClassLibrary::new(Arc::new(BlockLayout::standard(family.motion_state_count(), family.signal_state_count())))
}

fn node(id: usize, x: f64, y: f64) -> Node {
    Node {
        id,
        position: [x, y, 0.0],
        radar_range_km: 4.0,
        receiver: ReceiverParams::default(),
    }
}

#[test]
fn same_seed_same_digest() {
    let config = small(2, 2);
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    let c = run_experiment(&SimConfig { seed: 12, ..config }).unwrap();
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn policies_see_identical_truth() {
    let config = small(2, 2);
    let result = run_experiment(&config).unwrap();
    assert_eq!(result.policies(), ["bandit", "radar-only", "random"]);
    for run in 0..2 {
        for epoch in 1..=2 {
            let hashes: Vec<&str> = result
                .records
                .iter()
                .filter(|r| r.run == run && r.epoch == epoch)
                .map(|r| r.metrics.truth_hash.as_str())
                .collect();
            assert_eq!(hashes.len(), 3);
            assert!(hashes.iter().all(|h| *h == hashes[0]), "run {run} epoch {epoch}");
        }
    }
}

#[test]
fn radar_only_never_listens() {
    let config = small(1, 1);
    let family = default_family();
    let library = empty_library(&family);
    let scenario = epoch_scenario(&config, &family, 0, 1).unwrap();
    let mut sim = EpochSim::new(&config, &family, Policy::RadarOnly, &library, scenario, epoch_streams(&config, 0, 1));
    for _ in 0..config.steps_per_epoch() {
        let report = sim.run_step();
        assert!(report.detections.is_empty());
        assert!(report.modes.iter().all(|m| *m == NodeMode::Active));
    }
}

#[test]
fn single_listener_hears_a_transmitting_target() {
    let config = small(1, 1);
    let family = default_family();
    let library = empty_library(&family);
    let mut rng = stream(3, &[0]);
    let target = spawn_target(0, family.class(0), &family, [1000.0, 0.0], &mut rng);
    let scenario = Scenario {
        nodes: vec![node(0, 0.0, 0.0)],
        targets: vec![target],
    };
    let mut sim = EpochSim::new(&config, &family, Policy::Random(0.0), &library, scenario, epoch_streams(&config, 0, 1));
    let mut heard = 0;
    for _ in 0..config.steps_per_epoch() {
        let report = sim.run_step();
        assert_eq!(report.modes, [NodeMode::Passive]);
        assert!(report.radar.is_empty());
        let tx_on = sim.scenario.targets[0].tx_on;
        assert_eq!(report.detections.len(), tx_on as usize);
        if let Some(d) = report.detections.first() {
            assert_eq!(d.signal_type, sim.scenario.targets[0].signal_state);
            heard += 1;
        }
    }
    assert!(heard > 0);
}

#[test]
fn every_node_step_is_active_or_passive() {
    let config = small(1, 2);
    let family = default_family();
    for policy in [Policy::Bandit, Policy::RadarOnly, Policy::Random(0.8)] {
        let (records, _) = run_policy(&config, &family, policy, 0).unwrap();
        for r in records {
            let m = &r.metrics;
            assert_eq!(m.active_steps + m.passive_steps, m.num_nodes * config.steps_per_epoch());
            let expected = m.active_steps as f64 / (m.active_steps + m.passive_steps) as f64;
            assert!((m.radar_utilization - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn snr_curve_reference_point() {
    let rows = snr_curve(&SNR_CURVE_POWERS_W, None, 1.0, &ReceiverParams::default());
    assert_eq!(rows.len(), SNR_CURVE_POWERS_W.len() * 81);
    let row = rows.iter().find(|r| r.p_t_w == 1.0 && r.range_km == 10.0).expect("10 km sampled");
    assert!((row.snr_db - 18.52).abs() < 0.01, "{}", row.snr_db);
}

#[test]
fn outputs_round_trip() {
    let config = small(2, 2);
    let result = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle = OutputBundle {
        command: "run".into(),
        config: Some(config.clone()),
        experiment: Some(result.clone()),
        ..Default::default()
    };
    let files = emit_outputs(&bundle, dir.path()).unwrap();
    assert!(files[0].ends_with("manifest.json"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let reparsed = parse_config_str(&manifest["config"].to_string(), "manifest.json".as_ref()).unwrap();
    assert_eq!(reparsed, config);
    assert_eq!(manifest["digest"].as_str().unwrap(), result.digest());

    let mut rdr = csv::Reader::from_path(dir.path().join("epochs.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), EPOCHS_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for (row, rec) in rows.iter().zip(&result.records) {
        let median: f64 = row[3].parse().unwrap();
        assert_eq!(median, rec.metrics.median_rmse);
    }

    let ecdf = csv::Reader::from_path(dir.path().join("ecdf.csv")).unwrap().into_records().count();
    let expected: usize = result.records.iter().filter(|r| r.epoch == 2).map(|r| r.metrics.per_target_rmse.len()).sum();
    assert_eq!(ecdf, expected);
    for run in 0..2 {
        assert!(dir.path().join(format!("libraries/run_{run:03}.json")).exists());
    }
}

#[test]
fn empty_bundle_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = OutputBundle {
        command: "run".into(),
        experiment: Some(ExperimentResult {
            records: vec![],
            libraries: vec![],
        }),
        ..Default::default()
    };
    emit_outputs(&bundle, dir.path()).unwrap();
    for (name, header) in [
        ("epochs.csv", &EPOCHS_HEADER[..]),
        ("ecdf.csv", &ECDF_HEADER[..]),
        ("snr_curve.csv", &SNR_HEADER[..]),
        ("tuning.csv", &TUNING_HEADER[..]),
    ] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text, format!("{}\n", header.join(",")), "{name}");
    }
}
