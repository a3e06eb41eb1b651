use fedsim::datagen::{ClassificationSpec, PartitionMode, SessionSpec};
use fedsim::federation::{FedAvgConfig, Participation};
use fedsim::harness::{
    compare_protocols, read_records, render_report, run_experiment, CentralizedConfig,
    DatasetConfig, DpFedAvgConfig, ExperimentConfig, ProtocolConfig, ReportFormat, WorkloadConfig,
};
use fedsim::models::{checkpoint, HeadKind};
use fedsim::privacy::Epsilon;

fn base(protocol: ProtocolConfig) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        seed: 3,
        rounds: 12,
        eval_every: 4,
        target_accuracy: Some(0.8),
        stop_at_target: false,
        clients: 4,
        test_fraction: 0.25,
        partition: PartitionMode::Iid,
        dataset: DatasetConfig::Classification(ClassificationSpec {
            n: 200,
            classes: 3,
            dim: 5,
            separation: 3.0,
        }),
        workload: WorkloadConfig::Mlp { hidden: vec![8] },
        protocol,
    }
}

fn fedavg(e: usize) -> ProtocolConfig {
    ProtocolConfig::FedAvg(FedAvgConfig {
        local_steps: e,
        learning_rate: 0.2,
        batch_size: Some(8),
        participation: Participation::All,
    })
}

#[test]
fn zero_rounds_gives_initial_evaluation_only() {
    let mut cfg = base(fedavg(1));
    cfg.rounds = 0;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].round, 0);
    assert_eq!(out.records[0].scalars_up, 0);
    assert!(out.traces.is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = base(fedavg(3));
    let a = render_report(&run_experiment(&cfg).unwrap().records, ReportFormat::Jsonl).unwrap();
    let b = render_report(&run_experiment(&cfg).unwrap().records, ReportFormat::Jsonl).unwrap();
    assert_eq!(a, b);
}

#[test]
fn centralized_matches_single_client_fedavg() {
    let mut central = base(ProtocolConfig::Centralized(CentralizedConfig {
        learning_rate: 0.2,
        batch_size: Some(8),
    }));
    central.eval_every = 1;
    let mut fed = base(fedavg(1));
    fed.clients = 1;
    fed.eval_every = 1;
    let a = run_experiment(&central).unwrap();
    let b = run_experiment(&fed).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(
            (x.loss - y.loss).abs() < 1e-10,
            "round {}: {} vs {}",
            x.round,
            x.loss,
            y.loss
        );
        assert!((x.train_loss - y.train_loss).abs() < 1e-10);
    }
}

#[test]
fn evaluation_cadence_and_cumulative_uploads() {
    let out = run_experiment(&base(fedavg(2))).unwrap();
    let rounds: Vec<u64> = out.records.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![0, 4, 8, 12]);
    let d = out.final_params.len() as u64;
    assert_eq!(out.records[1].scalars_up, 4 * 4 * d);
    assert_eq!(out.final_record().scalars_up, 12 * 4 * d);
    assert_eq!(out.traces.len(), 12);
    assert!(out.traces[3].accuracy.is_some() && out.traces[2].accuracy.is_none());
}

#[test]
fn stop_at_target_ends_early() {
    let mut cfg = base(fedavg(5));
    cfg.rounds = 200;
    cfg.eval_every = 1;
    cfg.stop_at_target = true;
    let out = run_experiment(&cfg).unwrap();
    assert!(out.final_record().round < 200);
    let i = out.target_index(0.8).unwrap();
    assert_eq!(i, out.records.len() - 1);
}

#[test]
fn identical_configs_compare_at_ratio_one() {
    let mut cfg = base(fedavg(2));
    cfg.rounds = 60;
    let (table, _) = compare_protocols(&[cfg.clone(), cfg]).unwrap();
    assert!(table.rows[0].uploads_to_target.is_some(), "{table}");
    assert!(table.rows.iter().all(|r| r.ratio == Some(1.0)), "{table}");
}

#[test]
fn comparison_reports_privacy_and_misses() {
    let dp = ProtocolConfig::DpFedAvg(DpFedAvgConfig {
        local_steps: 2,
        learning_rate: 0.2,
        batch_size: Some(8),
        sampling_probability: 0.5,
        clip_bound: 1.0,
        noise_multiplier: 1.0,
        delta: 1e-5,
        max_order: 64,
    });
    let mut unreachable = base(fedavg(1));
    unreachable.target_accuracy = Some(1.0);
    unreachable.name = Some("impossible".into());
    let (table, _) = compare_protocols(&[base(fedavg(2)), base(dp), unreachable]).unwrap();
    assert!(matches!(table.rows[1].final_epsilon, Some(Epsilon::Bounded(e)) if e > 0.0));
    assert_eq!(table.rows[0].final_epsilon, None);
    assert_eq!(table.rows[2].uploads_to_target, None);
    let csv = table.to_csv().unwrap();
    assert!(csv.lines().nth(3).unwrap().contains("not reached"), "{csv}");

    let mut other = base(fedavg(2));
    other.seed = 4;
    assert!(compare_protocols(&[base(fedavg(2)), other]).is_err());
}

#[test]
fn outputs_echo_config_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&base(fedavg(2))).unwrap();
    out.write_to(dir.path()).unwrap();
    let echoed = ExperimentConfig::load(dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed, out.config);
    assert_eq!(
        read_records(dir.path().join("metrics.jsonl")).unwrap(),
        out.records
    );
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), out.records.len() + 1);
    let params = checkpoint::load::<f64>(dir.path().join("model.ckpt")).unwrap();
    assert_eq!(params, out.final_params);
    let rerun = run_experiment(&echoed).unwrap();
    assert_eq!(rerun.records, out.records);
}

#[test]
fn session_workload_runs() {
    let cfg = ExperimentConfig {
        dataset: DatasetConfig::Sessions(SessionSpec {
            users: 2,
            sessions_per_user: 15,
            classes: 2,
            signal: 1.0,
        }),
        workload: WorkloadConfig::MultiviewGru {
            hidden: 4,
            head: HeadKind::Mvm { factors: 3 },
        },
        clients: 2,
        rounds: 3,
        ..base(fedavg(1))
    };
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 2);
    assert!(out.records.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn invalid_config_fails_before_compute() {
    let mut cfg = base(fedavg(1));
    cfg.workload = WorkloadConfig::MultiviewGru {
        hidden: 4,
        head: HeadKind::Fc { hidden_units: 4 },
    };
    assert!(run_experiment(&cfg).is_err());
}
