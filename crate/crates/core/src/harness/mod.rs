//! Experiment orchestration: build data and model from an
//! [`ExperimentConfig`], drive protocol rounds, evaluate on a held-out split
//! and persist the results.

mod config;
mod report;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    CentralizedConfig, DatasetConfig, DpFedAvgConfig, ExperimentConfig, GeneratorConfig,
    ProtocolConfig, WorkloadConfig,
};
pub use report::{
    emit_report, f1_macro, read_records, render_report, MetricRecord, ReportFormat, CSV_HEADER,
};

use crate::datagen::{
    gen_classification, gen_multiview_sessions, partition, train_test_split, write_classification,
    write_sessions, SessionScaler, ACCELEROMETER_DIM, ALPHANUMERIC_DIM, SPECIAL_DIM,
};
use crate::error::{Error, Result};
use crate::federation::{local_sgd, ClientState, Federation, ProtocolKind, RoundTrace};
use crate::models::{
    checkpoint, evaluate, Example, MlpModel, Model, MultiViewGruModel, MultiViewSpec, ParamVector,
};
use crate::privacy::{Epsilon, PrivacyLedger};
use crate::rng::{streams, SimRng};

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub records: Vec<MetricRecord>,
    pub traces: Vec<RoundTrace>,
    pub ledger: Option<PrivacyLedger>,
    pub final_params: ParamVector<f64>,
}

impl ExperimentOutcome {
    /// Index of the first record whose 3-evaluation moving average of test
    /// accuracy reaches `target` (fewer evaluations are averaged at the start).
    pub fn target_index(&self, target: f64) -> Option<usize> {
        target_index(&self.records, target)
    }

    /// Cumulative uploaded scalars when the target was first reached.
    pub fn uploads_to_target(&self) -> Option<u64> {
        let t = self.config.target_accuracy?;
        self.target_index(t).map(|i| self.records[i].scalars_up)
    }

    pub fn final_record(&self) -> &MetricRecord {
        self.records
            .last()
            .expect("at least the initial evaluation")
    }

    /// Writes the echoed config, metrics (jsonl and csv), round traces, the
    /// privacy ledger (private runs) and a checkpoint of the final model.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        emit_report(
            &self.records,
            ReportFormat::Jsonl,
            dir.join("metrics.jsonl"),
        )?;
        emit_report(&self.records, ReportFormat::Csv, dir.join("metrics.csv"))?;
        let mut traces = String::new();
        for t in &self.traces {
            traces.push_str(&serde_json::to_string(t)?);
            traces.push('\n');
        }
        fs::write(dir.join("traces.jsonl"), traces)?;
        if let Some(ledger) = &self.ledger {
            ledger.save(dir.join("ledger.json"))?;
        }
        checkpoint::save(dir.join("model.ckpt"), &self.final_params)
    }
}

const SMOOTHING_WINDOW: usize = 3;

fn target_index(records: &[MetricRecord], target: f64) -> Option<usize> {
    (0..records.len()).find(|&i| {
        let window = &records[(i + 1).saturating_sub(SMOOTHING_WINDOW)..=i];
        window.iter().map(|r| r.accuracy).sum::<f64>() / window.len() as f64 >= target
    })
}

/// Runs one experiment. The config is validated before any data is built.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut init = SimRng::new(cfg.seed).fork(streams::INIT);
    match (&cfg.dataset, &cfg.workload) {
        (DatasetConfig::Classification(spec), WorkloadConfig::Mlp { hidden }) => {
            let data = gen_classification(cfg.seed, spec)?;
            let (train_idx, test_idx) = train_test_split(data.len(), cfg.test_fraction, cfg.seed)?;
            let train = data.subset(&train_idx).examples();
            let test = data.subset(&test_idx).examples();
            let mut sizes = vec![spec.dim];
            sizes.extend(hidden);
            sizes.push(spec.classes);
            let model = MlpModel::new(&sizes, &mut init)?;
            execute(cfg, model, train, test)
        }
        (DatasetConfig::Sessions(spec), WorkloadConfig::MultiviewGru { hidden, head }) => {
            let sessions = gen_multiview_sessions(cfg.seed, spec)?;
            let (train_idx, test_idx) =
                train_test_split(sessions.len(), cfg.test_fraction, cfg.seed)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
            let (train_s, test_s) = (pick(&train_idx), pick(&test_idx));
            let scaler = SessionScaler::fit(&train_s);
            let model = MultiViewGruModel::new(
                &MultiViewSpec {
                    input_dims: vec![ALPHANUMERIC_DIM, SPECIAL_DIM, ACCELEROMETER_DIM],
                    hidden: *hidden,
                    classes: spec.classes,
                    head: *head,
                },
                &mut init,
            )?;
            execute(
                cfg,
                model,
                scaler.examples(&train_s),
                scaler.examples(&test_s),
            )
        }
        _ => Err(Error::Config("dataset and workload do not match".into())),
    }
}

/// Generates the configured dataset into `dir` and echoes the generator
/// config there as `generator.toml`. Returns the number of samples written.
pub fn generate_dataset(cfg: &GeneratorConfig, dir: impl AsRef<Path>) -> Result<usize> {
    let dir = dir.as_ref();
    let n = match &cfg.dataset {
        DatasetConfig::Classification(spec) => {
            let data = gen_classification(cfg.seed, spec)?;
            write_classification(dir, &data)?;
            data.len()
        }
        DatasetConfig::Sessions(spec) => {
            let sessions = gen_multiview_sessions(cfg.seed, spec)?;
            write_sessions(dir, &sessions)?;
            sessions.len()
        }
    };
    fs::write(dir.join("generator.toml"), cfg.to_toml()?)?;
    Ok(n)
}

/// Pooled-data SGD, one step per round, sharing batch streams with client 0
/// of a federation built from the same seed.
struct Centralized<M: Model<f64>> {
    template: M,
    client: ClientState<f64, M::Input>,
    rng: SimRng,
    round: u64,
}

enum Engine<M: Model<f64>> {
    Centralized(Centralized<M>),
    Federated(Federation<f64, M>, Option<PrivacyLedger>),
}

impl<M: Model<f64>> Engine<M>
where
    M::Input: Clone,
{
    fn params(&self) -> &ParamVector<f64> {
        match self {
            Self::Centralized(c) => &c.client.params,
            Self::Federated(f, _) => &f.server().params,
        }
    }

    fn round(&mut self, protocol: &ProtocolConfig) -> Result<RoundTrace> {
        match (self, protocol) {
            (Self::Centralized(c), ProtocolConfig::Centralized(p)) => {
                let (params, loss) = local_sgd(
                    &c.template,
                    &c.client.params,
                    &c.client,
                    &c.rng,
                    c.round,
                    1,
                    p.learning_rate,
                    p.batch_size,
                )?;
                c.client.params = params;
                let trace =
                    RoundTrace::new(c.round, ProtocolKind::Centralized, vec![0], loss, 0, 0);
                c.round += 1;
                Ok(trace)
            }
            (Self::Federated(f, _), ProtocolConfig::Selective(p)) => f.selective_sgd_round(p),
            (Self::Federated(f, _), ProtocolConfig::FedAvg(p)) => f.fedavg_round(p),
            (Self::Federated(f, _), ProtocolConfig::NaiveSgd(p)) => {
                f.naive_distributed_sgd_round(p.learning_rate, p.batch_size)
            }
            (Self::Federated(f, Some(ledger)), ProtocolConfig::DpFedAvg(p)) => {
                let (fed, dp) = p.split();
                f.dp_fedavg_round(&fed, &dp, ledger)
            }
            _ => unreachable!("engine is built from the protocol"),
        }
    }
}

fn execute<M: Model<f64>>(
    cfg: &ExperimentConfig,
    model: M,
    train: Vec<Example<M::Input>>,
    test: Vec<Example<M::Input>>,
) -> Result<ExperimentOutcome>
where
    M::Input: Clone,
{
    // Centralized runs use the pooled data in one-client partition order.
    let centralized = matches!(cfg.protocol, ProtocolConfig::Centralized(_));
    let k = if centralized { 1 } else { cfg.clients };
    let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    let mut shards: Vec<Vec<Example<M::Input>>> = partition(&labels, k, cfg.partition, cfg.seed)?
        .clients
        .iter()
        .map(|idx| idx.iter().map(|&i| train[i].clone()).collect())
        .collect();
    let mut engine = match &cfg.protocol {
        ProtocolConfig::Centralized(_) => Engine::Centralized(Centralized {
            client: ClientState {
                id: 0,
                params: model.flatten(),
                shard: shards.pop().expect("one shard"),
            },
            template: model.clone(),
            rng: SimRng::new(cfg.seed),
            round: 0,
        }),
        protocol => {
            let ledger = match protocol {
                ProtocolConfig::DpFedAvg(p) => Some(PrivacyLedger::with_max_order(p.max_order)),
                _ => None,
            };
            Engine::Federated(Federation::new(model.clone(), shards, cfg.seed)?, ledger)
        }
    };

    let mut probe = model;
    let mut evaluate_at =
        |round: u64, params: &ParamVector<f64>, up: u64, down: u64, eps: Option<Epsilon>| {
            probe.unflatten(params)?;
            let tr = evaluate(&probe, &train)?;
            let te = evaluate(&probe, &test)?;
            let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
            Ok::<_, Error>(MetricRecord {
                round,
                train_loss: tr.loss,
                train_accuracy: tr.accuracy,
                loss: te.loss,
                accuracy: te.accuracy,
                f1: f1_macro(&te.predictions, &labels)?,
                scalars_up: up,
                scalars_down: down,
                epsilon: eps,
            })
        };

    let mut eps =
        matches!(cfg.protocol, ProtocolConfig::DpFedAvg(_)).then_some(Epsilon::Bounded(0.0));
    let (mut up, mut down) = (0u64, 0u64);
    let mut records = vec![evaluate_at(0, engine.params(), 0, 0, eps)?];
    let mut traces = Vec::with_capacity(cfg.rounds as usize);
    for round in 1..=cfg.rounds {
        let mut trace = engine.round(&cfg.protocol)?;
        up += trace.scalars_up;
        down += trace.scalars_down;
        if trace.epsilon_so_far.is_some() {
            eps = trace.epsilon_so_far;
        }
        let mut stop = false;
        if round % cfg.eval_every == 0 || round == cfg.rounds {
            let rec = evaluate_at(round, engine.params(), up, down, eps)?;
            trace.accuracy = Some(rec.accuracy);
            records.push(rec);
            if cfg.stop_at_target {
                stop = cfg
                    .target_accuracy
                    .is_some_and(|t| target_index(&records, t).is_some());
            }
        }
        traces.push(trace);
        if stop {
            break;
        }
    }

    let final_params = engine.params().clone();
    let ledger = match engine {
        Engine::Federated(_, ledger) => ledger,
        Engine::Centralized(_) => None,
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        records,
        traces,
        ledger,
        final_params,
    })
}

/// One line of a protocol comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub protocol: ProtocolKind,
    pub target_accuracy: Option<f64>,
    /// Round of the evaluation at which the smoothed accuracy hit the target.
    pub rounds_to_target: Option<u64>,
    pub uploads_to_target: Option<u64>,
    pub total_uploads: u64,
    pub final_accuracy: f64,
    pub final_epsilon: Option<Epsilon>,
    /// First row's uploads-to-target divided by this row's.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Builds the comparison table for finished runs; the first is the baseline.
pub fn summarize(outcomes: &[ExperimentOutcome]) -> Comparison {
    let mut rows: Vec<ComparisonRow> = outcomes
        .iter()
        .map(|o| {
            let hit = o.config.target_accuracy.and_then(|t| o.target_index(t));
            let last = o.final_record();
            ComparisonRow {
                name: o.config.label(),
                protocol: o.config.protocol.kind(),
                target_accuracy: o.config.target_accuracy,
                rounds_to_target: hit.map(|i| o.records[i].round),
                uploads_to_target: hit.map(|i| o.records[i].scalars_up),
                total_uploads: last.scalars_up,
                final_accuracy: last.accuracy,
                final_epsilon: last.epsilon,
                ratio: None,
            }
        })
        .collect();
    let base = rows.first().and_then(|r| r.uploads_to_target);
    for r in &mut rows {
        r.ratio = match (base, r.uploads_to_target) {
            (Some(b), Some(u)) if u > 0 => Some(b as f64 / u as f64),
            (Some(0), Some(0)) => Some(1.0),
            _ => None,
        };
    }
    Comparison { rows }
}

/// Runs every config and compares uploads needed to reach the target
/// accuracy. Configs must share dataset, workload and seed.
pub fn compare_protocols(
    cfgs: &[ExperimentConfig],
) -> Result<(Comparison, Vec<ExperimentOutcome>)> {
    let first = cfgs.first().ok_or(Error::Empty("config list"))?;
    for c in cfgs {
        c.validate()?;
        if c.dataset != first.dataset || c.workload != first.workload || c.seed != first.seed {
            return Err(Error::Config(format!(
                "{} does not share dataset, workload and seed with {}",
                c.label(),
                first.label()
            )));
        }
    }
    let outcomes = cfgs
        .iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&outcomes), outcomes))
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "name",
            "protocol",
            "target",
            "rounds_to_target",
            "uploads_to_target",
            "total_uploads",
            "final_acc",
            "final_eps",
            "ratio",
        ])?;
        let opt = |x: Option<String>| x.unwrap_or_else(|| "not reached".into());
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                serde_json::to_value(r.protocol)?
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                r.target_accuracy.map(|t| t.to_string()).unwrap_or_default(),
                opt(r.rounds_to_target.map(|x| x.to_string())),
                opt(r.uploads_to_target.map(|x| x.to_string())),
                r.total_uploads.to_string(),
                r.final_accuracy.to_string(),
                r.final_epsilon.map(|e| e.to_string()).unwrap_or_default(),
                r.ratio.map(|x| x.to_string()).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>12} {:>16} {:>14} {:>9} {:>10} {:>8}",
            "name", "rounds→tgt", "uploads→tgt", "total up", "acc", "eps", "ratio"
        )?;
        for r in &self.rows {
            let reached = |x: Option<u64>| x.map_or("not reached".to_string(), |v| v.to_string());
            writeln!(
                f,
                "{:<20} {:>12} {:>16} {:>14} {:>9.4} {:>10} {:>8}",
                r.name,
                reached(r.rounds_to_target),
                reached(r.uploads_to_target),
                r.total_uploads,
                r.final_accuracy,
                r.final_epsilon.map_or("-".to_string(), |e| match e {
                    Epsilon::Bounded(v) => format!("{v:.3}"),
                    Epsilon::Unbounded => "unbounded".into(),
                }),
                r.ratio.map_or("-".to_string(), |x| format!("{x:.2}")),
            )?;
        }
        Ok(())
    }
}
