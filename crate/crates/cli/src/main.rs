use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fedsim::federation::{FedAvgConfig, Participation, SelectionStrategy, SelectiveSgdConfig};
use fedsim::harness::{
    compare_protocols, generate_dataset, read_records, render_report, run_experiment,
    CentralizedConfig, DpFedAvgConfig, ExperimentConfig, ExperimentOutcome, GeneratorConfig,
    ProtocolConfig, ReportFormat,
};
use fedsim::privacy::{rounds_until_budget, AccountantState, PrivacyLedger, DEFAULT_MAX_ORDER};

/// Deterministic simulator for federated and differentially private training.
#[derive(Parser)]
#[command(name = "fedsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from the `seed` and `[dataset]` of a config file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train centrally on the pooled training split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Run a federated protocol.
    Federate {
        #[command(flatten)]
        run: RunArgs,
        /// Protocol to run; defaults to the one in the config file.
        #[arg(long, value_enum)]
        protocol: Option<Protocol>,
        #[command(flatten)]
        params: ProtocolArgs,
    },
    /// Privacy accounting queries.
    Privacy {
        #[command(subcommand)]
        query: PrivacyQuery,
    },
    /// Run several configs on the same data and compare uploads to target accuracy.
    Compare {
        /// Config files; the first is the baseline for the ratio column.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a `metrics.jsonl` file.
    Report {
        metrics: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for the echoed config, metrics, traces and checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    stop_at_target: bool,
}

#[derive(Args, Default)]
struct ProtocolArgs {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    local_steps: Option<usize>,
    /// Clients per FedAvg round, as a fraction of K.
    #[arg(long)]
    participation: Option<f64>,
    #[arg(long)]
    upload_fraction: Option<f64>,
    #[arg(long)]
    download_fraction: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long)]
    sampling_probability: Option<f64>,
    /// L2 clip bound; `inf` disables clipping.
    #[arg(long)]
    clip_bound: Option<f64>,
    #[arg(long)]
    noise_multiplier: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum PrivacyQuery {
    /// ε after `rounds` identical rounds.
    Epsilon {
        #[arg(long)]
        sampling_probability: f64,
        #[arg(long)]
        noise_multiplier: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
        max_order: u32,
    },
    /// Largest round count whose ε stays within the budget.
    RoundsUntilBudget {
        #[arg(long)]
        sampling_probability: f64,
        #[arg(long)]
        noise_multiplier: f64,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
        max_order: u32,
    },
    /// ε of a saved ledger.
    Ledger {
        path: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Selective,
    Fedavg,
    NaiveSgd,
    DpFedavg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    LargestMagnitude,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Jsonl => ReportFormat::Jsonl,
        }
    }
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.target_accuracy {
            cfg.target_accuracy = Some(v);
        }
        cfg.stop_at_target |= self.stop_at_target;
        Ok(cfg)
    }
}

/// Learning rate and batch size shared by every protocol.
fn common_params(p: &ProtocolConfig) -> (f64, Option<usize>) {
    match p {
        ProtocolConfig::Centralized(c) | ProtocolConfig::NaiveSgd(c) => {
            (c.learning_rate, c.batch_size)
        }
        ProtocolConfig::Selective(c) => (c.learning_rate, c.batch_size),
        ProtocolConfig::FedAvg(c) => (c.learning_rate, c.batch_size),
        ProtocolConfig::DpFedAvg(c) => (c.learning_rate, c.batch_size),
    }
}

fn local_steps(p: &ProtocolConfig) -> Option<usize> {
    match p {
        ProtocolConfig::FedAvg(c) => Some(c.local_steps),
        ProtocolConfig::DpFedAvg(c) => Some(c.local_steps),
        _ => None,
    }
}

/// The config's protocol, switched to `kind` if given, with flag overrides.
fn build_protocol(
    base: &ProtocolConfig,
    kind: Option<Protocol>,
    a: &ProtocolArgs,
) -> Result<ProtocolConfig> {
    let (lr, batch) = common_params(base);
    let learning_rate = a.learning_rate.unwrap_or(lr);
    let batch_size = a.batch_size.or(batch);
    let steps = a.local_steps.or(local_steps(base)).unwrap_or(1);
    let kind = kind.unwrap_or(match base {
        ProtocolConfig::Selective(_) => Protocol::Selective,
        ProtocolConfig::FedAvg(_) => Protocol::Fedavg,
        ProtocolConfig::NaiveSgd(_) => Protocol::NaiveSgd,
        ProtocolConfig::DpFedAvg(_) => Protocol::DpFedavg,
        ProtocolConfig::Centralized(_) => {
            bail!("config runs centralized training; use `train` or pass --protocol")
        }
    });
    Ok(match kind {
        Protocol::NaiveSgd => ProtocolConfig::NaiveSgd(CentralizedConfig {
            learning_rate,
            batch_size,
        }),
        Protocol::Fedavg => {
            let participation = match (a.participation, base) {
                (Some(f), _) => Participation::Fraction(f),
                (None, ProtocolConfig::FedAvg(c)) => c.participation,
                (None, _) => Participation::All,
            };
            ProtocolConfig::FedAvg(FedAvgConfig {
                local_steps: steps,
                learning_rate,
                batch_size,
                participation,
            })
        }
        Protocol::Selective => {
            let prev = match base {
                ProtocolConfig::Selective(c) => Some(c),
                _ => None,
            };
            ProtocolConfig::Selective(SelectiveSgdConfig {
                upload_fraction: a
                    .upload_fraction
                    .or(prev.map(|c| c.upload_fraction))
                    .context("selective needs --upload-fraction")?,
                download_fraction: a
                    .download_fraction
                    .or(prev.map(|c| c.download_fraction))
                    .context("selective needs --download-fraction")?,
                strategy: match a.strategy {
                    Some(Strategy::LargestMagnitude) => SelectionStrategy::LargestMagnitude,
                    Some(Strategy::Random) => SelectionStrategy::Random,
                    None => prev.map(|c| c.strategy).unwrap_or_default(),
                },
                learning_rate,
                batch_size,
            })
        }
        Protocol::DpFedavg => {
            let prev = match base {
                ProtocolConfig::DpFedAvg(c) => Some(c),
                _ => None,
            };
            ProtocolConfig::DpFedAvg(DpFedAvgConfig {
                local_steps: steps,
                learning_rate,
                batch_size,
                sampling_probability: a
                    .sampling_probability
                    .or(prev.map(|c| c.sampling_probability))
                    .context("dp-fedavg needs --sampling-probability")?,
                clip_bound: a
                    .clip_bound
                    .or(prev.map(|c| c.clip_bound))
                    .context("dp-fedavg needs --clip-bound")?,
                noise_multiplier: a
                    .noise_multiplier
                    .or(prev.map(|c| c.noise_multiplier))
                    .context("dp-fedavg needs --noise-multiplier")?,
                delta: a.delta.or(prev.map(|c| c.delta)).unwrap_or(1e-5),
                max_order: prev.map_or(DEFAULT_MAX_ORDER, |c| c.max_order),
            })
        }
    })
}

fn finish(outcome: &ExperimentOutcome, out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            outcome
                .write_to(dir)
                .with_context(|| format!("writing results to {}", dir.display()))?;
            let last = outcome.final_record();
            println!(
                "{}: round {} test acc {:.4} f1 {:.4} uploaded {}{} -> {}",
                outcome.config.label(),
                last.round,
                last.accuracy,
                last.f1,
                last.scalars_up,
                last.epsilon
                    .map(|e| format!(" eps {e}"))
                    .unwrap_or_default(),
                dir.display()
            );
        }
        None => print!("{}", render_report(&outcome.records, ReportFormat::Csv)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed } => {
            let mut cfg = GeneratorConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let n = generate_dataset(&cfg, &out)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train {
            run,
            learning_rate,
            batch_size,
        } => {
            let mut cfg = run.load()?;
            let (lr, batch) = common_params(&cfg.protocol);
            cfg.protocol = ProtocolConfig::Centralized(CentralizedConfig {
                learning_rate: learning_rate.unwrap_or(lr),
                batch_size: batch_size.or(batch),
            });
            cfg.validate()?;
            finish(&run_experiment(&cfg)?, run.out.as_deref())?;
        }
        Command::Federate {
            run,
            protocol,
            params,
        } => {
            let mut cfg = run.load()?;
            cfg.protocol = build_protocol(&cfg.protocol, protocol, &params)?;
            cfg.validate()?;
            finish(&run_experiment(&cfg)?, run.out.as_deref())?;
        }
        Command::Privacy { query } => match query {
            PrivacyQuery::Epsilon {
                sampling_probability,
                noise_multiplier,
                rounds,
                delta,
                max_order,
            } => {
                if max_order == 0 {
                    bail!("--max-order must be >= 1");
                }
                let mut state = AccountantState::new(max_order);
                for _ in 0..rounds {
                    state.compose_round(sampling_probability, noise_multiplier)?;
                }
                println!("{}", state.epsilon_at_delta(delta)?);
            }
            PrivacyQuery::RoundsUntilBudget {
                sampling_probability,
                noise_multiplier,
                budget,
                delta,
                max_order,
            } => {
                let t = rounds_until_budget(
                    sampling_probability,
                    noise_multiplier,
                    delta,
                    budget,
                    max_order,
                )?;
                println!("{t}");
            }
            PrivacyQuery::Ledger { path, delta } => {
                let ledger = PrivacyLedger::load(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                println!("rounds {} eps {}", ledger.len(), ledger.epsilon(delta)?);
            }
        },
        Command::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(ExperimentConfig::load)
                .collect::<fedsim::Result<Vec<_>>>()?;
            let (table, outcomes) = compare_protocols(&cfgs)?;
            print!("{table}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("comparison.csv"), table.to_csv()?)?;
                for (i, o) in outcomes.iter().enumerate() {
                    o.write_to(dir.join(format!("{i}-{}", o.config.label())))?;
                }
            }
        }
        Command::Report {
            metrics,
            format,
            out,
        } => {
            let records =
                read_records(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            let text = render_report(&records, format.into())?;
            match out {
                Some(path) => {
                    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
