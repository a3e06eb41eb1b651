use fedsim::datagen::{gen_classification, partition, ClassificationSpec, PartitionMode};
use fedsim::federation::{
    communication_cost, fraction_count, DpConfig, FedAvgConfig, Federation, Participation,
    SelectionStrategy, SelectiveSgdConfig,
};
use fedsim::linalg::{Matrix, Vector};
use fedsim::models::{loss_and_gradient, sgd_apply, Example, MlpModel, Model, Parameterized};
use fedsim::privacy::PrivacyLedger;
use fedsim::rng::SimRng;
use fedsim::Result;

type Data = Vec<Example<Vector<f64>>>;

fn blobs(n: usize, seed: u64) -> Data {
    gen_classification(
        seed,
        &ClassificationSpec {
            n,
            classes: 3,
            dim: 4,
            separation: 3.0,
        },
    )
    .unwrap()
    .examples()
}

/// Shards with deliberately unequal sizes.
fn uneven_shards(data: &Data, k: usize) -> Vec<Data> {
    let mut out = vec![Vec::new(); k];
    let mut i = 0;
    for (c, shard) in out.iter_mut().enumerate() {
        let take = 5 + 3 * c;
        shard.extend_from_slice(&data[i..i + take]);
        i += take;
    }
    out
}

fn equal_shards(data: &Data, k: usize) -> Vec<Data> {
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    let p = partition(&labels, k, PartitionMode::Iid, 0).unwrap();
    p.clients
        .iter()
        .map(|c| c.iter().map(|&i| data[i].clone()).collect())
        .collect()
}

fn mlp(seed: u64) -> MlpModel<f64> {
    MlpModel::new(&[4, 6, 3], &mut SimRng::new(seed)).unwrap()
}

fn fedavg(e: usize, lr: f64) -> FedAvgConfig {
    FedAvgConfig {
        local_steps: e,
        learning_rate: lr,
        batch_size: None,
        participation: Participation::All,
    }
}

#[test]
fn fedavg_single_step_matches_naive_sgd() {
    let data = blobs(200, 1);
    for k in [2, 5] {
        let shards = uneven_shards(&data, k);
        let mut a = Federation::new(mlp(k as u64), shards.clone(), 3).unwrap();
        let mut b = Federation::new(mlp(k as u64), shards, 3).unwrap();
        for _ in 0..50 {
            a.fedavg_round(&fedavg(1, 0.2)).unwrap();
            b.naive_distributed_sgd_round(0.2, None).unwrap();
            let worst = a
                .server()
                .params
                .values()
                .iter()
                .zip(b.server().params.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-12, "K={k}: {worst}");
        }
    }
}

/// One scalar weight `w`; a sample's input is its gradient `g`, and its
/// "loss" is `g · w`.
#[derive(Clone)]
struct LinearProbe {
    w: Matrix<f64>,
}

impl Parameterized<f64> for LinearProbe {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix<f64>)) {
        f("w", &self.w)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<f64>)) {
        f("w", &mut self.w)
    }
}

impl Model<f64> for LinearProbe {
    type Input = f64;
    fn num_classes(&self) -> usize {
        1
    }
    fn forward(&self, g: &f64) -> Result<Vector<f64>> {
        Ok(vec![g * self.w.get(0, 0)].into())
    }
    fn accumulate_gradient(&self, g: &f64, _: usize, scale: f64, grad: &mut Self) -> Result<f64> {
        let cur = grad.w.get(0, 0);
        grad.w.set(0, 0, cur + scale * g);
        Ok(g * self.w.get(0, 0))
    }
}

#[test]
fn hand_evaluated_update_forms() {
    let probe = LinearProbe {
        w: Matrix::zeros(1, 1),
    };
    let shards = vec![vec![Example::new(1.0, 0)], vec![Example::new(3.0, 0)]];
    let mut a = Federation::new(probe.clone(), shards.clone(), 0).unwrap();
    let mut b = Federation::new(probe, shards, 0).unwrap();
    a.fedavg_round(&fedavg(1, 0.1)).unwrap();
    b.naive_distributed_sgd_round(0.1, None).unwrap();
    assert!((a.server().params.values()[0] + 0.2).abs() < 1e-15);
    assert!((b.server().params.values()[0] + 0.2).abs() < 1e-15);
}

#[test]
fn zero_gradients_and_zero_rate_leave_model_unchanged() {
    let probe = LinearProbe {
        w: Matrix::from_rows(&[&[0.7]]).unwrap(),
    };
    let shards = vec![vec![Example::new(0.0, 0)], vec![Example::new(0.0, 0); 3]];
    let mut f = Federation::new(probe, shards, 0).unwrap();
    f.fedavg_round(&fedavg(4, 0.5)).unwrap();
    assert_eq!(f.server().params.values(), &[0.7]);

    let data = blobs(60, 2);
    let mut g = Federation::new(mlp(0), uneven_shards(&data, 2), 0).unwrap();
    let before = g.server().params.clone();
    g.naive_distributed_sgd_round(0.0, None).unwrap();
    assert_eq!(g.server().params, before);
}

#[test]
fn single_client_reduces_to_local_training() {
    let data = blobs(50, 3);
    let model = mlp(1);
    let mut f = Federation::new(model.clone(), vec![data.clone()], 0).unwrap();
    f.fedavg_round(&fedavg(3, 0.1)).unwrap();
    let mut p = model.flatten();
    let batch: Vec<_> = data.iter().collect();
    let mut m = model.clone();
    for _ in 0..3 {
        m.unflatten(&p).unwrap();
        let (_, g) = loss_and_gradient(&m, &batch).unwrap();
        p = sgd_apply(&p, &g, 0.1).unwrap();
    }
    assert_eq!(f.server().params, p);

    let mut s = Federation::new(model.clone(), vec![data.clone()], 0).unwrap();
    s.naive_distributed_sgd_round(0.1, None).unwrap();
    let (_, g) = loss_and_gradient(&model, &batch).unwrap();
    assert_eq!(
        s.server().params,
        sgd_apply(&model.flatten(), &g, 0.1).unwrap()
    );
}

#[test]
fn full_sharing_selective_sgd_is_centralized_sgd() {
    let data = blobs(80, 4);
    let model = mlp(2);
    let cfg = SelectiveSgdConfig {
        upload_fraction: 1.0,
        download_fraction: 1.0,
        strategy: SelectionStrategy::LargestMagnitude,
        learning_rate: 0.3,
        batch_size: None,
    };
    let mut f = Federation::new(model.clone(), vec![data.clone()], 0).unwrap();
    let batch: Vec<_> = data.iter().collect();
    let mut m = model;
    let mut p = m.flatten();
    for _ in 0..20 {
        f.selective_sgd_round(&cfg).unwrap();
        m.unflatten(&p).unwrap();
        let (_, g) = loss_and_gradient(&m, &batch).unwrap();
        p = sgd_apply(&p, &g, 0.3).unwrap();
        assert_eq!(f.server().params, p);
    }
}

#[test]
fn selective_upload_counts() {
    let data = blobs(90, 5);
    let mut f = Federation::new(mlp(3), uneven_shards(&data, 3), 0).unwrap();
    let d = f.dim();
    for strategy in [
        SelectionStrategy::LargestMagnitude,
        SelectionStrategy::Random,
    ] {
        let cfg = SelectiveSgdConfig {
            upload_fraction: 0.1,
            download_fraction: 0.5,
            strategy,
            learning_rate: 0.1,
            batch_size: Some(4),
        };
        let t = f.selective_sgd_round(&cfg).unwrap();
        assert_eq!(t.scalars_up, 3 * fraction_count(0.1, d) as u64);
        assert_eq!(t.scalars_up, 3 * (0.1 * d as f64).ceil() as u64);
        assert_eq!(t.scalars_down, 3 * fraction_count(0.5, d) as u64);
    }
}

#[test]
fn fedavg_communication_counts() {
    let data = blobs(100, 6);
    let mut f = Federation::new(mlp(4), equal_shards(&data, 4), 0).unwrap();
    let d = f.dim() as u64;
    let traces: Vec<_> = (0..3)
        .map(|_| f.fedavg_round(&fedavg(2, 0.1)).unwrap())
        .collect();
    assert!(traces
        .iter()
        .all(|t| t.scalars_up == 4 * d && t.scalars_down == 4 * d));
    assert_eq!(communication_cost(&traces), (12 * d, 12 * d));

    let mut cfg = fedavg(1, 0.1);
    cfg.participation = Participation::Count(2);
    let t = f.fedavg_round(&cfg).unwrap();
    assert_eq!(t.participants.len(), 2);
    assert_eq!(t.scalars_up, 2 * d);
}

fn dp(p: f64, s: f64, z: f64) -> DpConfig {
    DpConfig {
        sampling_probability: p,
        clip_bound: s,
        noise_multiplier: z,
        delta: 1e-5,
    }
}

#[test]
fn dp_with_features_disabled_is_fedavg() {
    let data = blobs(200, 7);
    let shards = equal_shards(&data, 5);
    let cfg = fedavg(3, 0.2);
    let mut a = Federation::new(mlp(5), shards.clone(), 11).unwrap();
    let mut b = Federation::new(mlp(5), shards, 11).unwrap();
    let mut ledger = PrivacyLedger::new();
    for _ in 0..50 {
        a.fedavg_round(&cfg).unwrap();
        let t = b
            .dp_fedavg_round(&cfg, &dp(1.0, f64::INFINITY, 0.0), &mut ledger)
            .unwrap();
        assert_eq!(t.participants, vec![0, 1, 2, 3, 4]);
        assert_eq!(a.server().params, b.server().params);
    }
    assert_eq!(ledger.len(), 50);
}

#[test]
fn clipped_deltas_respect_bound() {
    let data = blobs(150, 8);
    let mut f = Federation::new(mlp(6), equal_shards(&data, 5), 2).unwrap();
    let mut ledger = PrivacyLedger::new();
    let bound = 0.05;
    for _ in 0..100 {
        let t = f
            .dp_fedavg_round(&fedavg(2, 0.5), &dp(1.0, bound, 0.0), &mut ledger)
            .unwrap();
        assert_eq!(t.clipped_norms.len(), 5);
        assert!(
            t.clipped_norms.iter().all(|&n| n <= bound),
            "{:?}",
            t.clipped_norms
        );
    }
}

#[test]
fn participation_rate_and_reproducibility() {
    let data = blobs(30, 9);
    let shards = equal_shards(&data, 10);
    let mut ledger = PrivacyLedger::new();
    let cfg = FedAvgConfig {
        learning_rate: 0.0,
        ..fedavg(1, 0.0)
    };
    let mut f = Federation::new(mlp(7), shards.clone(), 5).unwrap();
    let mut g = Federation::new(mlp(7), shards, 5).unwrap();
    let rounds = 10_000;
    let mut total = 0usize;
    for _ in 0..rounds {
        let a = f
            .dp_fedavg_round(&cfg, &dp(0.3, 1.0, 0.0), &mut ledger)
            .unwrap();
        let b = g
            .dp_fedavg_round(&cfg, &dp(0.3, 1.0, 0.0), &mut ledger)
            .unwrap();
        assert_eq!(a.participants, b.participants);
        total += a.participants.len();
    }
    let rate = total as f64 / rounds as f64;
    assert!((rate - 3.0).abs() / 3.0 < 0.02, "{rate}");
}

#[test]
fn noisy_rounds_are_seed_deterministic() {
    let data = blobs(120, 10);
    let shards = equal_shards(&data, 6);
    let run = |seed| {
        let mut f = Federation::new(mlp(8), shards.clone(), seed).unwrap();
        let mut ledger = PrivacyLedger::new();
        let mut traces = Vec::new();
        for _ in 0..10 {
            traces.push(
                f.dp_fedavg_round(&fedavg(2, 0.1), &dp(0.5, 1.0, 1.1), &mut ledger)
                    .unwrap(),
            );
        }
        (
            f.server().params.clone(),
            serde_json::to_string(&traces).unwrap(),
        )
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).0, run(2).0);
}

#[test]
fn degenerate_federations_rejected() {
    assert!(Federation::new(mlp(0), Vec::<Data>::new(), 0).is_err());
    assert!(Federation::new(mlp(0), vec![blobs(10, 0), Vec::new()], 0).is_err());
    let mut f = Federation::new(mlp(0), vec![blobs(10, 0)], 0).unwrap();
    assert!(f.fedavg_round(&fedavg(0, 0.1)).is_err());
    let mut cfg = fedavg(1, 0.1);
    cfg.participation = Participation::Count(0);
    assert!(f.fedavg_round(&cfg).is_err());
    let mut ledger = PrivacyLedger::new();
    assert!(f
        .dp_fedavg_round(&fedavg(1, 0.1), &dp(0.0, 1.0, 1.0), &mut ledger)
        .is_err());
    assert!(f
        .dp_fedavg_round(&fedavg(1, 0.1), &dp(1.0, f64::INFINITY, 1.0), &mut ledger)
        .is_err());
}
