//! Synchronous protocol simulations over a global parameter server.
//!
//! A [`Federation`] owns the server state and every client. Each round
//! fans client work out in parallel and then aggregates results in
//! ascending client-id order, so a run is bit-reproducible from its seed
//! and configuration regardless of thread scheduling.

mod config;
mod trace;

use rayon::prelude::*;

pub use config::{DpConfig, FedAvgConfig, Participation, SelectionStrategy, SelectiveSgdConfig};
pub use trace::{communication_cost, ProtocolKind, RoundTrace};

use crate::error::{invalid, Error, Result};
use crate::models::{loss_and_gradient, Example, Model, ParamVector};
use crate::privacy::PrivacyLedger;
use crate::rng::{streams, SimRng};
use crate::scalar::Scalar;

type SelectiveUpdate<T> = (ParamVector<T>, Vec<(usize, T)>, f64);

/// A simulated device holding a private shard.
#[derive(Debug, Clone)]
pub struct ClientState<T, X> {
    pub id: usize,
    pub shard: Vec<Example<X>>,
    /// The client's local model; updated by the rounds it takes part in.
    pub params: ParamVector<T>,
}

impl<T, X> ClientState<T, X> {
    pub fn num_samples(&self) -> usize {
        self.shard.len()
    }
}

#[derive(Debug, Clone)]
pub struct ServerState<T> {
    pub params: ParamVector<T>,
    pub round: u64,
    pub total_samples: usize,
}

pub struct Federation<T: Scalar, M: Model<T>> {
    template: M,
    server: ServerState<T>,
    clients: Vec<ClientState<T, M::Input>>,
    rng: SimRng,
}

impl<T: Scalar, M: Model<T>> Federation<T, M>
where
    M::Input: Clone,
{
    /// Registers one client per shard; every client starts from `model`.
    pub fn new(model: M, shards: Vec<Vec<Example<M::Input>>>, seed: u64) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Empty("client set"));
        }
        if let Some(k) = shards.iter().position(Vec::is_empty) {
            return Err(invalid(format!("client {k} has an empty shard")));
        }
        let params = model.flatten();
        let clients: Vec<_> = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| ClientState {
                id,
                shard,
                params: params.clone(),
            })
            .collect();
        let total_samples = clients.iter().map(ClientState::num_samples).sum();
        Ok(Self {
            template: model,
            server: ServerState {
                params,
                round: 0,
                total_samples,
            },
            clients,
            rng: SimRng::new(seed),
        })
    }
}

impl<T: Scalar, M: Model<T>> Federation<T, M> {
    pub fn server(&self) -> &ServerState<T> {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState<T, M::Input>] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.server.params.len()
    }

    /// The global model materialised as a model value.
    pub fn global_model(&self) -> Result<M> {
        let mut m = self.template.clone();
        m.unflatten(&self.server.params)?;
        Ok(m)
    }

    fn model_at(&self, params: &ParamVector<T>) -> Result<M> {
        let mut m = self.template.clone();
        m.unflatten(params)?;
        Ok(m)
    }

    fn finish_round(&mut self, params: ParamVector<T>) {
        self.server.params = params;
        self.server.round += 1;
    }

    /// Distributed selective SGD.
    pub fn selective_sgd_round(&mut self, cfg: &SelectiveSgdConfig) -> Result<RoundTrace> {
        cfg.validate()?;
        let round = self.server.round;
        let dim = self.dim();
        let global = self.server.params.clone();
        let lr = T::of(cfg.learning_rate);
        let n_down = fraction_count(cfg.download_fraction, dim);
        let n_up = fraction_count(cfg.upload_fraction, dim);

        let results: Vec<SelectiveUpdate<T>> = self
            .clients
            .par_iter()
            .map(|client| {
                let sel = self
                    .rng
                    .fork_path(&[streams::SELECTION, round, client.id as u64]);
                // Download: refresh the coordinates that drifted most from the
                // global model (or random ones).
                let mut local = client.params.clone();
                let drift: Vec<T> = global
                    .values()
                    .iter()
                    .zip(local.values())
                    .map(|(&g, &l)| g - l)
                    .collect();
                for i in select_coordinates(&drift, n_down, cfg.strategy, &mut sel.fork(0)) {
                    local.values_mut()[i] = global.values()[i];
                }
                let model = self.model_at(&local)?;
                let batch = local_batch(&self.rng, client, round, 0, cfg.batch_size);
                let (loss, grad) = loss_and_gradient(&model, &batch)?;
                let upload: Vec<(usize, T)> =
                    select_coordinates(grad.values(), n_up, cfg.strategy, &mut sel.fork(1))
                        .into_iter()
                        .map(|i| (i, grad.values()[i]))
                        .collect();
                local.axpy(-lr, &grad)?;
                Ok((local, upload, loss.as_f64()))
            })
            .collect::<Result<_>>()?;

        let mut next = global;
        let mut losses = Vec::with_capacity(results.len());
        for (client, (local, upload, loss)) in self.clients.iter_mut().zip(results) {
            for (i, g) in upload {
                next.values_mut()[i] -= lr * g;
            }
            client.params = local;
            losses.push(loss);
        }
        let k = self.clients.len() as u64;
        self.finish_round(next);
        Ok(RoundTrace::new(
            round,
            ProtocolKind::Selective,
            (0..self.clients.len()).collect(),
            mean(&losses),
            k * n_up as u64,
            k * n_down as u64,
        ))
    }

    fn choose_participants(&self, policy: Participation, round: u64) -> Result<Vec<usize>> {
        let k = self.clients.len();
        let mut ids = match policy {
            Participation::All => (0..k).collect(),
            Participation::Count(c) => {
                if c == 0 {
                    return Err(Error::Empty("participant set"));
                }
                let mut r = self.rng.fork_path(&[streams::PARTICIPATION, round]);
                r.choose_indices(k, c.min(k))
            }
            Participation::Fraction(f) => {
                let c = fraction_count(f, k);
                let mut r = self.rng.fork_path(&[streams::PARTICIPATION, round]);
                r.choose_indices(k, c)
            }
        };
        ids.sort_unstable();
        Ok(ids)
    }

    /// `E` local SGD steps from the current global model on each listed client.
    fn train_locally(
        &self,
        ids: &[usize],
        cfg: &FedAvgConfig,
    ) -> Result<Vec<(ParamVector<T>, f64)>> {
        let round = self.server.round;
        let start = &self.server.params;
        ids.par_iter()
            .map(|&id| {
                let client = &self.clients[id];
                local_sgd(
                    &self.template,
                    start,
                    client,
                    &self.rng,
                    round,
                    cfg.local_steps,
                    T::of(cfg.learning_rate),
                    cfg.batch_size,
                )
            })
            .collect()
    }

    /// Federated averaging: `E` local steps per participant, then the
    /// `n_k`-weighted average of the returned models.
    pub fn fedavg_round(&mut self, cfg: &FedAvgConfig) -> Result<RoundTrace> {
        cfg.validate()?;
        let round = self.server.round;
        let ids = self.choose_participants(cfg.participation, round)?;
        if ids.is_empty() {
            return Err(Error::Empty("participant set"));
        }
        let results = self.train_locally(&ids, cfg)?;
        let total: usize = ids.iter().map(|&k| self.clients[k].num_samples()).sum();
        if total == 0 {
            return Err(invalid("participants hold zero samples"));
        }
        let global = self.server.params.clone();
        let mut agg = ParamVector::zeros(global.layout().clone());
        let mut losses = Vec::with_capacity(ids.len());
        for (&id, (local, loss)) in ids.iter().zip(results) {
            let w = T::of(self.clients[id].num_samples() as f64 / total as f64);
            agg.axpy(w, &local.sub(&global)?)?;
            self.clients[id].params = local;
            losses.push(loss);
        }
        let mut next = global;
        next.axpy(T::one(), &agg)?;
        let d = self.dim() as u64;
        let p = ids.len() as u64;
        self.finish_round(next);
        Ok(RoundTrace::new(
            round,
            ProtocolKind::FedAvg,
            ids,
            mean(&losses),
            p * d,
            p * d,
        ))
    }

    /// Naive distributed SGD: `ω ← ω - η Σ (n_k/n) g_k`, each `g_k` at `ω`.
    pub fn naive_distributed_sgd_round(
        &mut self,
        learning_rate: f64,
        batch_size: Option<usize>,
    ) -> Result<RoundTrace> {
        let round = self.server.round;
        let model = self.global_model()?;
        let grads: Vec<(T, ParamVector<T>)> = self
            .clients
            .par_iter()
            .map(|client| {
                let batch = local_batch(&self.rng, client, round, 0, batch_size);
                loss_and_gradient(&model, &batch)
            })
            .collect::<Result<_>>()?;
        let n = self.server.total_samples as f64;
        let mut pooled = ParamVector::zeros(self.server.params.layout().clone());
        let mut losses = Vec::with_capacity(grads.len());
        for (client, (loss, g)) in self.clients.iter().zip(&grads) {
            pooled.axpy(T::of(client.num_samples() as f64 / n), g)?;
            losses.push(loss.as_f64());
        }
        let mut next = self.server.params.clone();
        next.axpy(-T::of(learning_rate), &pooled)?;
        for client in &mut self.clients {
            client.params = next.clone();
        }
        let k = self.clients.len() as u64;
        let d = self.dim() as u64;
        self.finish_round(next);
        Ok(RoundTrace::new(
            round,
            ProtocolKind::NaiveSgd,
            (0..self.clients.len()).collect(),
            mean(&losses),
            k * d,
            k * d,
        ))
    }

    /// User-level differentially private federated averaging.
    ///
    /// Clients join independently with probability `p`; each participant's
    /// model delta is clipped to norm `S`; deltas are summed and divided by
    /// the fixed `p·K`; Gaussian noise with standard deviation `z·S/(p·K)`
    /// is added to that average; the round is recorded in `ledger`.
    pub fn dp_fedavg_round(
        &mut self,
        fed: &FedAvgConfig,
        dp: &DpConfig,
        ledger: &mut PrivacyLedger,
    ) -> Result<RoundTrace> {
        fed.validate()?;
        dp.validate()?;
        let round = self.server.round;
        let k = self.clients.len();
        let ids: Vec<usize> = (0..k)
            .filter(|&id| {
                self.rng
                    .fork_path(&[streams::PARTICIPATION, round, id as u64])
                    .bernoulli(dp.sampling_probability)
            })
            .collect();
        let results = self.train_locally(&ids, fed)?;

        let global = self.server.params.clone();
        let weight = T::of(1.0 / (dp.sampling_probability * k as f64));
        let bound = T::of(dp.clip_bound);
        let mut agg = ParamVector::zeros(global.layout().clone());
        let mut losses = Vec::with_capacity(ids.len());
        let mut norms = Vec::with_capacity(ids.len());
        for (&id, (local, loss)) in ids.iter().zip(results) {
            let delta = clip_update(&local.sub(&global)?, bound)?;
            norms.push(delta.norm().as_f64());
            agg.axpy(weight, &delta)?;
            self.clients[id].params = local;
            losses.push(loss);
        }
        if dp.noise_multiplier > 0.0 {
            let std = dp.noise_multiplier * dp.clip_bound / (dp.sampling_probability * k as f64);
            let mut noise_rng = self.rng.fork_path(&[streams::NOISE, round]);
            let noise =
                crate::rng::gaussian_sample(&mut noise_rng, T::zero(), T::of(std), agg.len())?;
            for (a, &e) in agg.values_mut().iter_mut().zip(noise.iter()) {
                *a += e;
            }
        }
        let mut next = global;
        next.axpy(T::one(), &agg)?;

        let clip = dp.clip_bound.is_finite().then_some(dp.clip_bound);
        ledger.record(dp.sampling_probability, dp.noise_multiplier, clip)?;
        let eps = ledger.epsilon(dp.delta)?;

        let d = self.dim() as u64;
        let p = ids.len() as u64;
        self.finish_round(next);
        let mut trace = RoundTrace::new(
            round,
            ProtocolKind::DpFedAvg,
            ids,
            mean(&losses),
            p * d,
            p * d,
        );
        trace.epsilon_so_far = Some(eps);
        trace.clipped_norms = norms;
        Ok(trace)
    }
}

/// `Δ · min(1, S/‖Δ‖₂)`. `S = ∞` disables clipping.
pub fn clip_update<T: Scalar>(delta: &ParamVector<T>, bound: T) -> Result<ParamVector<T>> {
    if !(bound > T::zero()) {
        return Err(invalid(format!("clip bound must be > 0, got {bound}")));
    }
    let norm = delta.norm();
    if norm <= bound {
        return Ok(delta.clone());
    }
    let mut out = delta.clone();
    out.scale(bound / norm);
    // Rounding in the rescale can overshoot by an ulp; pull back if so.
    while out.norm() > bound {
        out.scale(T::one() - T::epsilon());
    }
    Ok(out)
}

/// `ceil(fraction · n)`, with products within 1e-9 of an integer treated as
/// exact: `0.1 · 30` counts 3.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let c = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    (c as usize).clamp(1, n.max(1))
}

/// Picks `count` coordinate indices: the largest by magnitude (ties to the
/// lower index) or a uniformly random subset. Returned in ascending order.
pub fn select_coordinates<T: Scalar>(
    values: &[T],
    count: usize,
    strategy: SelectionStrategy,
    rng: &mut SimRng,
) -> Vec<usize> {
    let count = count.min(values.len());
    let mut idx: Vec<usize> = match strategy {
        _ if count == values.len() => (0..values.len()).collect(),
        SelectionStrategy::LargestMagnitude => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| {
                values[b]
                    .abs()
                    .partial_cmp(&values[a].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            order.truncate(count);
            order
        }
        SelectionStrategy::Random => rng.choose_indices(values.len(), count),
    };
    idx.sort_unstable();
    idx
}

/// The mini-batch for `(client, round, step)`. `None` or a size at least
/// the shard's selects the whole shard in order.
pub fn local_batch<'a, T, X>(
    root: &SimRng,
    client: &'a ClientState<T, X>,
    round: u64,
    step: usize,
    batch_size: Option<usize>,
) -> Vec<&'a Example<X>> {
    match batch_size {
        Some(b) if b < client.shard.len() => {
            let mut r = root.fork_path(&[streams::BATCH, client.id as u64, round, step as u64]);
            let mut idx = r.choose_indices(client.shard.len(), b);
            idx.sort_unstable();
            idx.into_iter().map(|i| &client.shard[i]).collect()
        }
        _ => client.shard.iter().collect(),
    }
}

/// Runs `steps` SGD steps from `start` on `client`'s shard. Returns the new
/// parameters and the loss of the first step.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd<T: Scalar, M: Model<T>>(
    template: &M,
    start: &ParamVector<T>,
    client: &ClientState<T, M::Input>,
    root: &SimRng,
    round: u64,
    steps: usize,
    lr: T,
    batch_size: Option<usize>,
) -> Result<(ParamVector<T>, f64)> {
    let mut model = template.clone();
    let mut params = start.clone();
    let mut first_loss = f64::NAN;
    for step in 0..steps {
        model.unflatten(&params)?;
        let batch = local_batch(root, client, round, step, batch_size);
        let (loss, grad) = loss_and_gradient(&model, &batch)?;
        if step == 0 {
            first_loss = loss.as_f64();
        }
        params.axpy(-lr, &grad)?;
    }
    Ok((params, first_loss))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
