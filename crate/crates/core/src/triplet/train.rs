use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{batch_cost, NegativeFilter, TripletError, TripletSpec, TripletUniverse};
use crate::dataset::{ClipBank, ClipId};
use crate::par::Execution;
use crate::seed::{self, tag};
use crate::slowfast::{ModelError, SlowFastModel};
use crate::tensor::{Optimizer, OptimizerConfig, ParamGrads, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error("non-finite {what} at iteration {iteration} (batch seed {batch_seed:#018x})")]
    NonFinite {
        what: &'static str,
        iteration: usize,
        batch_seed: u64,
    },
    #[error("training stopped by observer: {0}")]
    Observer(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Stop once the smoothed loss falls below this.
    pub stop_threshold: f64,
    pub smoothing_window: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Observer calls with `checkpoint = true` every this many iterations;
    /// 0 disables.
    pub checkpoint_every: usize,
    pub negative_filter: NegativeFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.7,
            batch_size: 64,
            max_iterations: 2000,
            stop_threshold: 0.05,
            smoothing_window: 50,
            optimizer: OptimizerConfig::default(),
            seed: 42,
            checkpoint_every: 0,
            negative_filter: NegativeFilter::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(TrainError::Config(format!("margin {} must be positive", self.margin)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.smoothing_window == 0 {
            return Err(TrainError::Config("smoothing_window must be >= 1".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(TrainError::Config("optimizer lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean batch loss per iteration.
    pub mean_loss: Vec<f64>,
    /// Summed batch loss per iteration.
    pub sum_loss: Vec<f64>,
    /// Moving average of `mean_loss` over the last `window` iterations
    /// (fewer at the start).
    pub smoothed_loss: Vec<f64>,
    pub window: usize,
    /// Iteration after which the stop criterion fired, if it did.
    pub stopped_at: Option<usize>,
}

impl TrainHistory {
    pub fn iterations(&self) -> usize {
        self.mean_loss.len()
    }

    fn push(&mut self, cost: super::BatchCost) {
        self.mean_loss.push(cost.mean);
        self.sum_loss.push(cost.sum);
        let n = self.mean_loss.len();
        let from = n.saturating_sub(self.window);
        let tail = &self.mean_loss[from..];
        self.smoothed_loss.push(tail.iter().sum::<f64>() / tail.len() as f64);
    }

    /// Smoothed loss once a full window has been observed.
    pub fn full_window_smoothed(&self) -> Option<f64> {
        (self.mean_loss.len() >= self.window).then(|| *self.smoothed_loss.last().expect("nonempty"))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_loss,smoothed_loss\n");
        for (i, (m, s)) in self.mean_loss.iter().zip(&self.smoothed_loss).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, m, s));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationReport {
    /// 1-based.
    pub iteration: usize,
    pub mean_loss: f64,
    pub smoothed_loss: f64,
    pub checkpoint: bool,
}

/// One optimization run over a clip bank.
pub struct Trainer<'a> {
    pub model: &'a mut SlowFastModel,
    pub bank: &'a ClipBank,
    pub universe: TripletUniverse,
    pub config: TrainConfig,
    pub exec: Execution,
}

fn clip(bank: &ClipBank, id: ClipId) -> Result<&Tensor<f32>, TrainError> {
    bank.get(id)
        .ok_or_else(|| TrainError::Config(format!("clip {id} missing from the bank")))
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut SlowFastModel,
        bank: &'a ClipBank,
        clients: &[u32],
        config: TrainConfig,
        exec: Execution,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if clients.is_empty() {
            return Err(TrainError::Config("no training clients".into()));
        }
        let universe = TripletUniverse::new(clients, bank.n_phrases, bank.n_emotions, config.negative_filter)?;
        Ok(Self {
            model,
            bank,
            universe,
            config,
            exec,
        })
    }

    pub fn batch_seed(&self, iteration: usize) -> u64 {
        seed::derive(self.config.seed, &[tag::BATCH, iteration as u64])
    }

    /// Runs one optimizer step on batch `iteration` and returns its cost.
    ///
    /// Clips are embedded once per batch however many triplets use them.
    /// Per-clip parameter gradients are summed in clip-id order, so the
    /// result is identical under sequential and parallel execution.
    pub fn step(&mut self, iteration: usize, optimizer: &mut Optimizer) -> Result<super::BatchCost, TrainError> {
        let batch_seed = self.batch_seed(iteration);
        let batch = self
            .universe
            .sample_batch(self.config.batch_size, &mut seed::rng(batch_seed, &[]))?;
        let ids: Vec<ClipId> = batch
            .iter()
            .flat_map(|t| [t.anchor, t.positive, t.negative])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let slot = |id: ClipId| ids.binary_search(&id).expect("id collected");
        let model: &SlowFastModel = self.model;
        let bank = self.bank;
        let traces = self
            .exec
            .try_map(&ids, |&id| model.trace(clip(bank, id)?).map_err(TrainError::from))
            .map_err(|e| match e {
                TrainError::Model(ModelError::Tensor(TensorError::NonFinite(_))) => TrainError::NonFinite {
                    what: "embedding",
                    iteration,
                    batch_seed,
                },
                e => e,
            })?;

        let mut loss_tape = Tape::<f32>::new();
        let leaves: Vec<_> = traces
            .iter()
            .map(|(tape, fwd)| loss_tape.leaf(tape.value(fwd.embedding).clone().with_requires_grad(true)))
            .collect();
        let mut losses = Vec::with_capacity(batch.len());
        for t in &batch {
            let [a, p, n] = [t.anchor, t.positive, t.negative].map(|id| leaves[slot(id)]);
            let dap = loss_tape.cosine_distance(a, p)?;
            let dan = loss_tape.cosine_distance(a, n)?;
            losses.push(loss_tape.triplet_loss(dap, dan, self.config.margin)?);
        }
        let per = losses
            .iter()
            .map(|&v| loss_tape.value(v).data()[0] as f64)
            .collect::<Vec<_>>();
        let cost = batch_cost(&per)?;
        if !cost.sum.is_finite() {
            return Err(TrainError::NonFinite {
                what: "loss",
                iteration,
                batch_seed,
            });
        }
        let stacked = loss_tape.stack_scalars(&losses)?;
        let mean = loss_tape.mean(stacked)?;
        let upstream = loss_tape.backward(mean, &Tensor::scalar(1.0))?;

        let work: Vec<usize> = (0..ids.len())
            .filter(|&i| upstream.wrt(leaves[i]).is_some_and(|g| g.iter().any(|v| *v != 0.0)))
            .collect();
        let n_params = model.params().len();
        let grads = self.exec.try_map(&work, |&i| -> Result<ParamGrads<f32>, TrainError> {
            let (tape, fwd) = &traces[i];
            let seed_grad = Tensor::new(vec![model.config().embed_dim], upstream.wrt(leaves[i]).expect("filtered").to_vec())?;
            Ok(tape.backward(fwd.embedding, &seed_grad)?.param_grads(n_params))
        })?;
        drop(traces);
        let mut total = ParamGrads::new(n_params);
        for g in &grads {
            total.merge(g);
        }
        if !total.is_finite() {
            return Err(TrainError::NonFinite {
                what: "gradient",
                iteration,
                batch_seed,
            });
        }
        let params = self.model.params_mut();
        params.zero_grads();
        for i in 0..n_params {
            if total.get(i).is_none() {
                let zeros = vec![0.0; params.get(i).tensor.numel()];
                total.add_into(i, &zeros);
            }
        }
        params.accumulate(&total)?;
        optimizer.step(params)?;
        params.zero_grads();
        Ok(cost)
    }

    /// Trains until the full-window smoothed loss drops below the stop
    /// threshold or `max_iterations` steps have run. `observer` sees every
    /// iteration and may abort by returning an error message.
    pub fn run(
        &mut self,
        mut observer: impl FnMut(&IterationReport, &SlowFastModel) -> Result<(), String>,
    ) -> Result<TrainHistory, TrainError> {
        let mut optimizer = Optimizer::new(self.config.optimizer.clone());
        let mut history = TrainHistory {
            window: self.config.smoothing_window,
            ..TrainHistory::default()
        };
        for iteration in 0..self.config.max_iterations {
            let cost = self.step(iteration, &mut optimizer)?;
            history.push(cost);
            let n = iteration + 1;
            let report = IterationReport {
                iteration: n,
                mean_loss: cost.mean,
                smoothed_loss: *history.smoothed_loss.last().expect("pushed"),
                checkpoint: self.config.checkpoint_every > 0 && n % self.config.checkpoint_every == 0,
            };
            observer(&report, self.model).map_err(TrainError::Observer)?;
            if history
                .full_window_smoothed()
                .is_some_and(|s| s < self.config.stop_threshold)
            {
                history.stopped_at = Some(n);
                break;
            }
        }
        Ok(history)
    }
}

/// Convenience wrapper: trains `model` on the takes of `clients` in `bank`.
pub fn train(
    model: &mut SlowFastModel,
    bank: &ClipBank,
    clients: &[u32],
    config: TrainConfig,
    exec: Execution,
) -> Result<TrainHistory, TrainError> {
    Trainer::new(model, bank, clients, config, exec)?.run(|_, _| Ok(()))
}

/// Mean of `D(A,P) − D(A,N)` over `n` triplets sampled from `universe`
/// with `seed_value`; negative means negatives sit farther than positives.
pub fn mean_separation(
    model: &SlowFastModel,
    bank: &ClipBank,
    universe: &TripletUniverse,
    n: usize,
    seed_value: u64,
    exec: Execution,
) -> Result<f64, TrainError> {
    let batch: Vec<TripletSpec> = universe.sample_batch(n, &mut seed::rng(seed_value, &[tag::EVAL]))?;
    let mut ids: Vec<ClipId> = batch
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let clips = ids.iter().map(|&id| clip(bank, id)).collect::<Result<Vec<_>, _>>()?;
    let emb = model.embed_batch(&clips, exec)?;
    let lookup = |id: ClipId| &emb[ids.binary_search(&id).expect("id collected")];
    let mut total = 0.0;
    for t in &batch {
        let dap = super::cosine_distance(lookup(t.anchor), lookup(t.positive))?;
        let dan = super::cosine_distance(lookup(t.anchor), lookup(t.negative))?;
        total += dap - dan;
    }
    Ok(total / batch.len() as f64)
}
