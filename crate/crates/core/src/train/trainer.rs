//! The training loop: popularity negatives, mini-batch AdamW, early stopping
//! on validation MRR.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{rank_instances, validation_instances, EvalInstance, Metrics, PoolConfig, PoolMode};
use crate::ingest::{PoiId, SplitDataset};
use crate::model::{CandidateSlate, Model, ModelConfig, PaddedHistory};
use crate::numeric::Gradients;
use crate::seed::{derived_rng, Purpose};

use super::config::TrainConfig;
use super::loss::ce_loss_with_grad;
use super::optim::AdamW;
use super::sampler::PopularitySampler;

/// Instances per gradient-accumulation chunk. Chunks are reduced in order,
/// so results do not depend on the thread count.
const CHUNK: usize = 8;

/// One training example: the positive sits at slate index 0.
#[derive(Debug, Clone)]
pub struct TrainInstance {
    pub history: PaddedHistory,
    pub positive: PoiId,
    pub slate: CandidateSlate,
    /// The positive does not occur in the (windowed) history.
    pub is_explore: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// Training produced a non-finite loss or gradient; the returned model is
    /// the last finite one.
    Diverged { message: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation checkpoint, or the last finite one after divergence.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Mean loss over all training instances before the first update.
    pub initial_loss: f64,
    pub stop: StopReason,
}

/// Owns the model and optimizer state for one training run.
pub struct Trainer<'a> {
    data: &'a SplitDataset,
    config: TrainConfig,
    model: Model,
    opt: AdamW,
    sampler: PopularitySampler,
    /// `(user index, position in the training sequence)` of every instance.
    positions: Vec<(usize, usize)>,
    val: Vec<EvalInstance>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a SplitDataset, model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.config.num_pois < data.num_pois() {
            return Err(Error::Config(format!(
                "model has {} POI rows but the dataset has {} POIs",
                model.config.num_pois,
                data.num_pois()
            )));
        }
        let sampler = PopularitySampler::new(&data.stats.popularity, data.num_pois(), config.add_one_smoothing)?;
        if sampler.support() < config.negatives + 1 {
            return Err(Error::Sampling(format!(
                "{} negatives requested but only {} POIs can be sampled",
                config.negatives,
                sampler.support()
            )));
        }
        if config.val_pool_size > data.num_pois() {
            return Err(Error::Config(format!(
                "val_pool_size {} exceeds the {} POIs",
                config.val_pool_size,
                data.num_pois()
            )));
        }
        // the last training event of each user is held back for validation
        let positions: Vec<(usize, usize)> = data
            .users
            .iter()
            .enumerate()
            .flat_map(|(u, seq)| (1..seq.train.len().saturating_sub(1)).map(move |t| (u, t)))
            .collect();
        if positions.is_empty() {
            return Err(Error::EmptyDataset("no training positions (every user needs 3+ training check-ins)".into()));
        }
        let val = validation_instances(data, model.config.history_len);
        let opt = AdamW::new(&model.params, config.lr, config.weight_decay);
        Ok(Trainer {
            data,
            config,
            model,
            opt,
            sampler,
            positions,
            val,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn num_instances(&self) -> usize {
        self.positions.len()
    }

    /// Builds training instance `idx` with freshly sampled negatives.
    pub fn instance<R: rand::Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> Result<TrainInstance> {
        let (u, t) = self.positions[idx];
        let seq = &self.data.users[u].train;
        let positive = seq[t].poi;
        let history = PaddedHistory::new(&seq[..t], self.model.config.history_len, &self.data.stats)?;
        let mut ids = Vec::with_capacity(1 + self.config.negatives);
        ids.push(positive);
        ids.extend(self.sampler.sample(positive, self.config.negatives, rng)?);
        let slate = CandidateSlate::from_dataset(ids, self.data)?;
        let is_explore = !history.contains(positive);
        Ok(TrainInstance {
            history,
            positive,
            slate,
            is_explore,
        })
    }

    fn weight(&self, inst: &TrainInstance) -> f64 {
        if inst.is_explore {
            self.config.explore_weight
        } else {
            1.0
        }
    }

    /// Training positions as ranking instances (history = preceding training
    /// check-ins), for measuring fit on the training data.
    pub fn fit_instances(&self) -> Vec<EvalInstance> {
        let len = self.model.config.history_len;
        self.positions
            .iter()
            .map(|&(u, t)| {
                let seq = &self.data.users[u].train;
                EvalInstance {
                    user: self.data.users[u].id,
                    event: t,
                    positive: seq[t].poi,
                    history: seq[t.saturating_sub(len)..t].to_vec(),
                }
            })
            .collect()
    }

    /// Mean weighted loss over every training instance at the current
    /// parameters, dropout off. Negatives come from a fixed stream.
    pub fn mean_loss(&self) -> Result<f64> {
        let losses: Vec<f64> = (0..self.positions.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = derived_rng(self.config.seed, Purpose::TrainInstance, u64::MAX - i as u64);
                let inst = self.instance(i, &mut rng)?;
                let scores = self.model.score(&inst.history, &inst.slate)?;
                ce_loss_with_grad(&scores, self.config.label_smoothing, self.weight(&inst)).map(|(l, _)| l)
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    fn chunk_gradients(&self, chunk: &[usize]) -> Result<(Gradients, f64)> {
        let mut grads = self.model.params.zero_gradients();
        let mut loss = 0.0;
        for &i in chunk {
            let stream = ((self.epoch as u64) << 32) | i as u64;
            let mut rng = derived_rng(self.config.seed, Purpose::TrainInstance, stream);
            let inst = self.instance(i, &mut rng)?;
            let cache = self
                .model
                .forward_with(&self.model.params, &inst.history, &inst.slate, Some(&mut rng))?;
            let (l, ds) = ce_loss_with_grad(&cache.scores, self.config.label_smoothing, self.weight(&inst))?;
            self.model.backward_with(&self.model.params, &cache, &ds, &mut grads);
            loss += l;
        }
        Ok((grads, loss))
    }

    /// One pass over the shuffled training instances; returns the mean loss.
    /// A non-finite loss or gradient aborts the epoch before the offending
    /// update, leaving the last finite parameters in place.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.positions.len()).collect();
        order.shuffle(&mut derived_rng(self.config.seed, Purpose::Shuffle, self.epoch as u64));
        let mut total = 0.0;
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let parts: Vec<(Gradients, f64)> = batch
                .par_chunks(CHUNK)
                .map(|c| self.chunk_gradients(c))
                .collect::<Result<_>>()
                .map_err(|e| self.divergence(step, e))?;
            let mut iter = parts.into_iter();
            let (mut grads, mut loss) = iter.next().expect("batches are non-empty");
            for (g, l) in iter {
                grads.add_assign(&g);
                loss += l;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(self.divergence(
                    step,
                    Error::Numeric {
                        location: "loss".into(),
                        msg: "non-finite loss or gradient".into(),
                    },
                ));
            }
            self.opt.step(&mut self.model.params, &grads);
            total += loss;
        }
        self.epoch += 1;
        Ok(total / self.positions.len() as f64)
    }

    fn divergence(&self, step: usize, e: Error) -> Error {
        match e {
            Error::Numeric { location, msg } => Error::Numeric {
                location: format!("epoch {} step {step}: {location}", self.epoch),
                msg,
            },
            other => other,
        }
    }

    /// Metrics on the held-back last training event of each user.
    pub fn validate(&self) -> Result<Metrics> {
        let pool = PoolConfig {
            mode: PoolMode::Sampled,
            size: self.config.val_pool_size,
            seed: self.config.seed,
        };
        let ranks: Vec<usize> = rank_instances(&self.model, self.data, &self.val, &pool)?
            .into_iter()
            .flatten()
            .collect();
        Ok(Metrics::from_ranks(&ranks))
    }
}

/// Trains a fresh model; see [`train_with`].
pub fn train(data: &SplitDataset, model_config: ModelConfig, config: TrainConfig) -> Result<TrainOutcome> {
    train_with(data, model_config, config, |_, _| {})
}

/// Trains a fresh model, calling `on_epoch` after every validated epoch.
/// Stops after `max_epochs` or once validation MRR has not improved for
/// `patience` epochs, and returns the best-MRR parameters.
pub fn train_with<F>(data: &SplitDataset, model_config: ModelConfig, config: TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &Model),
{
    let model = Model::new(model_config, config.seed)?;
    let mut trainer = Trainer::new(data, model, config)?;
    let initial_loss = trainer.mean_loss()?;
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..trainer.config.max_epochs {
        let train_loss = match trainer.run_epoch() {
            Ok(l) => l,
            Err(e @ Error::Numeric { .. }) => {
                stop = StopReason::Diverged { message: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let val = trainer.validate()?;
        let record = EpochRecord { epoch, train_loss, val };
        on_epoch(&record, trainer.model());
        history.push(record);
        if best.as_ref().is_none_or(|(_, mrr, _)| val.mrr > *mrr) {
            best = Some((epoch, val.mrr, trainer.model().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= trainer.config.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }

    let (model, best_epoch) = match (&stop, best) {
        (StopReason::Diverged { .. }, _) | (_, None) => (trainer.into_model(), None),
        (_, Some((epoch, _, model))) => (model, Some(epoch)),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        initial_loss,
        stop,
    })
}
