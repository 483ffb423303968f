//! Minibatch training with the scheduled adversarial weight, early stopping
//! on validation mAP and resumable checkpoints.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Matrix, Tape};
use crate::corpus::{Corpus, Split};
use crate::error::{RadarError, Result};
use crate::eval::{aggregate, evaluate_cached, MetricsReport, RankingResult};
use crate::hetgraph::{edge_dropout, sample_neighbors_masked, Frontier, HeteroGraph, Relation};
use crate::radar::{
    load_model, read_matrix, save_model, tag_logits, total_loss, write_matrix, Aggregator, ModelFlags,
    NodeFeatures, RadarConfig, RadarModel, RepCache, TrainCtx,
};
use crate::real::Real;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STATE_FILE: &str = "state.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub fanout: usize,
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub feature_dropout: f64,
    pub edge_dropout: f64,
    pub gamma: f64,
    pub lambda0: f64,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping; 0 never
    /// stops early.
    pub patience: usize,
    /// Negative tags sampled per video; 0 scores every tag.
    pub negatives: usize,
    pub drop_r3: bool,
    pub drop_r1: bool,
    pub no_gated_residual: bool,
    pub mutual_attention: bool,
    pub aggregator: Aggregator,
    pub no_adv: bool,
    /// Also log training-split metrics every epoch.
    pub eval_train: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            fanout: 4,
            layers: 2,
            d: 64,
            heads: 1,
            feature_dropout: 0.2,
            edge_dropout: 0.2,
            gamma: 20.0,
            lambda0: 5e-4,
            seed: 0,
            patience: 10,
            negatives: 0,
            drop_r3: false,
            drop_r1: false,
            no_gated_residual: false,
            mutual_attention: false,
            aggregator: Aggregator::Aan,
            no_adv: false,
            eval_train: false,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn flags(&self) -> ModelFlags {
        ModelFlags {
            drop_r1: self.drop_r1,
            drop_r3: self.drop_r3,
            no_gated_residual: self.no_gated_residual,
            mutual_attention: self.mutual_attention,
            aggregator: self.aggregator,
            no_adv: self.no_adv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.fanout == 0 || self.layers == 0 {
            return Err(RadarError::Invalid("batch_size, fanout and layers must be positive".into()));
        }
        for (name, rate) in [("feature_dropout", self.feature_dropout), ("edge_dropout", self.edge_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(RadarError::Invalid(format!("{name} = {rate} outside [0, 1)")));
            }
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.lambda0 < 0.0 || self.gamma < 0.0 {
            return Err(RadarError::Invalid(
                "learning_rate must be positive; weight_decay, lambda0 and gamma non-negative".into(),
            ));
        }
        if self.no_adv && self.aggregator != Aggregator::Aan {
            return Err(RadarError::Invalid("no_adv only applies to the aan aggregator".into()));
        }
        Ok(())
    }
}

/// `λ0 (2 / (1 + e^{−γp}) − 1)` for training progress `p ∈ [0, 1]`.
pub fn lambda_schedule(p: f64, lambda0: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RadarError::Invalid(format!("training progress {p} outside [0, 1]")));
    }
    Ok(lambda0 * (2.0 / (1.0 + (-gamma * p).exp()) - 1.0))
}

/// The graph a variant trains on: `drop_r3` / `drop_r1` remove the edge set.
pub fn apply_variant(flags: &ModelFlags, graph: &HeteroGraph) -> HeteroGraph {
    let mut g = graph.clone();
    if flags.drop_r3 {
        g = g.without_relation(Relation::R3);
    }
    if flags.drop_r1 {
        g = g.without_relation(Relation::R1);
    }
    g
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Adversarial weight at the last step of the epoch.
    pub lambda: f64,
    #[serde(rename = "val_mAP", default, skip_serializing_if = "Option::is_none")]
    pub val_map: Option<f64>,
    #[serde(rename = "val_P@1", default, skip_serializing_if = "Option::is_none")]
    pub val_p1: Option<f64>,
    #[serde(rename = "val_P@3", default, skip_serializing_if = "Option::is_none")]
    pub val_p3: Option<f64>,
    #[serde(rename = "val_R@5", default, skip_serializing_if = "Option::is_none")]
    pub val_r5: Option<f64>,
    #[serde(rename = "val_R@10", default, skip_serializing_if = "Option::is_none")]
    pub val_r10: Option<f64>,
    #[serde(rename = "train_mAP", default, skip_serializing_if = "Option::is_none")]
    pub train_map: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val_map: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    pub stopped: bool,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    config: TrainConfig,
    dtype: String,
    state: TrainState,
    optimizer_step: u64,
    has_best: bool,
}

/// Independent stream per `(seed, epoch, slot)` so that any step can be
/// replayed without the history before it.
fn rng_for(seed: u64, epoch: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | slot as u64);
    rng
}

pub struct Trainer<'a, T: Real> {
    pub config: TrainConfig,
    pub model: RadarModel<T>,
    pub optimizer: AdamW<T>,
    pub state: TrainState,
    graph: HeteroGraph,
    feats: NodeFeatures<T>,
    labels: Vec<Vec<u32>>,
    train_videos: Vec<u32>,
    corpus: &'a Corpus,
    best: Option<Vec<Matrix<T>>>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh model and optimizer for `graph`, whose videos are the training
    /// set; validation videos are scored inductively.
    pub fn new(config: TrainConfig, corpus: &'a Corpus, graph: &HeteroGraph) -> Result<Self> {
        config.validate()?;
        let graph = apply_variant(&config.flags(), graph);
        let feats = NodeFeatures::from_corpus(corpus, &graph)?;
        let model_config = RadarConfig {
            d: config.d,
            layers: config.layers,
            heads: config.heads,
            video_dim: feats.video.cols(),
            tag_dim: feats.tag.cols(),
            n_tags: graph.n_tags(),
            flags: config.flags(),
        };
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = RadarModel::new(model_config, &mut init)?;
        let optimizer = AdamW::new(
            AdamWConfig {
                learning_rate: config.learning_rate,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
            &model.store,
        );

        let by_id: HashMap<&str, usize> = corpus.videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
        let mut labels = Vec::with_capacity(graph.n_videos());
        let mut train_videos = Vec::new();
        for (g, v) in graph.videos.iter().enumerate() {
            let ci = by_id[v.id.as_str()];
            let record = &corpus.videos[ci];
            let tags: Vec<u32> = record.tags.iter().filter_map(|t| graph.tag_index(t)).collect();
            let is_train = corpus.splits.as_ref().is_none_or(|s| s[ci] == Split::Train);
            if is_train && !tags.is_empty() {
                train_videos.push(g as u32);
            }
            labels.push(tags);
        }
        if train_videos.is_empty() {
            return Err(RadarError::Invalid("no training video in the graph".into()));
        }
        Ok(Self {
            config,
            model,
            optimizer,
            state: TrainState::default(),
            graph,
            feats,
            labels,
            train_videos,
            corpus,
            best: None,
        })
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn features(&self) -> &NodeFeatures<T> {
        &self.feats
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_videos.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> u64 {
        (self.config.epochs * self.steps_per_epoch()) as u64
    }

    fn has_val(&self) -> bool {
        self.corpus.splits.is_some() && !self.corpus.indices_in(Split::Validate).is_empty()
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &[u32], lambda: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let n_tags = self.graph.n_tags();
        let tag_seeds: Vec<u32> = if self.config.negatives == 0 {
            (0..n_tags as u32).collect()
        } else {
            let all: Vec<u32> = (0..n_tags as u32).collect();
            let mut set = BTreeSet::new();
            for &v in batch {
                set.extend(self.labels[v as usize].iter().copied());
                set.extend(all.choose_multiple(rng, self.config.negatives.min(n_tags)).copied());
            }
            set.into_iter().collect()
        };
        let in_batch: HashSet<u32> = batch.iter().copied().collect();
        // a seed video must not see its own labels through its tags
        let sample = sample_neighbors_masked(
            &self.graph,
            &Frontier::new(batch.to_vec(), tag_seeds.clone()),
            self.config.fanout,
            self.config.layers,
            rng,
            |r, src, _| r == Relation::R2 && in_batch.contains(&src),
        )?;
        let sample = edge_dropout(&sample, self.config.edge_dropout, rng)?;

        let mut tape = Tape::new();
        let mut ctx = TrainCtx {
            rng,
            feature_dropout: self.config.feature_dropout,
        };
        let out = self.model.forward(&mut tape, &sample, &self.feats, Some(&mut ctx))?;
        let logits = tag_logits(&mut tape, out.video, out.tag);
        let column: HashMap<u32, usize> = tag_seeds.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut targets = Matrix::zeros(batch.len(), tag_seeds.len());
        for (row, &v) in batch.iter().enumerate() {
            for t in &self.labels[v as usize] {
                targets.set(row, column[t], T::one());
            }
        }
        let bce = tape.bce_with_logits(logits, targets);
        let loss = total_loss(&mut tape, bce, &out.adv, T::of(lambda));
        let value = tape.scalar(loss).to_f64_lossy();
        if !value.is_finite() {
            return Err(RadarError::Diverged {
                step: self.state.step as usize,
                loss: value,
            });
        }
        let grads = tape.backward(loss).for_store(&self.model.store);
        self.optimizer.step(&mut self.model.store, &grads)?;
        self.state.step += 1;
        Ok(value)
    }

    /// Runs the next epoch: shuffled minibatches, then validation and
    /// early-stopping bookkeeping.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let epoch = self.state.epoch;
        let total = self.total_steps().max(1) as f64;
        let mut order = self.train_videos.clone();
        order.shuffle(&mut rng_for(self.config.seed, epoch, 0));
        let mut loss_sum = 0.0;
        let mut lambda = 0.0;
        let batches: Vec<Vec<u32>> = order.chunks(self.config.batch_size).map(<[u32]>::to_vec).collect();
        for (b, batch) in batches.iter().enumerate() {
            lambda = lambda_schedule((self.state.step as f64 / total).min(1.0), self.config.lambda0, self.config.gamma)?;
            let mut rng = rng_for(self.config.seed, epoch, b + 1);
            loss_sum += self.step(batch, lambda, &mut rng)?;
        }
        let mut entry = EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len() as f64,
            lambda,
            ..EpochLog::default()
        };
        if self.has_val() || self.config.eval_train {
            let cache = self.model.compute_cache(&self.graph, &self.feats)?;
            if self.has_val() {
                let rep = evaluate_cached(&self.model, &self.graph, &cache, self.corpus, Split::Validate)?;
                entry.val_map = Some(rep.map);
                entry.val_p1 = Some(rep.p1);
                entry.val_p3 = Some(rep.p3);
                entry.val_r5 = Some(rep.r5);
                entry.val_r10 = Some(rep.r10);
            }
            if self.config.eval_train {
                entry.train_map = Some(self.train_metrics_cached(&cache)?.map);
            }
        }
        log::info!(
            "epoch {} loss {:.5} val mAP {}",
            entry.epoch,
            entry.train_loss,
            entry.val_map.map_or("-".to_string(), |m| format!("{m:.4}"))
        );
        self.state.epoch += 1;
        if let Some(m) = entry.val_map {
            if self.state.best_val_map.is_none_or(|b| m > b) {
                self.state.best_val_map = Some(m);
                self.state.best_epoch = Some(entry.epoch);
                self.state.bad_epochs = 0;
                self.best = Some(self.model.store.values().to_vec());
            } else {
                self.state.bad_epochs += 1;
                if self.config.patience > 0 && self.state.bad_epochs >= self.config.patience {
                    log::info!("no validation improvement for {} epochs; stopping", self.state.bad_epochs);
                    self.state.stopped = true;
                }
            }
        }
        self.state.log.push(entry);
        Ok(self.state.log.last().expect("pushed"))
    }

    pub fn finished(&self) -> bool {
        self.state.stopped || self.state.epoch >= self.config.epochs
    }

    /// Trains until the epoch budget is spent or validation stops improving.
    pub fn train(&mut self) -> Result<&[EpochLog]> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(&self.state.log)
    }

    /// The best-validation model, or the current one without validation.
    pub fn best_model(&self) -> RadarModel<T> {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            for (id, value) in model.store.ids().collect::<Vec<_>>().into_iter().zip(best) {
                *model.store.get_mut(id) = value.clone();
            }
        }
        model
    }

    fn train_metrics_cached(&self, cache: &RepCache<T>) -> Result<MetricsReport> {
        let scores = crate::radar::predict_scores(
            &cache.final_videos().gather_rows(&self.train_videos),
            cache.final_tags(),
        );
        let results: Vec<RankingResult> = self
            .train_videos
            .iter()
            .enumerate()
            .map(|(row, &v)| {
                let s: Vec<f64> = scores.row(row).iter().map(|x| x.to_f64_lossy()).collect();
                RankingResult::from_scores(self.graph.videos[v as usize].id.clone(), &s, self.labels[v as usize].clone())
            })
            .collect();
        aggregate(&results)
    }

    /// Metrics of the current model on the training videos.
    pub fn train_metrics(&self) -> Result<MetricsReport> {
        let cache = self.model.compute_cache(&self.graph, &self.feats)?;
        self.train_metrics_cached(&cache)
    }

    /// Saves everything needed to continue training: current parameters,
    /// optimizer moments, best parameters and counters. Written between
    /// epochs, so the per-step random streams need no extra state.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        save_model(&self.model, &dir.join("model"), None)?;
        let adam = dir.join("optimizer");
        fs::create_dir_all(&adam).map_err(|e| RadarError::io(&adam, e))?;
        for (k, id) in self.model.store.ids().enumerate() {
            let name = self.model.store.name(id);
            write_matrix(&adam.join(format!("{name}.m.bin")), &self.optimizer.first_moment[k])?;
            write_matrix(&adam.join(format!("{name}.v.bin")), &self.optimizer.second_moment[k])?;
        }
        if self.best.is_some() {
            save_model(&self.best_model(), &dir.join("best"), None)?;
        }
        let state = StateFile {
            config: self.config.clone(),
            dtype: T::DTYPE.to_string(),
            state: self.state.clone(),
            optimizer_step: self.optimizer.step,
            has_best: self.best.is_some(),
        };
        let path = dir.join(STATE_FILE);
        fs::write(&path, serde_json::to_string_pretty(&state)?).map_err(|e| RadarError::io(&path, e))
    }

    /// Restores a trainer saved by [`Trainer::save_checkpoint`]. `graph` and
    /// `corpus` must be the ones the run started with.
    pub fn resume(dir: &Path, corpus: &'a Corpus, graph: &HeteroGraph) -> Result<Self> {
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| RadarError::io(&path, e))?;
        let saved: StateFile = serde_json::from_str(&text)?;
        if saved.dtype != T::DTYPE {
            return Err(RadarError::Invalid(format!(
                "checkpoint is {}, requested {}",
                saved.dtype,
                T::DTYPE
            )));
        }
        let mut trainer = Self::new(saved.config, corpus, graph)?;
        let (model, _) = load_model::<T>(&dir.join("model"))?;
        if model.config != trainer.model.config {
            return Err(RadarError::Invalid("checkpoint model does not match this graph".into()));
        }
        trainer.model = model;
        let adam = dir.join("optimizer");
        for (k, id) in trainer.model.store.ids().enumerate() {
            let name = trainer.model.store.name(id).to_string();
            let (r, c) = trainer.model.store.get(id).shape();
            trainer.optimizer.first_moment[k] = read_matrix(&adam.join(format!("{name}.m.bin")), [r, c])?;
            trainer.optimizer.second_moment[k] = read_matrix(&adam.join(format!("{name}.v.bin")), [r, c])?;
        }
        trainer.optimizer.step = saved.optimizer_step;
        if saved.has_best {
            let (best, _) = load_model::<T>(&dir.join("best"))?;
            trainer.best = Some(best.store.values().to_vec());
        }
        trainer.state = saved.state;
        Ok(trainer)
    }

    /// Writes `model/` (best parameters plus representation cache),
    /// `checkpoint/`, `metrics.jsonl` and `config.json` under `out`.
    pub fn save_outputs(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| RadarError::io(out, e))?;
        let best = self.best_model();
        let cache = best.compute_cache(&self.graph, &self.feats)?;
        save_model(&best, &out.join("model"), Some(&cache))?;
        self.save_checkpoint(&out.join("checkpoint"))?;
        let path = out.join(METRICS_FILE);
        let mut f = fs::File::create(&path).map_err(|e| RadarError::io(&path, e))?;
        for entry in &self.state.log {
            writeln!(f, "{}", serde_json::to_string(entry)?).map_err(|e| RadarError::io(&path, e))?;
        }
        let path = out.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&self.config)?).map_err(|e| RadarError::io(&path, e))
    }
}
