//! Mini-batch training of the scale network with Adam.

use super::augment::random_perspective_augment;
use super::losses::{batch_loss, BatchLoss, LossWeights};
use super::source::PairSource;
use scalenet_core::error::{Error, Result};
use scalenet_net::checkpoint::Archive;
use scalenet_net::ScaleNet;
use scalenet_core::nn::{Adam, AdamState, Gradients};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training hyper-parameters. Defaults are the desk-scale toy settings; see
/// [`TrainConfig::full_scale`] for the full-resolution recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub input_resolution: usize,
    /// Corner displacement bound of the perspective augmentation, as a
    /// fraction of the image size. Zero disables augmentation.
    pub augment_magnitude: f64,
    pub lambda_dual: f64,
    pub lambda_consistent: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            epochs: 10,
            batch_size: 8,
            input_resolution: 160,
            augment_magnitude: super::augment::DEFAULT_MAGNITUDE,
            lambda_dual: 1.0,
            lambda_consistent: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 640 px inputs, batch 48, 30 epochs.
    pub fn full_scale() -> Self {
        Self {
            epochs: 30,
            batch_size: 48,
            input_resolution: 640,
            ..Self::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            dual: self.lambda_dual,
            consistent: self.lambda_consistent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.input_resolution == 0 {
            return Err(Error::InvalidArgument("batch size and resolution must be positive".into()));
        }
        if !(0.0..=super::augment::MAX_MAGNITUDE).contains(&self.augment_magnitude) {
            return Err(Error::InvalidArgument(format!(
                "augment magnitude {} outside [0, {}]",
                self.augment_magnitude,
                super::augment::MAX_MAGNITUDE
            )));
        }
        self.loss_weights().validate()
    }
}

/// One optimizer step as recorded in the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: usize,
    pub ld: f64,
    pub lc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    batch: usize,
    step: usize,
    history: Vec<HistoryRow>,
    config: TrainConfig,
}

/// Stateful trainer; can be checkpointed between any two steps and resumed.
pub struct Trainer {
    model: ScaleNet<f32>,
    cfg: TrainConfig,
    adam: Adam,
    state: AdamState<f32>,
    epoch: usize,
    batch: usize,
    step: usize,
    history: Vec<HistoryRow>,
}

/// Sample order of an epoch; a pure function of the seed and epoch index.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

fn augment_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0xD6E8_FEB8_6659_FD93)
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

impl Trainer {
    pub fn new(model: ScaleNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.config().resolution != cfg.input_resolution {
            return Err(Error::InvalidArgument(format!(
                "model resolution {} differs from training resolution {}",
                model.config().resolution,
                cfg.input_resolution
            )));
        }
        let state = AdamState::new(model.store());
        Ok(Self {
            adam: Adam {
                learning_rate: cfg.learning_rate,
                ..Adam::default()
            },
            model,
            cfg,
            state,
            epoch: 0,
            batch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &ScaleNet<f32> {
        &self.model
    }

    pub fn into_model(self) -> ScaleNet<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// Index of the epoch in progress (equals `epochs` when done).
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Runs until all epochs are done.
    pub fn run(&mut self, source: &dyn PairSource) -> Result<()> {
        while !self.finished() {
            self.run_epoch(source)?;
        }
        Ok(())
    }

    /// Finishes the epoch in progress.
    pub fn run_epoch(&mut self, source: &dyn PairSource) -> Result<()> {
        let epoch = self.epoch;
        while !self.finished() && self.epoch == epoch {
            self.run_steps(source, 1)?;
        }
        Ok(())
    }

    /// Runs up to `max_steps` optimizer steps; returns the number taken.
    pub fn run_steps(&mut self, source: &dyn PairSource, max_steps: usize) -> Result<usize> {
        let mut taken = 0;
        while taken < max_steps && !self.finished() {
            let order = epoch_order(source.len(), self.cfg.seed, self.epoch);
            let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
            if self.batch >= batches.len() {
                log::info!("epoch {} done after {} steps", self.epoch, self.step);
                self.epoch += 1;
                self.batch = 0;
                continue;
            }
            let row = self.train_batch(source, batches[self.batch])?;
            log::debug!("epoch {} step {} loss {:.5}", row.epoch, row.step, row.total);
            self.batch += 1;
            taken += 1;
        }
        Ok(taken)
    }

    fn train_batch(&mut self, source: &dyn PairSource, indices: &[usize]) -> Result<HistoryRow> {
        let mut grads = Gradients::zeros_like(self.model.store());
        let weights = self.cfg.loss_weights();
        let n = indices.len() as f64;
        let (mut ld, mut lc) = (0.0, 0.0);
        // Per-sample loss terms only couple through the 1/N batch mean, so each
        // pair is backpropagated right away instead of holding all activations.
        for &idx in indices {
            let sample = source.sample(idx)?;
            let (a, b) = if self.cfg.augment_magnitude > 0.0 {
                let s = augment_seed(self.cfg.seed, self.epoch, idx);
                (
                    random_perspective_augment(&sample.image1, self.cfg.augment_magnitude, s.wrapping_mul(2))?.0,
                    random_perspective_augment(&sample.image2, self.cfg.augment_magnitude, s.wrapping_mul(2) + 1)?.0,
                )
            } else {
                (sample.image1, sample.image2)
            };
            let fwd = self.model.forward_pair(&a, &b)?;
            let r = fwd.r_ab as f64 + fwd.letterbox_log2;
            let q = fwd.r_ba as f64 - fwd.letterbox_log2;
            let one = batch_loss(&[r], &[q], &[sample.gt_ratio.log2()], &weights);
            if !one.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: self.batch,
                });
            }
            ld += one.dual / n;
            lc += one.consistent / n;
            self.model
                .backward_pair(fwd, (one.d_r[0] / n) as f32, (one.d_r_swapped[0] / n) as f32, &mut grads);
        }
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: self.batch,
            });
        }
        self.adam.step(self.model.store_mut(), &grads, &mut self.state);
        let row = HistoryRow {
            epoch: self.epoch,
            step: self.step,
            ld,
            lc,
            total: super::losses::total_loss(ld, lc, &weights),
        };
        self.step += 1;
        self.history.push(row);
        Ok(row)
    }

    /// Model, optimizer moments and progress in one archive.
    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = self.model.to_archive()?;
        for (id, p) in self.model.store().iter() {
            a.tensors.insert(format!("adam.m.{}", p.name), (p.shape.clone(), self.state.m[id.index()].clone()));
            a.tensors.insert(format!("adam.v.{}", p.name), (p.shape.clone(), self.state.v[id.index()].clone()));
        }
        let progress = Progress {
            epoch: self.epoch,
            batch: self.batch,
            step: self.step,
            history: self.history.clone(),
            config: self.cfg.clone(),
        };
        a.metadata.insert(
            "train_state".into(),
            serde_json::to_string(&progress).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        a.metadata.insert("adam_step".into(), self.state.step.to_string());
        Ok(a)
    }

    /// Restores a trainer saved by [`Trainer::to_archive`]. `epochs` may extend
    /// the original schedule.
    pub fn from_archive(a: &Archive, epochs: Option<usize>) -> Result<Self> {
        let model = ScaleNet::<f32>::from_archive(a)?;
        let progress: Progress =
            serde_json::from_str(a.require_meta("train_state")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut cfg = progress.config;
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        let mut t = Self::new(model, cfg)?;
        t.state.step = a
            .require_meta("adam_step")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("adam_step: {e}")))?;
        for (id, p) in t.model.store().iter() {
            for (slot, key) in [(&mut t.state.m, "m"), (&mut t.state.v, "v")] {
                let (shape, data) = a
                    .tensors
                    .get(&format!("adam.{key}.{}", p.name))
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer moment for {}", p.name)))?;
                if shape != &p.shape {
                    return Err(Error::Checkpoint(format!("optimizer moment shape for {}", p.name)));
                }
                slot[id.index()] = data.clone();
            }
        }
        t.epoch = progress.epoch;
        t.batch = progress.batch;
        t.step = progress.step;
        t.history = progress.history;
        Ok(t)
    }
}

/// Trains `model` over `source` for `cfg.epochs` epochs.
pub fn train(model: ScaleNet<f32>, source: &dyn PairSource, cfg: &TrainConfig) -> Result<(ScaleNet<f32>, Vec<HistoryRow>)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    t.run(source)?;
    let history = t.history.clone();
    Ok((t.into_model(), history))
}

/// Un-augmented batch loss of `model` on `indices` of `source`.
pub fn evaluate_loss(
    model: &ScaleNet<f32>,
    source: &dyn PairSource,
    indices: &[usize],
    weights: &LossWeights,
) -> Result<BatchLoss> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let (mut r, mut q, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for &idx in indices {
        let s = source.sample(idx)?;
        let (p1, a1) = model.prepare(&s.image1)?;
        let (p2, a2) = model.prepare(&s.image2)?;
        let f1 = model.features(&p1)?;
        let f2 = model.features(&p2)?;
        let lb = (a1 / a2).log2();
        r.push(model.head(&f1, &f2)? as f64 + lb);
        q.push(model.head(&f2, &f1)? as f64 - lb);
        g.push(s.gt_ratio.log2());
    }
    Ok(batch_loss(&r, &q, &g, weights))
}

/// Raw `log2` predictions `(r, r_swapped)` for every sample of `source`.
pub fn predict_log2(model: &ScaleNet<f32>, source: &dyn PairSource) -> Result<Vec<(f64, f64)>> {
    (0..source.len())
        .map(|i| {
            let s = source.sample(i)?;
            let (a, b) = model.estimate_both(&s.image1, &s.image2)?;
            Ok((a.log2(), b.log2()))
        })
        .collect()
}
