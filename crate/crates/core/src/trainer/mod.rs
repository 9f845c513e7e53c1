//! BIDFC pretraining: per minibatch, a fresh instance head, K
//! augmented batch-instance-discrimination passes, then one feature
//! clustering step; after each epoch, an exponential moving average of the
//! encoder parameters.

mod checkpoint;

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, AugmentConfig, ImageGrid};
use crate::clustering::{dwv_loss, linear_schedule, DimReduce, DwvOptions, EmbeddingBatch, ScheduleConfig};
use crate::data::Dataset;
use crate::discrimination::{
    assign_batch_instance_labels, instance_cross_entropy, BidConfig, CeStepMode, ClassifierHead, InstanceLabels,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Adam, Encoder, EncoderConfig, Grads, ParamSet, Scalar};
use crate::rng::{derive_seed, stream, tag};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

/// How the parameter average is applied at the end of each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// Blend the live weights with the previous epoch's live weights.
    Literal,
    /// Keep a separate averaged copy for evaluation; training weights are
    /// left alone.
    Shadow,
}

/// Scale presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub bid: BidConfig,
    pub schedule: ScheduleConfig,
    pub epochs: u32,
    /// EMA momentum m: theta <- m * theta_prev + (1 - m) * theta.
    pub momentum: f64,
    /// Learning rate; `None` means `scaled_lr(batch_size)`.
    pub lr: Option<f64>,
    pub seed: u64,
    pub dwv_dim_reduce: DimReduce,
    pub stop_mean_gradient: bool,
    pub ema_mode: EmaMode,
    pub encoder: EncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

impl PretrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                bid: BidConfig::default(),
                schedule: ScheduleConfig::default(),
                epochs: 300,
                momentum: 0.999,
                lr: None,
                seed: 10,
                dwv_dim_reduce: DimReduce::Mean,
                stop_mean_gradient: false,
                ema_mode: EmaMode::Shadow,
                encoder: EncoderConfig::resnet18(),
            },
            Profile::Desk => Self {
                bid: BidConfig {
                    batch_size: 64,
                    ..BidConfig::default()
                },
                schedule: ScheduleConfig {
                    t1: 6,
                    t2: 30,
                    alpha_f: 1.0,
                },
                epochs: 60,
                momentum: DESK_MOMENTUM,
                encoder: EncoderConfig::desk(),
                ..Self::for_profile(Profile::Paper)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bid.validate()?;
        self.schedule.validate()?;
        self.encoder.validate()?;
        check_momentum(self.momentum)?;
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> Result<f64> {
        match self.lr {
            Some(lr) => Ok(lr),
            None => scaled_lr(self.bid.batch_size),
        }
    }

    fn dwv_options(&self) -> DwvOptions {
        DwvOptions {
            dim_reduce: self.dwv_dim_reduce,
            stop_mean_gradient: self.stop_mean_gradient,
        }
    }
}

/// EMA momentum of the desk profile. 0.999 over 60 epochs would leave the
/// averaged weights 94% at initialization.
pub const DESK_MOMENTUM: f64 = 0.9;

/// `0.3 * batch_size / 512`.
pub fn scaled_lr(batch_size: usize) -> Result<f64> {
    if batch_size < 1 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    Ok(0.3 * batch_size as f64 / 512.0)
}

fn check_momentum(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::config(format!("momentum must be in [0,1], got {m}")))
    }
}

/// Elementwise `m * prev + (1 - m) * curr`, evaluated in f64.
pub fn ema_blend<T: Scalar>(prev: &[T], curr: &[T], m: f64) -> Result<Vec<T>> {
    check_momentum(m)?;
    if prev.len() != curr.len() {
        return Err(Error::input(format!("length mismatch: {} vs {}", prev.len(), curr.len())));
    }
    Ok(prev
        .iter()
        .zip(curr)
        .map(|(&p, &c)| T::from_f64(m * p.to_f64() + (1.0 - m) * c.to_f64()))
        .collect())
}

/// [`ema_blend`] over whole parameter sets.
pub fn ema_update(prev: &ParamSet, curr: &ParamSet, m: f64) -> Result<ParamSet> {
    prev.check_compatible(curr)?;
    let mut out = curr.clone();
    for (o, p) in out.iter_mut().zip(prev.iter()) {
        o.data = ema_blend(&p.data, &o.data, m)?;
    }
    Ok(out)
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean instance cross-entropy over all passes of the epoch.
    pub mean_ce: f64,
    /// Mean weighted DWV loss over the epoch's minibatches.
    pub mean_dwv: f64,
    pub weight: f64,
}

pub fn write_trace_csv(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    if trace.is_empty() {
        w.write_record(["epoch", "mean_ce", "mean_dwv", "weight"]).map_err(|e| Error::Serde(e.to_string()))?;
    }
    for r in trace {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Serde(e.to_string()))).collect()
}

/// Hooks into the training loop, used for logging and for checking the
/// structure of the training loop. Every method defaults to doing nothing.
#[allow(unused_variables)]
pub trait TrainObserver {
    fn epoch_started(&mut self, epoch: u32, weight: f64) {}
    /// Dataset indices of a minibatch; position `i` carries instance label `i`.
    fn batch_started(&mut self, epoch: u32, batch: usize, members: &[usize]) {}
    fn head_reinit(&mut self, epoch: u32, batch: usize) {}
    /// One BID forward/backward pass `pass` (0-based) of a minibatch.
    fn bid_pass(&mut self, epoch: u32, batch: usize, pass: usize, labels: &InstanceLabels, loss: f64) {}
    /// An optimizer step on the instance cross-entropy, with the updated
    /// encoder parameters.
    fn ce_step(&mut self, epoch: u32, batch: usize, params: &ParamSet) {}
    /// The feature clustering step that closes a minibatch.
    fn fc_step(&mut self, epoch: u32, batch: usize, weight: f64, loss: f64, params: &ParamSet) {}
    fn epoch_finished(&mut self, record: &EpochRecord, params: &ParamSet) {}
}

struct NoObserver;
impl TrainObserver for NoObserver {}

/// Largest number of images forwarded with cached activations at once.
const MAX_CHUNK: usize = 128;

fn to_matrix(emb: &[Vec<f32>]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = emb.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let m = Matrix::from_rows(&rows)?;
    if !m.is_finite() {
        return Err(Error::numeric("non-finite embedding"));
    }
    Ok(m)
}

fn to_f32_rows(m: &Matrix) -> Vec<Vec<f32>> {
    m.iter_rows().map(|r| r.iter().map(|&v| v as f32).collect()).collect()
}

/// Forward `images`, ask `loss` for the embedding gradient, and accumulate
/// the parameter gradient. Large batches are embedded first and then
/// re-forwarded chunk by chunk for the backward pass.
fn backprop<T>(
    enc: &Encoder,
    images: &[&ImageGrid],
    grads: &mut Grads,
    loss: impl FnOnce(&[Vec<f32>]) -> Result<(T, Vec<Vec<f32>>)>,
) -> Result<T> {
    if images.len() <= MAX_CHUNK {
        let (emb, cache) = enc.forward(images)?;
        let (out, grad) = loss(&emb)?;
        enc.backward(&cache, &grad, grads);
        return Ok(out);
    }
    let emb = enc.embed(images)?;
    let (out, grad) = loss(&emb)?;
    for (imgs, g) in images.chunks(MAX_CHUNK).zip(grad.chunks(MAX_CHUNK)) {
        let (_, cache) = enc.forward(imgs)?;
        enc.backward(&cache, g, grads);
    }
    Ok(out)
}

fn step_encoder(enc: &mut Encoder, opt: &mut Adam, grads: &Grads) {
    let g: Vec<&[f32]> = grads.0.iter().map(|g| g.as_slice()).collect();
    let mut p: Vec<&mut [f32]> = enc.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
    opt.step(&mut p, &g);
}

fn step_head(head: &mut ClassifierHead, opt: &mut Adam, grad: &Matrix) {
    opt.step(&mut [head.weights_mut().as_mut_slice()], &[grad.as_slice()]);
}

fn add_into(acc: &mut Matrix, g: &Matrix) {
    acc.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, b)| *a += b);
}

struct Trainer<'a> {
    cfg: &'a PretrainConfig,
    aug: &'a AugmentConfig,
    encoder: Encoder,
    head: ClassifierHead,
    ce_opt: Adam,
    head_opt: Adam,
    fc_opt: Adam,
}

struct BatchLosses {
    ce_sum: f64,
    passes: usize,
    dwv: f64,
}

impl Trainer<'_> {
    fn context(epoch: u32, batch: usize) -> impl Fn(Error) -> Error {
        move |e| match e {
            Error::Numeric(msg) => Error::numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
            other => other,
        }
    }

    fn run_batch(
        &mut self,
        data: &Dataset,
        members: &[usize],
        epoch: u32,
        batch: usize,
        weight: f64,
        obs: &mut dyn TrainObserver,
    ) -> Result<BatchLosses> {
        let cfg = self.cfg;
        let (n, k) = (members.len(), cfg.bid.k);
        let seed = cfg.seed;

        obs.batch_started(epoch, batch, members);
        // (a) fresh head and head optimizer
        self.head.reinit(&mut stream(seed, &[tag::HEAD_INIT, u64::from(epoch), batch as u64]));
        self.head_opt.reset();
        obs.head_reinit(epoch, batch);

        // (b) K views per sample, each from its own (epoch, sample, pass) stream
        let views: Vec<Vec<ImageGrid>> = (0..k)
            .map(|pass| {
                members
                    .iter()
                    .map(|&i| {
                        let mut rng = stream(seed, &[tag::AUGMENT, u64::from(epoch), i as u64, pass as u64]);
                        apply_pipeline(&data.get(i).image, self.aug, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        // (c) batch instance discrimination
        let labels = assign_batch_instance_labels(n)?;
        let temperature = cfg.bid.temperature;
        let aggregated = cfg.bid.ce_step_mode == CeStepMode::Aggregated;
        let mut grads = self.encoder.zero_grads();
        let mut head_grad = Matrix::zeros(self.head.max_classes(), self.head.dim());
        let mut ce_sum = 0.0;
        for (pass, view) in views.iter().enumerate() {
            let refs: Vec<&ImageGrid> = view.iter().collect();
            let head = &self.head;
            let scale = if aggregated { 1.0 / k as f64 } else { 1.0 };
            let (loss, gw) = backprop(&self.encoder, &refs, &mut grads, |emb| {
                let ce = instance_cross_entropy(&to_matrix(emb)?, head, &labels, temperature)?;
                let mut gv = ce.grad_embeddings;
                gv.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
                Ok(((ce.loss, ce.grad_weights), to_f32_rows(&gv)))
            })?;
            ce_sum += loss;
            obs.bid_pass(epoch, batch, pass, &labels, loss);
            if aggregated {
                let mut gw = gw;
                gw.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
                add_into(&mut head_grad, &gw);
            } else {
                step_encoder(&mut self.encoder, &mut self.ce_opt, &grads);
                step_head(&mut self.head, &mut self.head_opt, &gw);
                grads.zero();
                obs.ce_step(epoch, batch, self.encoder.params());
            }
        }
        if aggregated {
            step_encoder(&mut self.encoder, &mut self.ce_opt, &grads);
            step_head(&mut self.head, &mut self.head_opt, &head_grad);
            obs.ce_step(epoch, batch, self.encoder.params());
        }

        // (d) feature clustering on re-encoded views; the head is not involved
        grads.zero();
        let opts = cfg.dwv_options();
        let per_chunk = (MAX_CHUNK / k).max(1);
        let mut dwv = 0.0;
        for chunk in (0..n).collect::<Vec<_>>().chunks(per_chunk) {
            // sample-major order: (i, pass)
            let refs: Vec<&ImageGrid> = chunk.iter().flat_map(|&i| views.iter().map(move |v| &v[i])).collect();
            let share = chunk.len() as f64 / n as f64;
            let dim = self.encoder.dim();
            dwv += backprop(&self.encoder, &refs, &mut grads, |emb| {
                let flat: Vec<f64> = emb.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect();
                let zb = EmbeddingBatch::from_vec(chunk.len(), k, dim, flat)?;
                let out = dwv_loss(&zb, weight, opts)?;
                let g = out.grad.as_slice().chunks(dim).map(|r| r.iter().map(|&v| (v * share) as f32).collect()).collect();
                Ok((out.loss * share, g))
            })?;
        }
        step_encoder(&mut self.encoder, &mut self.fc_opt, &grads);
        obs.fc_step(epoch, batch, weight, dwv, self.encoder.params());
        Ok(BatchLosses {
            ce_sum,
            passes: k,
            dwv,
        })
    }
}

/// Pretrain on the images of `data` (labels are ignored).
pub fn pretrain(data: &Dataset, cfg: &PretrainConfig, aug: &AugmentConfig) -> Result<Checkpoint> {
    pretrain_observed(data, cfg, aug, &mut NoObserver)
}

pub fn pretrain_observed(
    data: &Dataset,
    cfg: &PretrainConfig,
    aug: &AugmentConfig,
    obs: &mut dyn TrainObserver,
) -> Result<Checkpoint> {
    cfg.validate()?;
    aug.validate()?;
    if data.is_empty() {
        return Err(Error::input("pretraining needs a nonempty dataset"));
    }
    if aug.out_size != cfg.encoder.input_size {
        return Err(Error::config(format!(
            "augmentation out_size {} does not match encoder input_size {}",
            aug.out_size, cfg.encoder.input_size
        )));
    }
    let lr = cfg.learning_rate()?;
    let encoder = Encoder::new(cfg.encoder.clone(), &mut stream(cfg.seed, &[tag::ENCODER_INIT]))?;
    let head = ClassifierHead::new(cfg.bid.batch_size, encoder.dim(), &mut stream(cfg.seed, &[tag::HEAD_INIT]));
    let mut trainer = Trainer {
        cfg,
        aug,
        encoder,
        head,
        ce_opt: Adam::new(lr),
        head_opt: Adam::new(lr),
        fc_opt: Adam::new(lr),
    };
    let mut prev_live = trainer.encoder.params().clone();
    let mut shadow = match cfg.ema_mode {
        EmaMode::Shadow => Some(prev_live.clone()),
        EmaMode::Literal => None,
    };
    let mut trace = Vec::with_capacity(cfg.epochs as usize);
    info!(
        "pretraining {} images for {} epochs (batch {}, K={}, T={}, lr={lr})",
        data.len(),
        cfg.epochs,
        cfg.bid.batch_size,
        cfg.bid.k,
        cfg.bid.temperature
    );
    for epoch in 0..cfg.epochs {
        let weight = linear_schedule(epoch, &cfg.schedule)?;
        obs.epoch_started(epoch, weight);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[tag::SHUFFLE, u64::from(epoch)]));
        let (mut ce_sum, mut passes, mut dwv_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);
        for (b, members) in order.chunks(cfg.bid.batch_size).enumerate() {
            let losses = trainer.run_batch(data, members, epoch, b, weight, obs).map_err(Trainer::context(epoch, b))?;
            ce_sum += losses.ce_sum;
            passes += losses.passes;
            dwv_sum += losses.dwv;
            batches += 1;
            debug!("epoch {epoch} batch {b}: ce {:.4} dwv {:.6}", losses.ce_sum / losses.passes as f64, losses.dwv);
        }
        if !trainer.encoder.params().all_finite() {
            return Err(Error::numeric(format!("epoch {epoch}: non-finite encoder parameters")));
        }
        match cfg.ema_mode {
            EmaMode::Literal => {
                let blended = ema_update(&prev_live, trainer.encoder.params(), cfg.momentum)?;
                trainer.encoder.set_params(blended)?;
                prev_live = trainer.encoder.params().clone();
            }
            EmaMode::Shadow => {
                if let Some(s) = shadow.as_mut() {
                    *s = ema_update(s, trainer.encoder.params(), cfg.momentum)?;
                }
            }
        }
        let record = EpochRecord {
            epoch,
            mean_ce: ce_sum / passes as f64,
            mean_dwv: dwv_sum / batches as f64,
            weight,
        };
        info!(
            "epoch {epoch}: mean_ce {:.5} mean_dwv {:.6} weight {:.4}",
            record.mean_ce, record.mean_dwv, record.weight
        );
        obs.epoch_finished(&record, trainer.encoder.params());
        trace.push(record);
    }
    Ok(Checkpoint {
        encoder: cfg.encoder.clone(),
        pretrain: cfg.clone(),
        augment: aug.clone(),
        epoch: cfg.epochs,
        params: trainer.encoder.params().clone(),
        ema: shadow,
        rng_digest: format!("{:016x}", derive_seed(cfg.seed, &[tag::SHUFFLE, u64::from(cfg.epochs)])),
        trace,
    })
}

#[cfg(test)]
mod tests;
