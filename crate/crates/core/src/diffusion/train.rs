use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{images_to_tensor, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, GrayImage, ManifestEntry};
use crate::jsonl;
use crate::neural::{adam_step, checkpoint, AdamHyper, Arch, DenoiserModel, Init, OptimizerState, ParamStore, Tensor4};

/// Stream ids carved out of the training seed.
const STREAM_TRAIN: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub checkpoint_interval: usize,
    /// `0.0` trains on every image and records no validation loss.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 5e-5,
            max_steps: 160_000,
            checkpoint_interval: 2_000,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults: 5,000 steps.
    pub fn desk() -> Self {
        Self {
            max_steps: 5_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if self.checkpoint_interval == 0 || self.checkpoint_interval > self.max_steps {
            return Err(Error::invalid(format!(
                "checkpoint_interval {} must be in [1, max_steps={}]",
                self.checkpoint_interval, self.max_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub checkpoint_index: u32,
    pub step: u64,
    /// Mean training loss over the steps since the previous checkpoint.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoints: Vec<CheckpointRecord>,
    /// Loss of every optimizer step, in order.
    pub loss_history: Vec<f64>,
    pub model: DenoiserModel,
}

pub fn checkpoint_file_name(index: u32) -> String {
    format!("ckpt_{index:04}.bin")
}

/// Seeded shuffle, then the first `round(n * val_fraction)` entries (half up) go to validation.
pub fn train_val_split(
    entries: &[ManifestEntry],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    if entries.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!("val_fraction {val_fraction} outside [0, 1)")));
    }
    let n_val = (entries.len() as f64 * val_fraction + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order[..n_val].iter().map(|&i| entries[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| entries[i].clone()).collect();
    Ok((train, val))
}

pub trait NoisePredictor {
    fn predict(&self, x_t: &Tensor4, t: &[usize]) -> Result<Tensor4>;
}

impl NoisePredictor for DenoiserModel {
    fn predict(&self, x_t: &Tensor4, t: &[usize]) -> Result<Tensor4> {
        self.forward(x_t, t)
    }
}

/// Per-item step uniform in `[1, T]` and unit Gaussian noise, drawn in that order.
fn draw_noise(dims: [usize; 4], steps: usize, rng: &mut impl Rng) -> (Vec<usize>, Tensor4) {
    let t: Vec<usize> = (0..dims[0]).map(|_| rng.random_range(1..=steps)).collect();
    let eps = Tensor4::from_fn(dims, |_, _, _, _| rng.sample(StandardNormal));
    (t, eps)
}

fn mse(pred: &Tensor4, target: &Tensor4) -> f64 {
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64
}

/// Noise-prediction MSE of any predictor on one batch.
pub fn loss_value(
    predictor: &impl NoisePredictor,
    batch: &Tensor4,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (t, eps) = draw_noise(batch.dims(), sched.len(), rng);
    let x_t = q_sample(batch, &t, &eps, sched)?;
    Ok(mse(&predictor.predict(&x_t, &t)?, &eps))
}

/// Loss and parameter gradients for one training batch.
pub fn loss_step(
    model: &DenoiserModel,
    batch: &Tensor4,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<(f64, ParamStore)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (t, eps) = draw_noise(batch.dims(), sched.len(), rng);
    let x_t = q_sample(batch, &t, &eps, sched)?;
    let (pred, cache) = model.forward_cached(&x_t, &t)?;
    let loss = mse(&pred, &eps);
    let scale = 2.0 / pred.len() as f64;
    let grad = pred.zip_map(&eps, |p, e| scale * (p - e))?;
    Ok((loss, model.backward_cached(&cache, &grad)?))
}

/// Mean loss over the whole set with a fixed noise stream, so values are
/// comparable across checkpoints.
pub fn validation_loss(
    model: &impl NoisePredictor,
    data: &Tensor4,
    sched: &NoiseSchedule,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_VALIDATION);
    let n = data.batch();
    let (mut total, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start < n {
        let len = batch_size.min(n - start);
        let batch = data.batch_slice(start, len);
        total += loss_value(model, &batch, sched, &mut rng)? * batch.len() as f64;
        count += batch.len();
        start += len;
    }
    Ok(total / count as f64)
}

/// Trains a fresh model and writes a checkpoint every `checkpoint_interval` steps.
///
/// Each epoch is a seeded shuffle with the last partial batch dropped. The
/// model's `num_timesteps` is taken from `sched`.
pub fn train(
    train_images: &[GrayImage],
    val_images: &[GrayImage],
    config: &TrainConfig,
    arch: Arch,
    sched: &NoiseSchedule,
    out_dir: &Path,
) -> Result<TrainRun> {
    config.validate()?;
    if train_images.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if train_images.len() < config.batch_size {
        return Err(Error::invalid(format!(
            "{} training images cannot fill a batch of {}",
            train_images.len(),
            config.batch_size
        )));
    }
    let arch = Arch {
        num_timesteps: sched.len(),
        ..arch
    };
    let data = images_to_tensor(train_images)?;
    let val_data = if val_images.is_empty() {
        None
    } else {
        let v = images_to_tensor(val_images)?;
        if v.dims()[1..] != data.dims()[1..] {
            return Err(Error::ShapeMismatch("validation images differ in size from training images".into()));
        }
        Some(v)
    };
    let mut model = DenoiserModel::new(arch, config.seed, Init::ZeroOutput)?;
    model.validate_input(&data.batch_slice(0, 1), &[1])?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut opt = OptimizerState::new(
        &model.params,
        AdamHyper {
            lr: config.lr,
            ..AdamHyper::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_TRAIN);
    let n = data.batch();
    let item = data.len() / n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let log_path = out_dir.join("checkpoints.jsonl");
    let mut records = Vec::new();
    let mut history = Vec::with_capacity(config.max_steps);
    for step in 1..=config.max_steps {
        if cursor + config.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mut buf = Vec::with_capacity(config.batch_size * item);
        for &i in &order[cursor..cursor + config.batch_size] {
            buf.extend_from_slice(&data.data()[i * item..(i + 1) * item]);
        }
        cursor += config.batch_size;
        let dims = data.dims();
        let batch = Tensor4::from_vec([config.batch_size, dims[1], dims[2], dims[3]], buf)?;

        let (loss, grads) = loss_step(&model, &batch, sched, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        adam_step(&mut model, &grads, &mut opt)?;
        history.push(loss);

        if step % config.checkpoint_interval == 0 {
            let index = (step / config.checkpoint_interval) as u32;
            let window = &history[step - config.checkpoint_interval..];
            let val_loss = val_data
                .as_ref()
                .map(|v| validation_loss(&model, v, sched, config.batch_size, config.seed))
                .transpose()?;
            let path = out_dir.join(checkpoint_file_name(index));
            checkpoint::save(&path, &model, Some(&opt))?;
            let record = CheckpointRecord {
                checkpoint_index: index,
                step: step as u64,
                train_loss: window.iter().sum::<f64>() / window.len() as f64,
                val_loss,
                path,
            };
            jsonl::append(&log_path, &record)?;
            records.push(record);
        }
    }
    Ok(TrainRun {
        checkpoints: records,
        loss_history: history,
        model,
    })
}

/// Splits the usable manifest entries and trains on them.
pub fn train_from_manifest(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    arch: Arch,
    sched: &NoiseSchedule,
    out_dir: &Path,
) -> Result<TrainRun> {
    let usable: Vec<ManifestEntry> = manifest.usable().cloned().collect();
    let (train_entries, val_entries) = train_val_split(&usable, config.val_fraction, config.seed)?;
    let load = |entries: &[ManifestEntry]| -> Result<Vec<GrayImage>> {
        entries.iter().map(|e| manifest.load_image(e)).collect()
    };
    train(&load(&train_entries)?, &load(&val_entries)?, config, arch, sched, out_dir)
}
