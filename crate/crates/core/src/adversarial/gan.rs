//! Adversarial training loop, stand-in real data and score filtering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::nn::{sigmoid, softplus};
use crate::diff_ops::StageConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pyramid_aug::{apply_handmade, HandmadeConfig, TagFootprint};
use crate::seed;
use crate::tag_model::{cell_regions, render, PoseDistribution, TagGeometry, TagLabel, REFERENCE_RESOLUTION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub resolution: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs (1-based) after which the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the batch-mean clip penalty in the generator loss.
    pub penalty_weight: f64,
    pub seed: u64,
    /// Samples per epoch used to measure the detail-stage flip rate; 0 disables.
    pub flip_samples: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Stage bounds and filter scales at 64 px; rescaled to `resolution`.
    pub stages: StageConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            resolution: 16,
            batch_size: 32,
            steps_per_epoch: 40,
            epochs: 30,
            learning_rate: 2e-4,
            decay_epochs: vec![20, 25],
            decay_factor: 0.25,
            beta1: 0.5,
            beta2: 0.999,
            penalty_weight: 15.0,
            seed: 0,
            flip_samples: 32,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            stages: StageConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.epochs == 0 {
            return bad("batch size, steps per epoch and epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("decay epochs must increase: {:?}", self.decay_epochs));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay factor must lie in (0, 1]: {}", self.decay_factor));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.penalty_weight >= 0.0) {
            return bad("penalty weight must be >= 0".into());
        }
        self.generator.validate(self.resolution)?;
        self.stages.validate()
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }

    pub fn stage_config(&self) -> StageConfig {
        self.stages.rescaled(self.resolution)
    }
}

/// Means over the steps of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Fraction of generated tags whose decoded bits changed; `None` when
    /// the resolution is too small for the decode oracle.
    pub detail_flip_rate: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,d_loss,g_loss,penalty,d_real,d_fake,detail_flip_rate";

    pub fn csv_row(&self) -> String {
        let flip = self.detail_flip_rate.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.d_loss, self.g_loss, self.penalty, self.d_real, self.d_fake, flip
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(EpochRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Batch mean of the summed clip penalties.
    pub penalty: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

#[derive(Clone, Debug)]
pub struct GanState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub geometry: TagGeometry,
    pub penalty_weight: f64,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl GanState {
    pub fn new(cfg: &TrainConfig, geometry: TagGeometry) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::stream(cfg.seed, "init"));
        let generator = Generator::new(cfg.generator.clone(), cfg.stage_config(), cfg.resolution, &mut rng)?;
        let discriminator = Discriminator::new(cfg.discriminator.clone(), cfg.resolution, &mut rng)?;
        let opt_g = Adam::new(generator.num_params(), cfg.learning_rate, cfg.beta1, cfg.beta2);
        let opt_d = Adam::new(discriminator.num_params(), cfg.learning_rate, cfg.beta1, cfg.beta2);
        Ok(Self {
            generator,
            discriminator,
            opt_g,
            opt_d,
            geometry,
            penalty_weight: cfg.penalty_weight,
            step: 0,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.lr = lr;
        self.opt_d.lr = lr;
    }
}

fn sum_vectors(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn check_finite(v: f64, step: u64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { step, what })
    }
}

/// One discriminator update on real vs. generated images, then one
/// generator update through the updated discriminator.
pub fn gan_step(state: &mut GanState, real: &[Image], z: &[Vec<f64>], labels: &[TagLabel]) -> Result<StepLosses> {
    let n = z.len();
    if n == 0 || labels.len() != n || real.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} real images, latents and labels"),
            found: format!("{} / {} / {}", real.len(), z.len(), labels.len()),
        });
    }
    let res = state.generator.resolution();
    let geom = &state.geometry;
    let step = state.step;
    let bs = n as f64;

    let fakes = {
        let g = &state.generator;
        z.par_iter()
            .zip(labels.par_iter())
            .map(|(z, label)| {
                let r = render(label, res, geom)?;
                g.forward(z, &r)
            })
            .collect::<Result<Vec<_>>>()?
    };

    // discriminator update
    let d_losses = {
        let d = &state.discriminator;
        let real_part = real
            .par_iter()
            .map(|img| {
                let (l, cache) = d.logit(img)?;
                let mut g = vec![0.0; d.num_params()];
                d.backward(&cache, (sigmoid(l) - 1.0) / bs, &mut g);
                Ok((softplus(-l), sigmoid(l), g))
            })
            .collect::<Result<Vec<_>>>()?;
        let fake_part = fakes
            .par_iter()
            .map(|f| {
                let (l, cache) = d.logit(&f.composed.image)?;
                let mut g = vec![0.0; d.num_params()];
                d.backward(&cache, sigmoid(l) / bs, &mut g);
                Ok((softplus(l), sigmoid(l), g))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss_real: f64 = real_part.iter().map(|p| p.0).sum::<f64>() / bs;
        let loss_fake: f64 = fake_part.iter().map(|p| p.0).sum::<f64>() / bs;
        let d_real = real_part.iter().map(|p| p.1).sum::<f64>() / bs;
        let d_fake = fake_part.iter().map(|p| p.1).sum::<f64>() / bs;
        let d_loss = check_finite(loss_real + loss_fake, step, "discriminator loss")?;
        let grads = sum_vectors(
            real_part.into_iter().chain(fake_part).map(|p| p.2).collect(),
            d.num_params(),
        );
        state.opt_d.update(&mut state.discriminator.params, &grads);
        (d_loss, d_real, d_fake)
    };

    // generator update
    let lambda = state.penalty_weight;
    let (g_loss, penalty) = {
        let d = &state.discriminator;
        let g = &state.generator;
        let parts = fakes
            .par_iter()
            .map(|f| {
                let (l, cache) = d.logit(&f.composed.image)?;
                let mut scratch = vec![0.0; d.num_params()];
                let g_img = d.backward(&cache, -sigmoid(-l) / bs, &mut scratch);
                let pg = f.composed.tape.backward(&g_img, lambda / bs)?;
                let mut grads = vec![0.0; g.num_params()];
                g.backward(&f.cache, &pg, &mut grads);
                Ok((softplus(-l), f.composed.penalty, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let adv = parts.iter().map(|p| p.0).sum::<f64>() / bs;
        let penalty = parts.iter().map(|p| p.1).sum::<f64>() / bs;
        let g_loss = check_finite(adv + lambda * penalty, step, "generator loss")?;
        let grads = sum_vectors(parts.into_iter().map(|p| p.2).collect(), g.num_params());
        state.opt_g.update(&mut state.generator.params, &grads);
        (g_loss, penalty)
    };

    state.step += 1;
    Ok(StepLosses {
        d_loss: d_losses.0,
        g_loss,
        penalty,
        d_real: d_losses.1,
        d_fake: d_losses.2,
    })
}

/// Source of "real" training images.
pub trait RealSource: Sync {
    fn resolution(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Image>;
}

/// Handmade pipeline at fixed distribution parameters, standing in for
/// real images.
#[derive(Clone, Debug)]
pub struct HandmadeSource {
    pub handmade: HandmadeConfig,
    pub stages: StageConfig,
    pub pose: PoseDistribution,
    pub geometry: TagGeometry,
    pub resolution: usize,
}

impl HandmadeSource {
    /// The fully handmade variant at the given resolution.
    pub fn new(resolution: usize, stages: &StageConfig) -> Self {
        Self {
            handmade: HandmadeConfig::default(),
            stages: stages.rescaled(resolution),
            pose: PoseDistribution::default(),
            geometry: TagGeometry::default(),
            resolution,
        }
    }

    pub fn sample_labeled(&self, rng: &mut ChaCha8Rng) -> Result<(Image, TagLabel)> {
        let label = self.pose.sample(rng);
        let r = render(&label, self.resolution, &self.geometry)?;
        let fp = TagFootprint::of(&label, &self.geometry, self.resolution);
        let img = apply_handmade(&r, &r.image, fp, &self.handmade, &self.stages, rng)?;
        Ok((img, label))
    }
}

impl RealSource for HandmadeSource {
    fn resolution(&self) -> usize {
        self.resolution
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Image> {
        Ok(self.sample_labeled(rng)?.0)
    }
}

/// Inputs of one training step, derived from the run seed and step index.
pub fn step_batch(
    cfg: &TrainConfig,
    generator: &Generator,
    source: &dyn RealSource,
    step: u64,
) -> Result<(Vec<Image>, Vec<Vec<f64>>, Vec<TagLabel>)> {
    let step_seed = seed::derive(cfg.seed, step);
    let pose = PoseDistribution::default();
    let items = (0..cfg.batch_size as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(step_seed, i));
            let z = generator.sample_latent(&mut rng);
            let label = pose.sample(&mut rng);
            let real = source.sample(&mut rng)?;
            Ok((real, z, label))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut real = Vec::with_capacity(items.len());
    let mut zs = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for (r, z, l) in items {
        real.push(r);
        zs.push(z);
        labels.push(l);
    }
    Ok((real, zs, labels))
}

/// Fraction of generated tags whose oracle-decoded bits differ from those of
/// the clean render (decode failures of the generated image count as flips).
/// Below 64 px the erosion margin shrinks with the resolution; samples whose
/// clean render cannot be decoded are skipped. `None` if none remain.
pub fn detail_flip_rate(generator: &Generator, geometry: &TagGeometry, n: usize, seed_value: u64) -> Result<Option<f64>> {
    let res = generator.resolution();
    let monitor = TagGeometry {
        erosion_margin: geometry.erosion_margin * (res as f64 / REFERENCE_RESOLUTION).min(1.0),
        ..geometry.clone()
    };
    let pose = PoseDistribution::default();
    let flips = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive(seed_value, i));
            let label = pose.sample(&mut rng);
            let z = generator.sample_latent(&mut rng);
            let r = render(&label, res, geometry)?;
            let Ok(regions) = cell_regions(&label, res, &monitor) else {
                return Ok(None);
            };
            let Ok(clean) = regions.decode(&r.image) else {
                return Ok(None);
            };
            let img = generator.forward(&z, &r)?.composed.image;
            Ok(Some(regions.decode(&img).map_or(true, |bits| bits != clean)))
        })
        .collect::<Result<Vec<Option<bool>>>>()?;
    let decoded: Vec<bool> = flips.into_iter().flatten().collect();
    if decoded.is_empty() {
        return Ok(None);
    }
    Ok(Some(decoded.iter().filter(|&&f| f).count() as f64 / decoded.len() as f64))
}

/// Runs (or resumes) training until `cfg.epochs` epochs are complete.
/// `on_epoch` sees each finished epoch record.
pub fn train(
    cfg: &TrainConfig,
    source: &dyn RealSource,
    resume: Option<GanState>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<GanState> {
    cfg.validate()?;
    if source.resolution() != cfg.resolution {
        return Err(Error::ShapeMismatch {
            expected: format!("real source at {}", cfg.resolution),
            found: format!("{}", source.resolution()),
        });
    }
    let mut state = match resume {
        Some(s) => s,
        None => GanState::new(cfg, TagGeometry::default())?,
    };
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let lr = cfg.lr_at(epoch);
        state.set_lr(lr);
        let mut acc = [0.0; 5];
        for _ in 0..cfg.steps_per_epoch {
            let (real, z, labels) = step_batch(cfg, &state.generator, source, state.step)?;
            let l = gan_step(&mut state, &real, &z, &labels)?;
            for (a, v) in acc.iter_mut().zip([l.d_loss, l.g_loss, l.penalty, l.d_real, l.d_fake]) {
                *a += v;
            }
        }
        let k = cfg.steps_per_epoch as f64;
        let flip_seed = seed::derive(seed::stream(cfg.seed, "flips"), epoch as u64);
        let record = EpochRecord {
            epoch,
            step: state.step,
            lr,
            d_loss: acc[0] / k,
            g_loss: acc[1] / k,
            penalty: acc[2] / k,
            d_real: acc[3] / k,
            d_fake: acc[4] / k,
            detail_flip_rate: detail_flip_rate(&state.generator, &state.geometry, cfg.flip_samples, flip_seed)?,
        };
        on_epoch(&record);
        state.history.push(record);
        state.epoch = epoch;
    }
    Ok(state)
}

/// Splits sample indices by discriminator score: the `floor(q·n)` lowest
/// scoring samples are dropped (ties broken by index). Returns
/// `(kept, dropped)`, both in index order.
pub fn score_filter(scores: &[f64], quantile: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidParameter(format!("quantile must lie in [0, 1], got {quantile}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN discriminator score".into()));
    }
    let drop = (quantile * scores.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut dropped: Vec<usize> = order[..drop].to_vec();
    let mut kept: Vec<usize> = order[drop..].to_vec();
    dropped.sort_unstable();
    kept.sort_unstable();
    Ok((kept, dropped))
}

/// Discriminator scores of a batch of images.
pub fn score_images(d: &Discriminator, images: &[Image]) -> Result<Vec<f64>> {
    images.par_iter().map(|img| d.score(img)).collect()
}

/// Adds i.i.d. uniform(−amplitude, amplitude) noise to every pixel.
pub fn corrupt_with_noise<R: Rng + ?Sized>(img: &Image, amplitude: f64, rng: &mut R) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += rng.random_range(-amplitude..=amplitude);
    }
    out
}
