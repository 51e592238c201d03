//! Evaluation: mean Hamming distance, a pooled-feature logistic reference
//! decoder, and the label-preservation sweep.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::Adam;
use crate::diff_ops::{compose, phi_bg, phi_blur, phi_detail, phi_lighting, AugmentParams, ClipConfig, Stage, StageConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;
use crate::tag_model::{cell_regions, render, tag_to_image, Bits, PoseDistribution, TagGeometry, TagLabel, NUM_BITS};

/// Where a dataset came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rendergan,
    #[serde(rename = "hm_3d")]
    Hm3d,
    HmLi,
    HmBg,
    Realaug,
    /// Clean renders with no augmentation.
    Clean,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Rendergan => "rendergan",
            Provenance::Hm3d => "hm_3d",
            Provenance::HmLi => "hm_li",
            Provenance::HmBg => "hm_bg",
            Provenance::Realaug => "realaug",
            Provenance::Clean => "clean",
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Provenance::Rendergan,
            Provenance::Hm3d,
            Provenance::HmLi,
            Provenance::HmBg,
            Provenance::Realaug,
            Provenance::Clean,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown provenance {s:?}")))
    }
}

/// Images with their labels, all at one resolution.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub provenance: Provenance,
    pub images: Vec<Image>,
    pub labels: Vec<TagLabel>,
}

impl LabeledDataset {
    pub fn new(provenance: Provenance, images: Vec<Image>, labels: Vec<TagLabel>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidParameter("dataset is empty".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", images.len()),
                found: format!("{}", labels.len()),
            });
        }
        let dims = images[0].dims();
        if dims.0 != dims.1 {
            return Err(Error::InvalidParameter("dataset images must be square".into()));
        }
        for img in &images[1..] {
            if img.dims() != dims {
                return Err(Error::dims(dims, img.dims()));
            }
        }
        Ok(Self {
            provenance,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images[0].width()
    }
}

/// Mean over samples of the number of bits whose rounded probability
/// disagrees with the truth.
pub fn mhd(predicted: &[[f64; NUM_BITS]], truth: &[Bits]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", truth.len()),
            found: format!("{}", predicted.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter("MHD of an empty set".into()));
    }
    let wrong: usize = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| p.iter().zip(t).filter(|(&pi, &ti)| (pi >= 0.5) != ti).count())
        .sum();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Side of the pooled feature grid.
    pub feature_grid: usize,
    /// Canonical samples per feature cell along each axis.
    pub samples_per_cell: usize,
    /// Half-width of the sampled window in units of the tag's outer radius.
    pub extent: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            feature_grid: 8,
            samples_per_cell: 4,
            extent: 1.1,
            iterations: 1000,
            learning_rate: 0.05,
            l2: 1e-3,
        }
    }
}

/// Features of one image: the tag is resampled into its own unrotated frame
/// using the known pose, then average-pooled to `feature_grid²` values.
pub fn decoder_features(img: &Image, label: &TagLabel, geom: &TagGeometry, cfg: &DecoderConfig) -> Vec<f64> {
    let g = cfg.feature_grid;
    let k = cfg.samples_per_cell;
    let n = g * k;
    let half = cfg.extent * geom.outer_radius * label.scale;
    let step = 2.0 * half / n as f64;
    let res = img.width();
    let mut feats = vec![0.0; g * g];
    for j in 0..n {
        let v = -half + (j as f64 + 0.5) * step;
        for i in 0..n {
            let u = -half + (i as f64 + 0.5) * step;
            let (x, y) = tag_to_image(label, geom, res, u, v);
            feats[(j / k) * g + i / k] += img.sample_bilinear(x - 0.5, y - 0.5);
        }
    }
    let norm = 1.0 / (k * k) as f64;
    feats.iter_mut().for_each(|f| *f *= norm);
    feats
}

/// Twelve independent logistic models over pose-normalized pooled features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDecoder {
    pub config: DecoderConfig,
    pub geometry: TagGeometry,
    /// Per bit: feature weights followed by the bias.
    pub weights: Vec<Vec<f64>>,
    /// Training-set MHD before the first and after every iteration.
    pub train_history: Vec<f64>,
}

fn logistic(w: &[f64], f: &[f64]) -> f64 {
    let z = w[f.len()] + w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
    crate::adversarial::nn::sigmoid(z)
}

fn dataset_features(data: &LabeledDataset, geom: &TagGeometry, cfg: &DecoderConfig) -> Vec<Vec<f64>> {
    data.images
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(img, label)| decoder_features(img, label, geom, cfg))
        .collect()
}

impl ReferenceDecoder {
    /// Untrained decoder: every probability is ½.
    pub fn untrained(config: DecoderConfig, geometry: TagGeometry) -> Self {
        let n = config.feature_grid * config.feature_grid + 1;
        Self {
            weights: vec![vec![0.0; n]; NUM_BITS],
            config,
            geometry,
            train_history: Vec::new(),
        }
    }

    /// Full-batch Adam on the mean cross-entropy of each bit.
    pub fn train(data: &LabeledDataset, config: DecoderConfig, geometry: TagGeometry) -> Result<Self> {
        let feats = dataset_features(data, &geometry, &config);
        let mut dec = Self::untrained(config, geometry);
        let nf = dec.weights[0].len();
        let m = feats.len() as f64;
        let truth: Vec<Bits> = data.labels.iter().map(|l| l.bits).collect();
        let mut opts: Vec<Adam> = (0..NUM_BITS)
            .map(|_| Adam::new(nf, dec.config.learning_rate, 0.9, 0.999))
            .collect();
        dec.train_history.push(mhd(&dec.predict_features(&feats), &truth)?);
        for _ in 0..dec.config.iterations {
            for (bit, opt) in opts.iter_mut().enumerate() {
                let w = &dec.weights[bit];
                let mut grad = vec![0.0; nf];
                for (f, t) in feats.iter().zip(&truth) {
                    let err = logistic(w, f) - if t[bit] { 1.0 } else { 0.0 };
                    for (g, x) in grad.iter_mut().zip(f) {
                        *g += err * x;
                    }
                    grad[nf - 1] += err;
                }
                for (i, g) in grad.iter_mut().enumerate() {
                    *g /= m;
                    if i + 1 < nf {
                        *g += dec.config.l2 * w[i];
                    }
                }
                opt.update(&mut dec.weights[bit], &grad);
            }
            dec.train_history.push(mhd(&dec.predict_features(&feats), &truth)?);
        }
        Ok(dec)
    }

    fn predict_features(&self, feats: &[Vec<f64>]) -> Vec<[f64; NUM_BITS]> {
        feats
            .iter()
            .map(|f| std::array::from_fn(|bit| logistic(&self.weights[bit], f)))
            .collect()
    }

    pub fn predict(&self, data: &LabeledDataset) -> Vec<[f64; NUM_BITS]> {
        self.predict_features(&dataset_features(data, &self.geometry, &self.config))
    }
}

/// MHD of `decoder` on `test`.
pub fn evaluate(decoder: &ReferenceDecoder, test: &LabeledDataset) -> Result<f64> {
    let feats = dataset_features(test, &decoder.geometry, &decoder.config);
    if feats.iter().any(|f| f.is_empty()) || decoder.weights.iter().any(|w| w.len() != feats[0].len() + 1) {
        return Err(Error::InvalidParameter("decoder has no usable features".into()));
    }
    let truth: Vec<Bits> = test.labels.iter().map(|l| l.bits).collect();
    mhd(&decoder.predict_features(&feats), &truth)
}

/// Stage selection for [`preservation_sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStage {
    None,
    Blur,
    Lighting,
    Background,
    Detail,
    /// All four stages through [`compose`].
    Full,
}

impl SweepStage {
    pub const ALL: [SweepStage; 6] = [
        SweepStage::None,
        SweepStage::Blur,
        SweepStage::Lighting,
        SweepStage::Background,
        SweepStage::Detail,
        SweepStage::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepStage::None => "none",
            SweepStage::Blur => "blur",
            SweepStage::Lighting => "lighting",
            SweepStage::Background => "background",
            SweepStage::Detail => "detail",
            SweepStage::Full => "full",
        }
    }
}

impl std::str::FromStr for SweepStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepStage::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown sweep stage {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub resolution: usize,
    /// Per-pixel jitter of the lighting fields around a per-image base, as a
    /// fraction of the interval width.
    pub lighting_jitter: f64,
    /// Each detail map is i.i.d. uniform in `[-a, a]` with `a` drawn per image
    /// from `[0, detail_amplitude]`, which must lie inside the detail bounds.
    pub detail_amplitude: f64,
    /// Stage bounds and filter scales at 64 px.
    pub stages: StageConfig,
    pub geometry: TagGeometry,
    pub pose: PoseDistribution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            lighting_jitter: 0.25,
            detail_amplitude: 2.0,
            stages: StageConfig::default(),
            geometry: TagGeometry::default(),
            pose: PoseDistribution::default(),
        }
    }
}

/// Flip counts for one selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub stage: String,
    pub samples: usize,
    /// Samples with at least one flipped bit or a decode failure.
    pub flipped_samples: usize,
    pub bit_flips: usize,
    pub decode_failures: usize,
}

impl SweepRow {
    pub fn flip_rate(&self) -> f64 {
        self.flipped_samples as f64 / self.samples.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub selector: SweepStage,
    pub total: SweepRow,
    /// For `full`: flips after each prefix of the pipeline.
    pub per_stage: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in std::iter::once(&self.total).chain(&self.per_stage) {
            let _ = writeln!(
                s,
                "{:<12} samples {:>6}  flipped {:>5} ({:.2}%)  bit flips {:>5}  decode failures {:>5}",
                r.stage,
                r.samples,
                r.flipped_samples,
                100.0 * r.flip_rate(),
                r.bit_flips,
                r.decode_failures
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,samples,flipped_samples,flip_rate,bit_flips,decode_failures\n");
        for r in std::iter::once(&self.total).chain(&self.per_stage) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.stage,
                r.samples,
                r.flipped_samples,
                r.flip_rate(),
                r.bit_flips,
                r.decode_failures
            );
        }
        s
    }
}

fn uniform_field<R: Rng + ?Sized>(n: usize, clip: &ClipConfig, jitter: f64, rng: &mut R) -> Image {
    let base = rng.random_range(clip.a..=clip.b);
    let j = jitter * (clip.b - clip.a);
    Image::from_fn(n, n, |_, _| {
        let d = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        clip.clip(base + d)
    })
}

/// Random in-bound parameters for every stage.
fn random_params<R: Rng + ?Sized>(n: usize, cfg: &SweepConfig, stages: &StageConfig, rng: &mut R) -> AugmentParams {
    let amp = rng.random_range(0.0..=cfg.detail_amplitude);
    AugmentParams {
        alpha: rng.random_range(stages.alpha.a..=stages.alpha.b),
        s_w: uniform_field(n, &stages.scale, cfg.lighting_jitter, rng),
        s_b: uniform_field(n, &stages.scale, cfg.lighting_jitter, rng),
        t: uniform_field(n, &stages.shift, cfg.lighting_jitter, rng),
        background: Image::from_fn(n, n, |_, _| rng.random_range(stages.background.a..=stages.background.b)),
        detail: Image::from_fn(n, n, |_, _| if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 }),
    }
}

#[derive(Clone, Copy, Default)]
struct Outcome {
    flipped: bool,
    bits: usize,
    failure: bool,
}

/// Compares the decode of `img` with the decode of the clean render.
fn outcome(regions: &crate::tag_model::CellRegions, img: &Image, before: &Result<Bits>) -> Outcome {
    let (Ok(before), Ok(after)) = (before, regions.decode(img)) else {
        return Outcome {
            flipped: true,
            bits: 0,
            failure: true,
        };
    };
    let n = after.iter().zip(before).filter(|(a, b)| a != b).count();
    Outcome {
        flipped: n > 0,
        bits: n,
        failure: false,
    }
}

fn row(stage: &str, outcomes: &[Outcome]) -> SweepRow {
    SweepRow {
        stage: stage.to_string(),
        samples: outcomes.len(),
        flipped_samples: outcomes.iter().filter(|o| o.flipped).count(),
        bit_flips: outcomes.iter().map(|o| o.bits).sum(),
        decode_failures: outcomes.iter().filter(|o| o.failure).count(),
    }
}

/// Renders `n` random labels, applies the selected stage(s) with random
/// in-bound parameters and decodes with the oracle before and after. A
/// failed decode on either side counts as a flipped sample. Sample `i` uses the
/// seed `derive(seed, i)`.
pub fn preservation_sweep(selector: SweepStage, n: usize, seed_value: u64, cfg: &SweepConfig) -> Result<SweepReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one sample".into()));
    }
    if cfg.detail_amplitude < 0.0 || cfg.detail_amplitude > cfg.stages.detail.b.min(-cfg.stages.detail.a) {
        return Err(Error::Config(format!(
            "detail amplitude {} is outside the detail bounds",
            cfg.detail_amplitude
        )));
    }
    let res = cfg.resolution;
    let stages = cfg.stages.rescaled(res);
    let per_sample = (0..n as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<Outcome>> {
            let mut rng = seed::rng(seed::derive(seed_value, i));
            let label = cfg.pose.sample(&mut rng);
            let r = render(&label, res, &cfg.geometry)?;
            let regions = cell_regions(&label, res, &cfg.geometry)?;
            let p = random_params(res, cfg, &stages, &mut rng);
            let x = &r.image;
            let before = regions.decode(x);
            let single = |img: Image| vec![outcome(&regions, &img, &before)];
            Ok(match selector {
                SweepStage::None => single(x.clone()),
                SweepStage::Blur => single(phi_blur(x, p.alpha, stages.blur_sigma)),
                SweepStage::Lighting => single(phi_lighting(x, &p.s_w, &p.s_b, &p.t, stages.light_sigma)?),
                SweepStage::Background => single(phi_bg(x, &r.bg_mask, &p.background)?),
                SweepStage::Detail => single(phi_detail(x, &p.detail, stages.highpass_sigma, stages.highpass_repeats)?),
                SweepStage::Full => Stage::ALL
                    .iter()
                    .map(|&s| Ok(outcome(&regions, &compose(&r, &p, &stages, s)?.image, &before)))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last: Vec<Outcome> = per_sample.iter().map(|o| *o.last().unwrap()).collect();
    let per_stage = if selector == SweepStage::Full {
        Stage::ALL
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let col: Vec<Outcome> = per_sample.iter().map(|o| o[k]).collect();
                row(&format!("upto_{}", s.name()), &col)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(SweepReport {
        selector,
        total: row(selector.name(), &last),
        per_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mhd_extremes() {
        let truth = vec![[true; 12], [false; 12]];
        let perfect = vec![[0.9; 12], [0.1; 12]];
        assert_eq!(mhd(&perfect, &truth).unwrap(), 0.0);
        let wrong = vec![[0.1; 12], [0.9; 12]];
        assert_eq!(mhd(&wrong, &truth).unwrap(), 12.0);
        assert!(mhd(&perfect[..1], &truth).is_err());
    }

    #[test]
    fn mhd_of_coin_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let truth: Vec<Bits> = (0..n).map(|_| std::array::from_fn(|_| rng.random_bool(0.5))).collect();
        let guess: Vec<[f64; 12]> = (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let v = mhd(&guess, &truth).unwrap();
        assert!((v - 6.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn mhd_is_permutation_invariant_and_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<Bits> = (0..50).map(|_| std::array::from_fn(|_| rng.random_bool(0.5))).collect();
        let pred: Vec<[f64; 12]> = (0..50).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let base = mhd(&pred, &truth).unwrap();
        let mut idx: Vec<usize> = (0..50).collect();
        idx.reverse();
        let p2: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
        let t2: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
        assert_eq!(mhd(&p2, &t2).unwrap(), base);
        let per_bit: f64 = (0..12)
            .map(|b| {
                pred.iter()
                    .zip(&truth)
                    .filter(|(p, t)| (p[b] >= 0.5) != t[b])
                    .count() as f64
                    / 50.0
            })
            .sum();
        assert!((per_bit - base).abs() < 1e-12);
    }

    #[test]
    fn features_are_rotation_normalized() {
        let geom = TagGeometry::default();
        let cfg = DecoderConfig::default();
        let mut label = TagLabel::identity([true, false, true, true, false, false, true, false, false, true, true, false]);
        let a = decoder_features(&render(&label, 64, &geom).unwrap().image, &label, &geom, &cfg);
        label.yaw = 1.234;
        let b = decoder_features(&render(&label, 64, &geom).unwrap().image, &label, &geom, &cfg);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 0.25, "{diff}");
    }

    #[test]
    fn untrained_decoder_guesses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = TagGeometry::default();
        let labels: Vec<TagLabel> = (0..200).map(|_| PoseDistribution::default().sample(&mut rng)).collect();
        let images = labels.iter().map(|l| render(l, 32, &geom).unwrap().image).collect();
        let data = LabeledDataset::new(Provenance::Clean, images, labels).unwrap();
        let cfg = DecoderConfig {
            iterations: 0,
            ..DecoderConfig::default()
        };
        let dec = ReferenceDecoder::train(&data, cfg, geom).unwrap();
        // p = ½ rounds to 1, so exactly the zero bits count as wrong
        let zeros: usize = data.labels.iter().map(|l| l.bits.iter().filter(|&&b| !b).count()).sum();
        let v = evaluate(&dec, &data).unwrap();
        assert_eq!(v, zeros as f64 / 200.0);
        assert!((v - 6.0).abs() < 0.5);
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(Provenance::Clean, vec![], vec![]).is_err());
        let l = TagLabel::identity([false; 12]);
        assert!(LabeledDataset::new(Provenance::Clean, vec![Image::zeros(16, 16), Image::zeros(32, 32)], vec![l, l]).is_err());
    }

    #[test]
    fn none_sweep_never_flips() {
        let r = preservation_sweep(SweepStage::None, 50, 3, &SweepConfig::default()).unwrap();
        assert_eq!(r.total.flipped_samples, 0);
        assert_eq!(r.total.samples, 50);
        assert!(r.to_csv().lines().count() == 2);
    }

    #[test]
    fn selector_names_round_trip() {
        for s in SweepStage::ALL {
            assert_eq!(s.name().parse::<SweepStage>().unwrap(), s);
        }
        assert_eq!("hm_li".parse::<Provenance>().unwrap(), Provenance::HmLi);
    }
}
