//! Handmade augmentations built from random image pyramids, plus the
//! dataset-variant stage partitions that decide which stages are learned
//! and which are handmade.
//!
//! Pyramid weights are indexed from the coarsest level: level `i` has
//! `2^i × 2^i` cells across the field of view whatever the output size, so a
//! weight vector keeps its meaning relative to the tag when images are
//! rendered smaller (the finest levels are simply dropped).

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff_ops::{gaussian_blur, phi_bg, phi_lighting, ClipConfig, Stage, StageConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tag_model::{RenderOutput, REFERENCE_RESOLUTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upscale {
    Bilinear,
    /// Pixel replication; keeps levels independent per pixel, which makes
    /// the per-pixel variance exactly `Σ ω_i²`.
    Nearest,
}

/// Doubles both dimensions.
pub fn upscale2(img: &Image, mode: Upscale) -> Image {
    let (w, h) = img.dims();
    match mode {
        Upscale::Nearest => Image::from_fn(2 * w, 2 * h, |x, y| img.get(x / 2, y / 2)),
        Upscale::Bilinear => {
            // output 2k sits a quarter pixel before input k, 2k + 1 a quarter after
            let taps = |o: usize, n: usize| -> (usize, usize) {
                let k = o / 2;
                let other = if o % 2 == 0 {
                    k.saturating_sub(1)
                } else {
                    (k + 1).min(n - 1)
                };
                (k, other)
            };
            Image::from_fn(2 * w, 2 * h, |x, y| {
                let (x0, x1) = taps(x, w);
                let (y0, y1) = taps(y, h);
                0.75 * (0.75 * img.get(x0, y0) + 0.25 * img.get(x1, y0))
                    + 0.25 * (0.75 * img.get(x0, y1) + 0.25 * img.get(x1, y1))
            })
        }
    }
}

/// `I_0 = ω_0 L_0`, `I_i = ω_i L_i + upscale(I_{i-1})` with standard-normal
/// levels; returns the last level (`2^(n-1)` pixels square for `n` weights).
pub fn sample_pyramid<R: Rng + ?Sized>(weights: &[f64], mode: Upscale, rng: &mut R) -> Image {
    assert!(!weights.is_empty(), "pyramid needs at least one level");
    let mut img = Image::zeros(1, 1);
    for (i, &w) in weights.iter().enumerate() {
        if i > 0 {
            img = upscale2(&img, mode);
        }
        if w != 0.0 {
            for v in img.data_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *v += w * n;
            }
        }
    }
    img
}

/// Number of pyramid levels for a power-of-two resolution.
pub fn pyramid_levels(resolution: usize) -> Result<usize> {
    if !resolution.is_power_of_two() || resolution < 4 {
        return Err(Error::InvalidParameter(format!(
            "pyramid augmentations need a power-of-two resolution >= 4, got {resolution}"
        )));
    }
    Ok(resolution.trailing_zeros() as usize + 1)
}

fn weights_for(coarse: &[f64], levels: usize) -> Vec<f64> {
    (0..levels).map(|i| coarse.get(i).copied().unwrap_or(0.0)).collect()
}

/// SPD 2×2 covariance `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance {
    pub fn isotropic(sigma: f64) -> Self {
        Self {
            xx: sigma * sigma,
            xy: 0.0,
            yy: sigma * sigma,
        }
    }

    /// Both eigenvalues positive.
    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.xx * self.yy - self.xy * self.xy > 0.0
    }

    fn inverse(&self) -> [f64; 3] {
        let det = self.xx * self.yy - self.xy * self.xy;
        [self.yy / det, -self.xy / det, self.xx / det]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spotlight {
    /// Pixel coordinates (pixel `i` centered at `i`).
    pub center: (f64, f64),
    pub covariance: Covariance,
    pub amplitude: f64,
}

/// `x + Σ_j A_j exp(−½ (u − c_j)ᵀ Σ_j⁻¹ (u − c_j))`.
pub fn hm_spotlights(x: &Image, spots: &[Spotlight]) -> Result<Image> {
    let mut out = x.clone();
    for s in spots {
        if !s.covariance.is_spd() {
            return Err(Error::InvalidParameter(format!(
                "spotlight covariance is not SPD: {:?}",
                s.covariance
            )));
        }
        let [a, b, c] = s.covariance.inverse();
        for y in 0..x.height() {
            for px in 0..x.width() {
                let dx = px as f64 - s.center.0;
                let dy = y as f64 - s.center.1;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                let v = out.get(px, y) + s.amplitude * (-0.5 * q).exp();
                out.set(px, y, v);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandmadeStage {
    Blur,
    Lighting,
    Background,
    Noise,
    Spotlights,
}

impl HandmadeStage {
    pub const ALL: [HandmadeStage; 5] = [
        HandmadeStage::Blur,
        HandmadeStage::Lighting,
        HandmadeStage::Background,
        HandmadeStage::Noise,
        HandmadeStage::Spotlights,
    ];
}

/// Stage partitions of the handmade dataset variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandmadeVariant {
    /// Only the 3D model is learned.
    #[serde(rename = "hm_3d")]
    Hm3d,
    /// Model, blur and lighting are learned.
    HmLi,
    /// Model, blur, lighting and background are learned.
    HmBg,
}

impl HandmadeVariant {
    /// Last learned augmentation stage, if any.
    pub fn learned_upto(self) -> Option<Stage> {
        match self {
            HandmadeVariant::Hm3d => None,
            HandmadeVariant::HmLi => Some(Stage::Lighting),
            HandmadeVariant::HmBg => Some(Stage::Background),
        }
    }

    pub fn handmade_stages(self) -> Vec<HandmadeStage> {
        use HandmadeStage::*;
        match self {
            HandmadeVariant::Hm3d => vec![Blur, Lighting, Background, Noise, Spotlights],
            HandmadeVariant::HmLi => vec![Background, Noise, Spotlights],
            HandmadeVariant::HmBg => vec![Noise, Spotlights],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurDist {
    /// Uniform range of σ in reference (64 px) units; capped at 2.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightingDist {
    /// Base value of `s_w` and `s_b` before adding the pyramid field.
    pub scale_center: f64,
    pub scale_weights: Vec<f64>,
    pub shift_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundDist {
    /// `ω_i = amplitude · decay^i`.
    pub amplitude: f64,
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseDist {
    /// Weights of the second-finest and finest levels.
    pub coarse_weight: f64,
    pub fine_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpotlightDist {
    /// Poisson rate of the spot count.
    pub rate: f64,
    pub max_count: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Per-axis standard deviation range, reference pixels.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Which stages are handmade, and their parameter distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandmadeConfig {
    pub stages: Vec<HandmadeStage>,
    /// Last learned generator stage applied before the handmade ones.
    pub learned_upto: Option<Stage>,
    pub blur: BlurDist,
    pub lighting: LightingDist,
    pub background: BackgroundDist,
    pub noise: NoiseDist,
    pub spotlights: SpotlightDist,
}

/// σ cap for the handmade blur, reference pixels.
pub const MAX_HANDMADE_BLUR: f64 = 2.0;
/// Amplitude cap for spotlights.
pub const MAX_SPOT_AMPLITUDE: f64 = 1.5;

impl Default for BlurDist {
    fn default() -> Self {
        Self {
            sigma_min: 0.0,
            sigma_max: 1.5,
        }
    }
}

impl Default for LightingDist {
    fn default() -> Self {
        Self {
            scale_center: 0.55,
            scale_weights: vec![0.2, 0.15, 0.1],
            shift_weights: vec![0.15, 0.1, 0.05],
        }
    }
}

impl Default for BackgroundDist {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            decay: 0.5,
        }
    }
}

impl Default for NoiseDist {
    fn default() -> Self {
        Self {
            coarse_weight: 0.04,
            fine_weight: 0.06,
        }
    }
}

impl Default for SpotlightDist {
    fn default() -> Self {
        Self {
            rate: 1.0,
            max_count: 3,
            amplitude_min: 0.2,
            amplitude_max: MAX_SPOT_AMPLITUDE,
            sigma_min: 2.0,
            sigma_max: 6.0,
        }
    }
}

impl Default for HandmadeConfig {
    fn default() -> Self {
        Self::variant(HandmadeVariant::Hm3d)
    }
}

impl HandmadeConfig {
    pub fn variant(v: HandmadeVariant) -> Self {
        Self {
            stages: v.handmade_stages(),
            learned_upto: v.learned_upto(),
            blur: BlurDist::default(),
            lighting: LightingDist::default(),
            background: BackgroundDist::default(),
            noise: NoiseDist::default(),
            spotlights: SpotlightDist::default(),
        }
    }

    /// All five stages enabled at their identity points.
    pub fn identity() -> Self {
        Self {
            blur: BlurDist {
                sigma_min: 0.0,
                sigma_max: 0.0,
            },
            lighting: LightingDist {
                scale_center: 1.0,
                scale_weights: vec![],
                shift_weights: vec![],
            },
            background: BackgroundDist {
                amplitude: 0.0,
                decay: 0.5,
            },
            noise: NoiseDist {
                coarse_weight: 0.0,
                fine_weight: 0.0,
            },
            spotlights: SpotlightDist {
                rate: 0.0,
                ..SpotlightDist::default()
            },
            ..Self::variant(HandmadeVariant::Hm3d)
        }
    }

    /// The named variant whose stage partition this config reproduces.
    pub fn matching_variant(&self) -> Option<HandmadeVariant> {
        [HandmadeVariant::Hm3d, HandmadeVariant::HmLi, HandmadeVariant::HmBg]
            .into_iter()
            .find(|v| v.handmade_stages() == self.stages && v.learned_upto() == self.learned_upto)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut sorted = self.stages.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.stages {
            return bad(format!("handmade stages must be unique and in pipeline order: {:?}", self.stages));
        }
        if let Some(learned) = self.learned_upto {
            use HandmadeStage::*;
            let overlaps = self.stages.iter().any(|s| match s {
                Blur => true,
                Lighting => learned >= Stage::Lighting,
                Background => learned >= Stage::Background,
                Noise | Spotlights => learned >= Stage::Detail,
            });
            if overlaps {
                return bad(format!("handmade stages {:?} overlap learned stages up to {learned}", self.stages));
            }
        }
        let b = &self.blur;
        if !(0.0 <= b.sigma_min && b.sigma_min <= b.sigma_max && b.sigma_max <= MAX_HANDMADE_BLUR) {
            return bad(format!("blur sigma range must lie in [0, {MAX_HANDMADE_BLUR}]: {b:?}"));
        }
        let s = &self.spotlights;
        if !(s.rate >= 0.0
            && s.amplitude_min <= s.amplitude_max
            && s.amplitude_max.abs() <= MAX_SPOT_AMPLITUDE
            && s.amplitude_min.abs() <= MAX_SPOT_AMPLITUDE
            && 0.0 < s.sigma_min
            && s.sigma_min <= s.sigma_max)
        {
            return bad(format!("invalid spotlight distribution {s:?}"));
        }
        let weights = self
            .lighting
            .scale_weights
            .iter()
            .chain(&self.lighting.shift_weights)
            .chain([&self.noise.coarse_weight, &self.noise.fine_weight]);
        if weights.into_iter().any(|w| !w.is_finite() || *w < 0.0)
            || !(self.background.amplitude >= 0.0 && self.background.decay >= 0.0)
        {
            return bad("pyramid weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

fn reference_scale(resolution: usize) -> f64 {
    resolution as f64 / REFERENCE_RESOLUTION
}

pub fn hm_blur<R: Rng + ?Sized>(x: &Image, dist: &BlurDist, rng: &mut R) -> Image {
    let lo = dist.sigma_min.min(MAX_HANDMADE_BLUR);
    let hi = dist.sigma_max.min(MAX_HANDMADE_BLUR);
    let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
    gaussian_blur(x, sigma * reference_scale(x.width()))
}

/// Affine map of a pyramid field into the clip interval.
fn field_in_bounds(center: f64, p: &Image, bounds: &ClipConfig) -> Image {
    p.map(|v| bounds.clip(center + v))
}

/// Pyramid-sampled `s_w`, `s_b`, `t` fed through the lighting stage.
pub fn hm_lighting<R: Rng + ?Sized>(
    x: &Image,
    dist: &LightingDist,
    stage_cfg: &StageConfig,
    rng: &mut R,
) -> Result<Image> {
    let levels = pyramid_levels(x.width())?;
    let sw = weights_for(&dist.scale_weights, levels);
    let tw = weights_for(&dist.shift_weights, levels);
    let s_w = field_in_bounds(dist.scale_center, &sample_pyramid(&sw, Upscale::Bilinear, rng), &stage_cfg.scale);
    let s_b = field_in_bounds(dist.scale_center, &sample_pyramid(&sw, Upscale::Bilinear, rng), &stage_cfg.scale);
    let t = field_in_bounds(0.0, &sample_pyramid(&tw, Upscale::Bilinear, rng), &stage_cfg.shift);
    phi_lighting(x, &s_w, &s_b, &t, stage_cfg.light_sigma)
}

/// Background weights `ω_i = amplitude · decay^i` for `levels` levels.
pub fn background_weights(dist: &BackgroundDist, levels: usize) -> Vec<f64> {
    (0..levels).map(|i| dist.amplitude * dist.decay.powi(i as i32)).collect()
}

/// Replaces background pixels with a coarse-weighted pyramid, clipped to
/// `[-1, 1]`.
pub fn hm_background<R: Rng + ?Sized>(
    x: &Image,
    bg_mask: &Image,
    dist: &BackgroundDist,
    rng: &mut R,
) -> Result<Image> {
    let levels = pyramid_levels(x.width())?;
    let d = sample_pyramid(&background_weights(dist, levels), Upscale::Bilinear, rng).map(|v| v.clamp(-1.0, 1.0));
    phi_bg(x, bg_mask, &d)
}

/// Noise weights: zero except the two finest levels.
pub fn noise_weights(dist: &NoiseDist, levels: usize) -> Vec<f64> {
    let mut w = vec![0.0; levels];
    w[levels - 1] = dist.fine_weight;
    if levels >= 2 {
        w[levels - 2] = dist.coarse_weight;
    }
    w
}

pub fn hm_noise<R: Rng + ?Sized>(x: &Image, dist: &NoiseDist, rng: &mut R) -> Result<Image> {
    let levels = pyramid_levels(x.width())?;
    let n = sample_pyramid(&noise_weights(dist, levels), Upscale::Bilinear, rng);
    Ok(x.zip_map(&n, |a, b| a + b))
}

/// Draws spot count, positions on the tag, amplitudes and covariances.
pub fn sample_spotlights<R: Rng + ?Sized>(
    dist: &SpotlightDist,
    tag_center: (f64, f64),
    tag_radius: f64,
    resolution: usize,
    rng: &mut R,
) -> Vec<Spotlight> {
    let count = if dist.rate > 0.0 {
        let k: f64 = Poisson::new(dist.rate).expect("poisson rate").sample(rng);
        (k as usize).min(dist.max_count)
    } else {
        0
    };
    let k = reference_scale(resolution);
    (0..count)
        .map(|_| {
            let r = tag_radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let sx = rng.random_range(dist.sigma_min..=dist.sigma_max) * k;
            let sy = rng.random_range(dist.sigma_min..=dist.sigma_max) * k;
            let rot = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = rot.sin_cos();
            let covariance = Covariance {
                xx: c * c * sx * sx + s * s * sy * sy,
                xy: c * s * (sx * sx - sy * sy),
                yy: s * s * sx * sx + c * c * sy * sy,
            };
            Spotlight {
                center: (tag_center.0 + r * a.cos(), tag_center.1 + r * a.sin()),
                covariance,
                amplitude: rng.random_range(dist.amplitude_min..=dist.amplitude_max),
            }
        })
        .collect()
}

/// Tag placement needed by the spotlight sampler, in output pixels.
#[derive(Clone, Copy, Debug)]
pub struct TagFootprint {
    pub center: (f64, f64),
    pub radius: f64,
}

impl TagFootprint {
    pub fn of(label: &crate::tag_model::TagLabel, geom: &crate::tag_model::TagGeometry, resolution: usize) -> Self {
        let k = reference_scale(resolution);
        Self {
            // pixel i is centered at i for the spotlight evaluator
            center: (label.center_x * k - 0.5, label.center_y * k - 0.5),
            radius: geom.outer_radius * label.scale * k,
        }
    }
}

/// Applies the enabled handmade stages in pipeline order to `start` (the
/// clean render, or the output of the learned prefix).
pub fn apply_handmade<R: Rng + ?Sized>(
    render: &RenderOutput,
    start: &Image,
    footprint: TagFootprint,
    cfg: &HandmadeConfig,
    stage_cfg: &StageConfig,
    rng: &mut R,
) -> Result<Image> {
    render.image.same_shape(start)?;
    let mut x = start.clone();
    for stage in HandmadeStage::ALL {
        if !cfg.stages.contains(&stage) {
            continue;
        }
        x = match stage {
            HandmadeStage::Blur => hm_blur(&x, &cfg.blur, rng),
            HandmadeStage::Lighting => hm_lighting(&x, &cfg.lighting, stage_cfg, rng)?,
            HandmadeStage::Background => hm_background(&x, &render.bg_mask, &cfg.background, rng)?,
            HandmadeStage::Noise => hm_noise(&x, &cfg.noise, rng)?,
            HandmadeStage::Spotlights => {
                let spots = sample_spotlights(&cfg.spotlights, footprint.center, footprint.radius, x.width(), rng);
                hm_spotlights(&x, &spots)?
            }
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag_model::{render, PoseDistribution, TagGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = sample_pyramid(&[0.0; 7], Upscale::Bilinear, &mut rng);
        assert_eq!(img.dims(), (64, 64));
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn only_coarsest_level_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = [0.0; 7];
        w[0] = 0.8;
        let img = sample_pyramid(&w, Upscale::Bilinear, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l0: f64 = StandardNormal.sample(&mut rng);
        for &v in img.data() {
            assert!((v - 0.8 * l0).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_doubling_preserves_constants() {
        let img = Image::filled(4, 4, -0.3);
        assert!(upscale2(&img, Upscale::Bilinear).data().iter().all(|&v| (v + 0.3).abs() < 1e-15));
    }

    #[test]
    fn spotlight_peaks_at_center() {
        let x = Image::filled(32, 32, 0.1);
        let spot = Spotlight {
            center: (10.0, 20.0),
            covariance: Covariance::isotropic(3.0),
            amplitude: 0.7,
        };
        let y = hm_spotlights(&x, &[spot]).unwrap();
        assert!((y.get(10, 20) - 0.8).abs() < 1e-12);
        let max = y.data().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, y.get(10, 20));
        assert_eq!(hm_spotlights(&x, &[]).unwrap(), x);
        let bad = Spotlight {
            covariance: Covariance { xx: 1.0, xy: 2.0, yy: 1.0 },
            ..spot
        };
        assert!(hm_spotlights(&x, &[bad]).is_err());
    }

    #[test]
    fn noise_uses_only_two_finest_levels() {
        let w = noise_weights(&NoiseDist::default(), 7);
        assert!(w[..5].iter().all(|&v| v == 0.0));
        assert!(w[5] > 0.0 && w[6] > 0.0);
    }

    #[test]
    fn background_weights_halve_per_level() {
        let w = background_weights(&BackgroundDist::default(), 7);
        for i in 1..7 {
            assert!((w[i] / w[i - 1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn variant_partitions() {
        let hm3d = HandmadeVariant::Hm3d.handmade_stages();
        let li = HandmadeVariant::HmLi.handmade_stages();
        let bg = HandmadeVariant::HmBg.handmade_stages();
        assert!(li.iter().all(|s| hm3d.contains(s)) && li.len() < hm3d.len());
        assert!(bg.iter().all(|s| li.contains(s)) && bg.len() < li.len());
        for v in [HandmadeVariant::Hm3d, HandmadeVariant::HmLi, HandmadeVariant::HmBg] {
            let cfg = HandmadeConfig::variant(v);
            cfg.validate().unwrap();
            assert_eq!(cfg.matching_variant(), Some(v));
        }
        let mut bad = HandmadeConfig::variant(HandmadeVariant::HmLi);
        bad.stages.insert(0, HandmadeStage::Lighting);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identity_config_returns_the_render() {
        let geom = TagGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for res in [16, 64] {
            let label = PoseDistribution::default().sample(&mut rng);
            let r = render(&label, res, &geom).unwrap();
            let fp = TagFootprint::of(&label, &geom, res);
            let y = apply_handmade(&r, &r.image, fp, &HandmadeConfig::identity(), &StageConfig::for_resolution(res), &mut rng).unwrap();
            for (a, b) in y.data().iter().zip(r.image.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn background_never_touches_foreground() {
        let geom = TagGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let label = PoseDistribution::default().sample(&mut rng);
            let r = render(&label, 64, &geom).unwrap();
            let y = hm_background(&r.image, &r.bg_mask, &BackgroundDist::default(), &mut rng).unwrap();
            for i in 0..y.len() {
                if r.bg_mask.data()[i] == 0.0 {
                    assert_eq!(y.data()[i].to_bits(), r.image.data()[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn lighting_fields_stay_in_bounds() {
        let cfg = StageConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let wide = LightingDist {
            scale_center: 0.55,
            scale_weights: vec![3.0, 3.0, 3.0, 3.0],
            shift_weights: vec![3.0, 3.0],
        };
        let levels = 7;
        for _ in 0..50 {
            let p = sample_pyramid(&weights_for(&wide.scale_weights, levels), Upscale::Bilinear, &mut rng);
            let s = field_in_bounds(wide.scale_center, &p, &cfg.scale);
            assert!(s.data().iter().all(|&v| (0.1..=1.0).contains(&v)));
        }
        let zero = Image::zeros(8, 8);
        let mid = field_in_bounds(0.55, &zero, &cfg.scale);
        assert!(mid.data().iter().all(|&v| v == 0.55));
    }
}
