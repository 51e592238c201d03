use serde::{Deserialize, Serialize};

use super::clip::{clip_vjp, clip_with_penalty, ClipConfig, DEFAULT_GAMMA};
use super::stages::*;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tag_model::{RenderOutput, REFERENCE_RESOLUTION};

/// Augmentation stages in application order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Blur,
    Lighting,
    Background,
    Detail,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Blur, Stage::Lighting, Stage::Background, Stage::Detail];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Blur => "blur",
            Stage::Lighting => "lighting",
            Stage::Background => "background",
            Stage::Detail => "detail",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Filter scales and parameter bounds of the constrained stages. Scales are
/// in output pixels; [`StageConfig::default`] is tuned for 64×64 images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub blur_sigma: f64,
    pub light_sigma: f64,
    pub highpass_sigma: f64,
    pub highpass_repeats: usize,
    pub alpha: ClipConfig,
    pub scale: ClipConfig,
    pub shift: ClipConfig,
    pub background: ClipConfig,
    pub detail: ClipConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        let clip = |a, b| ClipConfig {
            a,
            b,
            gamma: DEFAULT_GAMMA,
        };
        Self {
            blur_sigma: 2.0,
            light_sigma: 4.0,
            highpass_sigma: 3.5,
            highpass_repeats: 3,
            alpha: clip(0.0, 1.0),
            scale: clip(0.10, 1.0),
            shift: clip(-0.5, 0.5),
            background: clip(-1.0, 1.0),
            detail: clip(-2.0, 2.0),
        }
    }
}

impl StageConfig {
    /// Default bounds with filter scales proportional to `resolution / 64`.
    pub fn for_resolution(resolution: usize) -> Self {
        Self::default().rescaled(resolution)
    }

    pub fn rescaled(&self, resolution: usize) -> Self {
        let k = resolution as f64 / REFERENCE_RESOLUTION;
        Self {
            blur_sigma: self.blur_sigma * k,
            light_sigma: self.light_sigma * k,
            highpass_sigma: self.highpass_sigma * k,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in [&self.alpha, &self.scale, &self.shift, &self.background, &self.detail] {
            c.validate()?;
        }
        let sig = [self.blur_sigma, self.light_sigma, self.highpass_sigma];
        if sig.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(format!("blur scales must be >= 0, got {sig:?}")));
        }
        if self.scale.a <= 0.0 {
            return Err(Error::Config("lighting scales must stay positive".into()));
        }
        Ok(())
    }
}

/// Raw (pre-clip) generator outputs for every stage.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub alpha: f64,
    pub s_w: Image,
    pub s_b: Image,
    pub t: Image,
    pub background: Image,
    pub detail: Image,
}

impl AugmentParams {
    /// The identity point of every stage: no blur, unit scales, no shift,
    /// background equal to the image, zero detail.
    pub fn identity(render: &RenderOutput) -> Self {
        let (w, h) = render.image.dims();
        Self {
            alpha: 0.0,
            s_w: Image::filled(w, h, 1.0),
            s_b: Image::filled(w, h, 1.0),
            t: Image::zeros(w, h),
            background: render.image.clone(),
            detail: Image::zeros(w, h),
        }
    }

    pub fn zeros_like(w: usize, h: usize) -> Self {
        Self {
            alpha: 0.0,
            s_w: Image::zeros(w, h),
            s_b: Image::zeros(w, h),
            t: Image::zeros(w, h),
            background: Image::zeros(w, h),
            detail: Image::zeros(w, h),
        }
    }
}

#[derive(Clone, Debug)]
struct BlurRecord {
    x: Image,
    alpha: f64,
}

#[derive(Clone, Debug)]
struct LightingRecord {
    x: Image,
    s_w: Image,
    s_b: Image,
}

/// Values recorded by [`compose`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    cfg: StageConfig,
    raw: AugmentParams,
    bg_mask: Image,
    blur: Option<BlurRecord>,
    lighting: Option<LightingRecord>,
    background: bool,
    detail: bool,
}

impl Tape {
    pub fn recorded(&self, stage: Stage) -> bool {
        match stage {
            Stage::Blur => self.blur.is_some(),
            Stage::Lighting => self.lighting.is_some(),
            Stage::Background => self.background,
            Stage::Detail => self.detail,
        }
    }

    pub fn last_stage(&self) -> Option<Stage> {
        Stage::ALL.iter().rev().copied().find(|&s| self.recorded(s))
    }
}

#[derive(Clone, Debug)]
pub struct Composed {
    pub image: Image,
    pub penalty: f64,
    pub tape: Tape,
}

fn clipped(img: &Image, cfg: &ClipConfig) -> (Image, f64) {
    let (v, p) = clip_with_penalty(img.data(), cfg);
    (Image::from_vec(img.width(), img.height(), v).expect("clip dims"), p)
}

/// Runs `blur → lighting → background → detail`, stopping after `upto`.
/// Parameters are clipped first; the returned penalty sums the clip
/// penalties of the applied stages.
pub fn compose(
    render: &RenderOutput,
    params: &AugmentParams,
    cfg: &StageConfig,
    upto: Stage,
) -> Result<Composed> {
    let x0 = &render.image;
    for p in [&params.s_w, &params.s_b, &params.t, &params.background, &params.detail] {
        x0.same_shape(p)?;
    }
    x0.same_shape(&render.bg_mask)?;

    let mut tape = Tape {
        cfg: cfg.clone(),
        raw: params.clone(),
        bg_mask: render.bg_mask.clone(),
        blur: None,
        lighting: None,
        background: false,
        detail: false,
    };
    let mut penalty = 0.0;

    let alpha = cfg.alpha.clip(params.alpha);
    penalty += cfg.alpha.penalty(params.alpha);
    let mut x = phi_blur(x0, alpha, cfg.blur_sigma);
    tape.blur = Some(BlurRecord {
        x: x0.clone(),
        alpha,
    });

    if upto >= Stage::Lighting {
        let (s_w, p1) = clipped(&params.s_w, &cfg.scale);
        let (s_b, p2) = clipped(&params.s_b, &cfg.scale);
        let (t, p3) = clipped(&params.t, &cfg.shift);
        penalty += p1 + p2 + p3;
        let next = phi_lighting(&x, &s_w, &s_b, &t, cfg.light_sigma)?;
        tape.lighting = Some(LightingRecord { x, s_w, s_b });
        x = next;
    }
    if upto >= Stage::Background {
        let (d, p) = clipped(&params.background, &cfg.background);
        penalty += p;
        x = phi_bg(&x, &render.bg_mask, &d)?;
        tape.background = true;
    }
    if upto >= Stage::Detail {
        let (d, p) = clipped(&params.detail, &cfg.detail);
        penalty += p;
        x = phi_detail(&x, &d, cfg.highpass_sigma, cfg.highpass_repeats)?;
        tape.detail = true;
    }
    Ok(Composed {
        image: x,
        penalty,
        tape,
    })
}

/// Gradients of one stage w.r.t. its image input and its (clipped)
/// parameters; parameters the stage does not take are `None`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub x: Image,
    pub alpha: Option<f64>,
    pub s_w: Option<Image>,
    pub s_b: Option<Image>,
    pub t: Option<Image>,
    pub background: Option<Image>,
    pub detail: Option<Image>,
}

impl Gradients {
    fn image_only(x: Image) -> Self {
        Self {
            x,
            alpha: None,
            s_w: None,
            s_b: None,
            t: None,
            background: None,
            detail: None,
        }
    }
}

/// Vector-Jacobian product of a single recorded stage.
pub fn vjp(stage: Stage, tape: &Tape, upstream: &Image) -> Result<Gradients> {
    let cfg = &tape.cfg;
    match stage {
        Stage::Blur => {
            let rec = tape.blur.as_ref().ok_or(Error::MissingTape("blur"))?;
            let (gx, ga) = phi_blur_vjp(&rec.x, rec.alpha, cfg.blur_sigma, upstream);
            Ok(Gradients {
                alpha: Some(ga),
                ..Gradients::image_only(gx)
            })
        }
        Stage::Lighting => {
            let rec = tape.lighting.as_ref().ok_or(Error::MissingTape("lighting"))?;
            let g = phi_lighting_vjp(&rec.x, &rec.s_w, &rec.s_b, cfg.light_sigma, upstream);
            Ok(Gradients {
                s_w: Some(g.s_w),
                s_b: Some(g.s_b),
                t: Some(g.t),
                ..Gradients::image_only(g.x)
            })
        }
        Stage::Background => {
            if !tape.background {
                return Err(Error::MissingTape("background"));
            }
            let (gx, gd) = phi_bg_vjp(&tape.bg_mask, upstream);
            Ok(Gradients {
                background: Some(gd),
                ..Gradients::image_only(gx)
            })
        }
        Stage::Detail => {
            if !tape.detail {
                return Err(Error::MissingTape("detail"));
            }
            let (gx, gd) = phi_detail_vjp(cfg.highpass_sigma, cfg.highpass_repeats, upstream);
            Ok(Gradients {
                detail: Some(gd),
                ..Gradients::image_only(gx)
            })
        }
    }
}

/// Gradients w.r.t. the clean image and every raw parameter. Stages that
/// were not applied get zero gradients.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub x: Image,
    pub alpha: f64,
    pub s_w: Image,
    pub s_b: Image,
    pub t: Image,
    pub background: Image,
    pub detail: Image,
}

fn raw_grad(raw: &Image, cfg: &ClipConfig, g: &Image, penalty_weight: f64) -> Image {
    Image::from_vec(
        raw.width(),
        raw.height(),
        clip_vjp(raw.data(), cfg, g.data(), penalty_weight),
    )
    .expect("clip grad dims")
}

impl Tape {
    /// Backpropagates `∂L/∂image` plus `penalty_weight · penalty` through
    /// every recorded stage and clip layer.
    pub fn backward(&self, grad_out: &Image, penalty_weight: f64) -> Result<ParamGrads> {
        let cfg = &self.cfg;
        let (w, h) = grad_out.dims();
        let mut out = ParamGrads {
            x: Image::zeros(w, h),
            alpha: 0.0,
            s_w: Image::zeros(w, h),
            s_b: Image::zeros(w, h),
            t: Image::zeros(w, h),
            background: Image::zeros(w, h),
            detail: Image::zeros(w, h),
        };
        let mut g = grad_out.clone();
        if self.detail {
            let s = vjp(Stage::Detail, self, &g)?;
            out.detail = raw_grad(&self.raw.detail, &cfg.detail, &s.detail.unwrap(), penalty_weight);
            g = s.x;
        }
        if self.background {
            let s = vjp(Stage::Background, self, &g)?;
            out.background = raw_grad(
                &self.raw.background,
                &cfg.background,
                &s.background.unwrap(),
                penalty_weight,
            );
            g = s.x;
        }
        if self.lighting.is_some() {
            let s = vjp(Stage::Lighting, self, &g)?;
            out.s_w = raw_grad(&self.raw.s_w, &cfg.scale, &s.s_w.unwrap(), penalty_weight);
            out.s_b = raw_grad(&self.raw.s_b, &cfg.scale, &s.s_b.unwrap(), penalty_weight);
            out.t = raw_grad(&self.raw.t, &cfg.shift, &s.t.unwrap(), penalty_weight);
            g = s.x;
        }
        let s = vjp(Stage::Blur, self, &g)?;
        out.alpha = clip_vjp(&[self.raw.alpha], &cfg.alpha, &[s.alpha.unwrap()], penalty_weight)[0];
        out.x = s.x;
        Ok(out)
    }
}
