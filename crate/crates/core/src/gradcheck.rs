//! Central finite-difference checks of every stage VJP, the composed tape
//! and the generator.
//!
//! Each case draws inputs, a random upstream weighting `w` and compares the
//! analytic gradient of `⟨w, f(inputs)⟩` (plus the weighted clip penalty
//! where one applies) with central differences over every input entry.
//! Inputs are redrawn until they sit away from the two kinks of the
//! pipeline: the white-mask threshold at 0 and the clip bounds.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{Generator, GeneratorConfig};
use crate::diff_ops::{
    clip_vjp, clip_with_penalty, compose, gaussian_blur, gaussian_blur_adjoint, highpass, highpass_vjp, phi_bg,
    phi_bg_vjp, phi_blur, phi_blur_vjp, phi_detail, phi_detail_vjp, phi_lighting, phi_lighting_vjp, AugmentParams,
    ClipConfig, Stage, StageConfig,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;
use crate::tag_model::{render, PoseDistribution, RenderOutput, TagGeometry};

/// Side of every checked image.
pub const SIZE: usize = 16;
/// Minimum distance of any kink input from its kink.
const KINK_MARGIN: f64 = 1e-3;
const PENALTY_WEIGHT: f64 = 0.7;

pub const CASES: [&str; 9] = [
    "gaussian_blur",
    "phi_blur",
    "phi_lighting",
    "phi_bg",
    "highpass",
    "phi_detail",
    "clip",
    "compose",
    "generator",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seeds: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negates the analytic gradient of the named case.
    pub sign_flip: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            sign_flip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    /// Worst relative error over seeds and inputs.
    pub max_rel_error: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_error < self.tolerance)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let verdict = if c.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<14} max rel error {:.3e}  entries {:>7}  {verdict}",
                c.name, c.max_rel_error, c.entries
            );
        }
        s
    }
}

/// `max |a − n| / max(|a|∞, |n|∞)` over one gradient vector.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Central differences of `f` at `x` along every coordinate.
fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + h;
            let up = f(&p);
            p[i] = v - h;
            let down = f(&p);
            p[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn img(v: &[f64]) -> Image {
    Image::from_vec(SIZE, SIZE, v.to_vec()).expect("gradcheck dims")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Image {
    Image::from_fn(SIZE, SIZE, |_, _| rng.random_range(lo..hi))
}

/// Values in `[-1, 1]` no closer than `KINK_MARGIN` to 0.
fn signed(rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(SIZE, SIZE, |_, _| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn away_from_zero(x: &Image) -> bool {
    x.data().iter().all(|v| v.abs() > KINK_MARGIN)
}

fn away_from_bounds(v: &[f64], c: &ClipConfig) -> bool {
    v.iter().all(|x| (x - c.a).abs() > KINK_MARGIN && (x - c.b).abs() > KINK_MARGIN)
}

/// Draws until `ok` holds (at most 1000 tries).
fn draw<T>(rng: &mut ChaCha8Rng, mut make: impl FnMut(&mut ChaCha8Rng) -> T, ok: impl Fn(&T) -> bool) -> Result<T> {
    for _ in 0..1000 {
        let v = make(rng);
        if ok(&v) {
            return Ok(v);
        }
    }
    Err(Error::InvalidParameter("could not draw gradcheck inputs away from kinks".into()))
}

/// One compared input: analytic gradient and the scalar loss as a function
/// of that input alone.
struct Check<'a> {
    at: Vec<f64>,
    analytic: Vec<f64>,
    loss: Box<dyn Fn(&[f64]) -> f64 + 'a>,
}

fn run_checks(checks: Vec<Check<'_>>, h: f64, flip: bool) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for c in checks {
        let numeric = numeric_grad(&c.at, h, &c.loss);
        let analytic: Vec<f64> = if flip { c.analytic.iter().map(|v| -v).collect() } else { c.analytic };
        worst = worst.max(rel_error(&analytic, &numeric));
        entries += numeric.len();
    }
    (worst, entries)
}

fn random_render(rng: &mut ChaCha8Rng, geom: &TagGeometry) -> Result<RenderOutput> {
    let label = PoseDistribution::default().sample(rng);
    render(&label, SIZE, geom)
}

fn case(name: &str, rng: &mut ChaCha8Rng, cfg: &StageConfig, h: f64, flip: bool) -> Result<(f64, usize)> {
    let w = uniform(rng, -1.0, 1.0);
    let dot = |a: &Image| a.dot(&w);
    let sigma = cfg.blur_sigma;
    let checks: Vec<Check> = match name {
        "gaussian_blur" => {
            let x = uniform(rng, -1.0, 1.0);
            let s = rng.random_range(0.5..3.0);
            vec![Check {
                analytic: gaussian_blur_adjoint(&w, s).into_vec(),
                at: x.into_vec(),
                loss: Box::new(move |v| dot(&gaussian_blur(&img(v), s))),
            }]
        }
        "phi_blur" => {
            let x = uniform(rng, -1.0, 1.0);
            let alpha = rng.random_range(0.0..1.0);
            let (gx, ga) = phi_blur_vjp(&x, alpha, sigma, &w);
            let x2 = x.clone();
            vec![
                Check {
                    at: x.clone().into_vec(),
                    analytic: gx.into_vec(),
                    loss: Box::new(move |v| dot(&phi_blur(&img(v), alpha, sigma))),
                },
                Check {
                    at: vec![alpha],
                    analytic: vec![ga],
                    loss: Box::new(move |v| dot(&phi_blur(&x2, v[0], sigma))),
                },
            ]
        }
        "phi_lighting" => {
            let ls = cfg.light_sigma;
            let x = signed(rng);
            let s_w = uniform(rng, cfg.scale.a, cfg.scale.b);
            let s_b = uniform(rng, cfg.scale.a, cfg.scale.b);
            let t = uniform(rng, cfg.shift.a, cfg.shift.b);
            let g = phi_lighting_vjp(&x, &s_w, &s_b, ls, &w);
            let f = move |x: &Image, s_w: &Image, s_b: &Image, t: &Image| dot(&phi_lighting(x, s_w, s_b, t, ls).unwrap());
            let (a, b, c, d) = (x.clone(), s_w.clone(), s_b.clone(), t.clone());
            let (a2, b2, c2, d2) = (x.clone(), s_w.clone(), s_b.clone(), t.clone());
            let (a3, b3, c3, d3) = (x.clone(), s_w.clone(), s_b.clone(), t.clone());
            vec![
                Check {
                    at: x.into_vec(),
                    analytic: g.x.into_vec(),
                    loss: Box::new(move |v| f(&img(v), &b, &c, &d)),
                },
                Check {
                    at: s_w.into_vec(),
                    analytic: g.s_w.into_vec(),
                    loss: Box::new(move |v| f(&a, &img(v), &c2, &d2)),
                },
                Check {
                    at: s_b.into_vec(),
                    analytic: g.s_b.into_vec(),
                    loss: Box::new(move |v| f(&a2, &b2, &img(v), &d3)),
                },
                Check {
                    at: t.into_vec(),
                    analytic: g.t.into_vec(),
                    loss: Box::new(move |v| f(&a3, &b3, &c3, &img(v))),
                },
            ]
        }
        "phi_bg" => {
            let r = random_render(rng, &TagGeometry::default())?;
            let x = uniform(rng, -1.0, 1.0);
            let d = uniform(rng, -1.0, 1.0);
            let (gx, gd) = phi_bg_vjp(&r.bg_mask, &w);
            let (m1, m2, d1, x1) = (r.bg_mask.clone(), r.bg_mask, d.clone(), x.clone());
            vec![
                Check {
                    at: x.into_vec(),
                    analytic: gx.into_vec(),
                    loss: Box::new(move |v| dot(&phi_bg(&img(v), &m1, &d1).unwrap())),
                },
                Check {
                    at: d.into_vec(),
                    analytic: gd.into_vec(),
                    loss: Box::new(move |v| dot(&phi_bg(&x1, &m2, &img(v)).unwrap())),
                },
            ]
        }
        "highpass" => {
            let (hs, hr) = (cfg.highpass_sigma, cfg.highpass_repeats);
            let d = uniform(rng, -2.0, 2.0);
            vec![Check {
                at: d.into_vec(),
                analytic: highpass_vjp(hs, hr, &w).into_vec(),
                loss: Box::new(move |v| dot(&highpass(&img(v), hs, hr))),
            }]
        }
        "phi_detail" => {
            let (hs, hr) = (cfg.highpass_sigma, cfg.highpass_repeats);
            let x = uniform(rng, -1.0, 1.0);
            let d = uniform(rng, -2.0, 2.0);
            let (gx, gd) = phi_detail_vjp(hs, hr, &w);
            let (x1, d1) = (x.clone(), d.clone());
            vec![
                Check {
                    at: x.into_vec(),
                    analytic: gx.into_vec(),
                    loss: Box::new(move |v| dot(&phi_detail(&img(v), &d1, hs, hr).unwrap())),
                },
                Check {
                    at: d.into_vec(),
                    analytic: gd.into_vec(),
                    loss: Box::new(move |v| dot(&phi_detail(&x1, &img(v), hs, hr).unwrap())),
                },
            ]
        }
        "clip" => {
            let c = cfg.detail;
            let v = draw(rng, |r| uniform(r, c.a - 1.0, c.b + 1.0).into_vec(), |v| away_from_bounds(v, &c))?;
            let wv = w.clone().into_vec();
            let loss = move |v: &[f64]| {
                let (y, p) = clip_with_penalty(v, &c);
                y.iter().zip(&wv).map(|(a, b)| a * b).sum::<f64>() + PENALTY_WEIGHT * p
            };
            vec![Check {
                analytic: clip_vjp(&v, &cfg.detail, w.data(), PENALTY_WEIGHT),
                at: v,
                loss: Box::new(loss),
            }]
        }
        "compose" => compose_checks(rng, cfg, w)?,
        "generator" => return generator_case(rng, cfg, &w, h, flip),
        other => return Err(Error::InvalidParameter(format!("unknown gradcheck case {other:?}"))),
    };
    Ok(run_checks(checks, h, flip))
}

fn compose_checks(rng: &mut ChaCha8Rng, cfg: &StageConfig, w: Image) -> Result<Vec<Check<'static>>> {
    let r = random_render(rng, &TagGeometry::default())?;
    let cfg = cfg.clone();
    let inputs = |rng: &mut ChaCha8Rng| {
        let widen = |c: &ClipConfig| 0.25 * (c.b - c.a);
        let field = |rng: &mut ChaCha8Rng, c: &ClipConfig| uniform(rng, c.a - widen(c), c.b + widen(c));
        let x = signed(rng);
        let p = AugmentParams {
            alpha: rng.random_range(-0.25..1.25),
            s_w: field(rng, &cfg.scale),
            s_b: field(rng, &cfg.scale),
            t: field(rng, &cfg.shift),
            background: field(rng, &cfg.background),
            detail: field(rng, &cfg.detail),
        };
        (x, p)
    };
    let ok = |(x, p): &(Image, AugmentParams)| {
        away_from_bounds(&[p.alpha], &cfg.alpha)
            && away_from_bounds(p.s_w.data(), &cfg.scale)
            && away_from_bounds(p.s_b.data(), &cfg.scale)
            && away_from_bounds(p.t.data(), &cfg.shift)
            && away_from_bounds(p.background.data(), &cfg.background)
            && away_from_bounds(p.detail.data(), &cfg.detail)
            && away_from_zero(&phi_blur(x, cfg.alpha.clip(p.alpha), cfg.blur_sigma))
    };
    let (x, p) = draw(rng, inputs, ok)?;
    let render_with = {
        let r = r.clone();
        move |x: Image| RenderOutput { image: x, ..r.clone() }
    };
    let out = compose(&render_with(x.clone()), &p, &cfg, Stage::Detail)?;
    let g = out.tape.backward(&w, PENALTY_WEIGHT)?;
    let loss = {
        let (cfg, w) = (cfg.clone(), w.clone());
        move |x: &Image, p: &AugmentParams| {
            let o = compose(&render_with(x.clone()), p, &cfg, Stage::Detail).unwrap();
            o.image.dot(&w) + PENALTY_WEIGHT * o.penalty
        }
    };
    type Setter = fn(&mut AugmentParams, &[f64]);
    let fields: [(Image, Image, Setter); 5] = [
        (p.s_w.clone(), g.s_w, |p, v| p.s_w = img(v)),
        (p.s_b.clone(), g.s_b, |p, v| p.s_b = img(v)),
        (p.t.clone(), g.t, |p, v| p.t = img(v)),
        (p.background.clone(), g.background, |p, v| p.background = img(v)),
        (p.detail.clone(), g.detail, |p, v| p.detail = img(v)),
    ];
    let mut checks = Vec::new();
    {
        let (loss, p) = (loss.clone(), p.clone());
        checks.push(Check {
            at: x.clone().into_vec(),
            analytic: g.x.into_vec(),
            loss: Box::new(move |v| loss(&img(v), &p)),
        });
    }
    {
        let (loss, p, x) = (loss.clone(), p.clone(), x.clone());
        checks.push(Check {
            at: vec![p.alpha],
            analytic: vec![g.alpha],
            loss: Box::new(move |v| loss(&x, &AugmentParams { alpha: v[0], ..p.clone() })),
        });
    }
    for (at, analytic, set) in fields {
        let (loss, p, x) = (loss.clone(), p.clone(), x.clone());
        checks.push(Check {
            at: at.into_vec(),
            analytic: analytic.into_vec(),
            loss: Box::new(move |v| {
                let mut q = p.clone();
                set(&mut q, v);
                loss(&x, &q)
            }),
        });
    }
    Ok(checks)
}

/// Tiny generator with random heads centered in their intervals; checks the
/// gradient w.r.t. the latent and every parameter.
fn generator_case(rng: &mut ChaCha8Rng, cfg: &StageConfig, w: &Image, h: f64, flip: bool) -> Result<(f64, usize)> {
    let geom = TagGeometry::default();
    let base = random_render(rng, &geom)?;
    let setup = |rng: &mut ChaCha8Rng| -> Result<(Generator, Vec<f64>, RenderOutput)> {
        let mut g = Generator::new(GeneratorConfig::tiny(), cfg.clone(), SIZE, rng)?;
        g.center_heads();
        g.randomize_heads(0.5, rng);
        let z = g.sample_latent(rng);
        let r = RenderOutput {
            image: signed(rng),
            ..base.clone()
        };
        Ok((g, z, r))
    };
    let ok = |(g, z, r): &(Generator, Vec<f64>, RenderOutput)| {
        let Ok((p, _)) = g.stage_params(z, r) else {
            return false;
        };
        away_from_bounds(&[p.alpha], &cfg.alpha)
            && away_from_bounds(p.s_w.data(), &cfg.scale)
            && away_from_bounds(p.s_b.data(), &cfg.scale)
            && away_from_bounds(p.t.data(), &cfg.shift)
            && away_from_bounds(p.background.data(), &cfg.background)
            && away_from_bounds(p.detail.data(), &cfg.detail)
            && away_from_zero(&phi_blur(&r.image, cfg.alpha.clip(p.alpha), cfg.blur_sigma))
    };
    let mut found = None;
    for _ in 0..1000 {
        let s = setup(rng)?;
        if ok(&s) {
            found = Some(s);
            break;
        }
    }
    let (g, z, r) = found.ok_or_else(|| Error::InvalidParameter("could not draw generator away from kinks".into()))?;
    let out = g.forward(&z, &r)?;
    let pg = out.composed.tape.backward(w, PENALTY_WEIGHT)?;
    let mut gp = vec![0.0; g.num_params()];
    let gz = g.backward(&out.cache, &pg, &mut gp);
    let loss = |g: &Generator, z: &[f64]| {
        let o = g.forward(z, &r).unwrap().composed;
        o.image.dot(w) + PENALTY_WEIGHT * o.penalty
    };
    let checks = vec![
        Check {
            at: z.clone(),
            analytic: gz,
            loss: Box::new(|v| loss(&g, v)),
        },
        Check {
            at: g.params.clone(),
            analytic: gp,
            loss: Box::new(|v| {
                let mut g2 = g.clone();
                g2.params.copy_from_slice(v);
                loss(&g2, &z)
            }),
        },
    ];
    Ok(run_checks(checks, h, flip))
}

/// Runs every case over `cfg.seeds` seeds.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.seeds == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Error::Config("gradcheck needs seeds ≥ 1 and positive step and tolerance".into()));
    }
    if let Some(name) = &cfg.sign_flip {
        if !CASES.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown gradcheck case {name:?}")));
        }
    }
    let stages = StageConfig::for_resolution(SIZE);
    let base = seed::stream(cfg.seed, "gradcheck");
    let mut cases = Vec::new();
    for (k, name) in CASES.iter().enumerate() {
        let flip = cfg.sign_flip.as_deref() == Some(*name);
        let mut worst = 0.0f64;
        let mut entries = 0;
        for s in 0..cfg.seeds as u64 {
            let mut rng = seed::rng(seed::derive(seed::derive(base, k as u64), s));
            let (e, n) = case(name, &mut rng, &stages, cfg.step, flip)?;
            worst = worst.max(e);
            entries += n;
        }
        cases.push(CaseResult {
            name: name.to_string(),
            max_rel_error: worst,
            entries,
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_basics() {
        assert_eq!(rel_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rel_error(&[1.0, -2.0], &[-1.0, 2.0]) - 2.0).abs() < 1e-12);
        assert_eq!(rel_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn numeric_grad_of_quadratic() {
        let g = numeric_grad(&[1.0, -2.0], 1e-5, |v| v[0] * v[0] + 3.0 * v[1]);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn all_cases_pass_on_a_few_seeds() {
        let cfg = GradcheckConfig {
            seeds: 2,
            ..GradcheckConfig::default()
        };
        let report = run_gradcheck(&cfg).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert_eq!(report.cases.len(), CASES.len());
    }

    #[test]
    fn sign_flip_is_caught() {
        for name in ["phi_lighting", "generator"] {
            let cfg = GradcheckConfig {
                seeds: 1,
                sign_flip: Some(name.into()),
                ..GradcheckConfig::default()
            };
            let report = run_gradcheck(&cfg).unwrap();
            assert!(!report.passed());
            let bad: Vec<_> = report.cases.iter().filter(|c| c.max_rel_error >= cfg.tolerance).collect();
            assert_eq!(bad.len(), 1);
            assert_eq!(bad[0].name, name);
        }
    }

    #[test]
    fn rejects_unknown_fault() {
        let cfg = GradcheckConfig {
            sign_flip: Some("nope".into()),
            ..GradcheckConfig::default()
        };
        assert!(run_gradcheck(&cfg).is_err());
    }
}
