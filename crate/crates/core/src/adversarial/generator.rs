//! Generator: a latent vector plus the clean render's image and depth map
//! produce the raw (pre-clip) parameters of every augmentation stage.
//!
//! ```text
//! z ─ trunk ─ h ─┬─ alpha head ─────────────────────────── α
//!                ├─ detail head ────────────────────────── detail (R×R)
//!                ├─ [h, pooled depth, pooled image] ─ light hidden ─ s_w, s_b, t grids ─ upsample
//!                └─ [h, light hidden, pooled image] ─ background grid ─ upsample
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{tanh, tanh_backward, Dense, Layout};
use crate::diff_ops::{compose, AugmentParams, Composed, ParamGrads, Stage, StageConfig};
use crate::error::{Error, Result};
use crate::image::{avg_pool, Image, Resampler};
use crate::tag_model::{RenderOutput, MIN_RESOLUTION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub light_hidden: usize,
    /// Side of the low-resolution lighting grids.
    pub light_grid: usize,
    /// Side of the low-resolution background grid.
    pub background_grid: usize,
    /// Side of the pooled image and depth inputs.
    pub pool_grid: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: 64,
            light_hidden: 32,
            light_grid: 8,
            background_grid: 16,
            pool_grid: 8,
        }
    }
}

impl GeneratorConfig {
    /// A small configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 6,
            hidden: 5,
            light_hidden: 4,
            light_grid: 4,
            background_grid: 4,
            pool_grid: 4,
        }
    }

    pub fn validate(&self, resolution: usize) -> Result<()> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::ResolutionTooSmall {
                resolution,
                minimum: MIN_RESOLUTION,
            });
        }
        let sizes = [
            self.latent_dim,
            self.hidden,
            self.light_hidden,
            self.light_grid,
            self.background_grid,
            self.pool_grid,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("generator sizes must be positive: {self:?}")));
        }
        let pool = self.pool_grid.min(resolution);
        if resolution % pool != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution} is not a multiple of the pool grid {pool}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Arch {
    resolution: usize,
    light_grid: usize,
    pool: usize,
    trunk: Dense,
    alpha: Dense,
    light_in: Dense,
    light_out: Dense,
    background: Dense,
    detail: Dense,
    len: usize,
    up_light: Resampler,
    up_bg: Resampler,
}

impl Arch {
    fn new(cfg: &GeneratorConfig, resolution: usize) -> Self {
        let r = resolution;
        let light_grid = cfg.light_grid.min(r);
        let bg_grid = cfg.background_grid.min(r);
        let pool = cfg.pool_grid.min(r);
        let mut layout = Layout::default();
        let trunk = Dense::new(&mut layout, cfg.latent_dim, cfg.hidden);
        let alpha = Dense::new(&mut layout, cfg.hidden, 1);
        let light_in = Dense::new(&mut layout, cfg.hidden + 2 * pool * pool, cfg.light_hidden);
        let light_out = Dense::new(&mut layout, cfg.light_hidden, 3 * light_grid * light_grid);
        let background = Dense::new(&mut layout, cfg.hidden + cfg.light_hidden + pool * pool, bg_grid * bg_grid);
        let detail = Dense::new(&mut layout, cfg.hidden, r * r);
        Self {
            resolution: r,
            light_grid,
            pool,
            trunk,
            alpha,
            light_in,
            light_out,
            background,
            detail,
            len: layout.len(),
            up_light: Resampler::bilinear((light_grid, light_grid), (r, r)),
            up_bg: Resampler::bilinear((bg_grid, bg_grid), (r, r)),
        }
    }

    fn heads(&self) -> [Dense; 4] {
        [self.alpha, self.light_out, self.background, self.detail]
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GenCache {
    z: Vec<f64>,
    h: Vec<f64>,
    light_x: Vec<f64>,
    light_h: Vec<f64>,
    bg_x: Vec<f64>,
}

pub struct GenOutput {
    pub composed: Composed,
    pub params: AugmentParams,
    pub cache: GenCache,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub stages: StageConfig,
    arch: Arch,
    pub params: Vec<f64>,
}

impl Generator {
    /// Hidden layers random, output heads zero with biases at the stage
    /// identity points, so the initial generator returns the clean render.
    pub fn new<R: Rng + ?Sized>(
        config: GeneratorConfig,
        stages: StageConfig,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(resolution)?;
        stages.validate()?;
        let arch = Arch::new(&config, resolution);
        let mut params = vec![0.0; arch.len];
        arch.trunk.init(&mut params, 1.0, rng);
        arch.light_in.init(&mut params, 1.0, rng);
        let mut g = Self {
            config,
            stages,
            arch,
            params,
        };
        g.reset_heads();
        Ok(g)
    }

    pub fn from_params(config: GeneratorConfig, stages: StageConfig, resolution: usize, params: Vec<f64>) -> Result<Self> {
        config.validate(resolution)?;
        stages.validate()?;
        let arch = Arch::new(&config, resolution);
        if params.len() != arch.len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} generator parameters", arch.len),
                found: format!("{}", params.len()),
            });
        }
        Ok(Self {
            config,
            stages,
            arch,
            params,
        })
    }

    /// Zero head weights; biases `s = 1`, `t = 0`, everything else 0.
    pub fn reset_heads(&mut self) {
        let a = &self.arch;
        for head in a.heads() {
            head.weights_mut(&mut self.params).fill(0.0);
            head.bias_mut(&mut self.params).fill(0.0);
        }
        let n = a.light_grid * a.light_grid;
        a.light_out.bias_mut(&mut self.params)[..2 * n].fill(1.0);
    }

    /// Moves every head bias to the midpoint of its clip interval.
    pub fn center_heads(&mut self) {
        let a = &self.arch;
        let c = &self.stages;
        a.alpha.bias_mut(&mut self.params).fill(c.alpha.midpoint());
        let n = a.light_grid * a.light_grid;
        let lo = a.light_out.bias_mut(&mut self.params);
        lo[..2 * n].fill(c.scale.midpoint());
        lo[2 * n..].fill(c.shift.midpoint());
        a.background.bias_mut(&mut self.params).fill(c.background.midpoint());
        a.detail.bias_mut(&mut self.params).fill(c.detail.midpoint());
    }

    /// Random head weights of the given scale (parameters then sit at generic
    /// points of the clip layers, away from the identity).
    pub fn randomize_heads<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for head in self.arch.heads() {
            let bias: Vec<f64> = head.bias_mut(&mut self.params).to_vec();
            head.init(&mut self.params, scale, rng);
            head.bias_mut(&mut self.params).copy_from_slice(&bias);
        }
    }

    pub fn resolution(&self) -> usize {
        self.arch.resolution
    }

    pub fn num_params(&self) -> usize {
        self.arch.len
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Parameter index ranges of the output heads, keyed by stage.
    pub fn head_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let idx = |d: &Dense| {
            let start = d.weights(&self.params).as_ptr() as usize - self.params.as_ptr() as usize;
            let start = start / std::mem::size_of::<f64>();
            start..start + d.inputs * d.outputs + d.outputs
        };
        let a = &self.arch;
        vec![
            ("blur", idx(&a.alpha)),
            ("lighting", idx(&a.light_out)),
            ("background", idx(&a.background)),
            ("detail", idx(&a.detail)),
        ]
    }

    /// Raw stage parameters for `z` and the given render.
    pub fn stage_params(&self, z: &[f64], render: &RenderOutput) -> Result<(AugmentParams, GenCache)> {
        let a = &self.arch;
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("latent of length {}", self.config.latent_dim),
                found: format!("{}", z.len()),
            });
        }
        let r = a.resolution;
        if render.image.dims() != (r, r) {
            return Err(Error::ShapeMismatch {
                expected: format!("{r}×{r} render"),
                found: format!("{:?}", render.image.dims()),
            });
        }
        let p = &self.params;
        let factor = r / a.pool;
        let pooled_img = avg_pool(&render.image, factor).into_vec();
        let pooled_depth = avg_pool(&render.depth, factor).into_vec();

        let h = tanh(&a.trunk.forward(p, z));
        let alpha = a.alpha.forward(p, &h)[0];

        let light_x: Vec<f64> = h.iter().chain(&pooled_depth).chain(&pooled_img).copied().collect();
        let light_h = tanh(&a.light_in.forward(p, &light_x));
        let lo = a.light_out.forward(p, &light_h);
        let n = a.light_grid * a.light_grid;
        let up = |s: &[f64]| Image::from_vec(r, r, a.up_light.apply_slice(s)).expect("grid dims");

        let bg_x: Vec<f64> = h.iter().chain(&light_h).chain(&pooled_img).copied().collect();
        let bg = a.background.forward(p, &bg_x);
        let detail = a.detail.forward(p, &h);

        let params = AugmentParams {
            alpha,
            s_w: up(&lo[..n]),
            s_b: up(&lo[n..2 * n]),
            t: up(&lo[2 * n..]),
            background: Image::from_vec(r, r, a.up_bg.apply_slice(&bg)).expect("grid dims"),
            detail: Image::from_vec(r, r, detail).expect("detail dims"),
        };
        let cache = GenCache {
            z: z.to_vec(),
            h,
            light_x,
            light_h,
            bg_x,
        };
        Ok((params, cache))
    }

    pub fn forward(&self, z: &[f64], render: &RenderOutput) -> Result<GenOutput> {
        self.forward_upto(z, render, Stage::Detail)
    }

    /// Applies the learned stages up to and including `upto`.
    pub fn forward_upto(&self, z: &[f64], render: &RenderOutput, upto: Stage) -> Result<GenOutput> {
        let (params, cache) = self.stage_params(z, render)?;
        let composed = compose(render, &params, &self.stages, upto)?;
        Ok(GenOutput {
            composed,
            params,
            cache,
        })
    }

    /// Accumulates `∂L/∂θ` into `grads` from the raw-parameter gradients and
    /// returns `∂L/∂z`.
    pub fn backward(&self, cache: &GenCache, pg: &ParamGrads, grads: &mut [f64]) -> Vec<f64> {
        let a = &self.arch;
        let p = &self.params;
        let hidden = self.config.hidden;

        let mut g_lo = a.up_light.adjoint_slice(pg.s_w.data());
        g_lo.extend(a.up_light.adjoint_slice(pg.s_b.data()));
        g_lo.extend(a.up_light.adjoint_slice(pg.t.data()));
        let g_bg = a.up_bg.adjoint_slice(pg.background.data());

        let mut gh = a.alpha.backward(p, &cache.h, &[pg.alpha], grads);
        add(&mut gh, &a.detail.backward(p, &cache.h, pg.detail.data(), grads));

        let g_bgx = a.background.backward(p, &cache.bg_x, &g_bg, grads);
        add(&mut gh, &g_bgx[..hidden]);
        let mut g_lh = g_bgx[hidden..hidden + self.config.light_hidden].to_vec();
        add(&mut g_lh, &a.light_out.backward(p, &cache.light_h, &g_lo, grads));

        let g_lpre = tanh_backward(&cache.light_h, &g_lh);
        let g_lx = a.light_in.backward(p, &cache.light_x, &g_lpre, grads);
        add(&mut gh, &g_lx[..hidden]);

        let g_hpre = tanh_backward(&cache.h, &gh);
        a.trunk.backward(p, &cache.z, &g_hpre, grads)
    }

    /// Latent vector with i.i.d. uniform(−1, 1) entries.
    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.latent_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
