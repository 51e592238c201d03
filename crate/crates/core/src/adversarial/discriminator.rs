//! Discriminator: average-pool to at most 32×32, two strided 4×4
//! convolutions with leaky ReLU, a dense layer to one logit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{leaky_relu, leaky_relu_backward, sigmoid, Conv2d, Dense, Layout};
use crate::error::{Error, Result};
use crate::image::{avg_pool, avg_pool_adjoint, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub channels1: usize,
    pub channels2: usize,
    /// Inputs larger than this are average-pooled down to it.
    pub max_input: usize,
    pub leak: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels1: 8,
            channels2: 16,
            max_input: 32,
            leak: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self {
            channels1: 2,
            channels2: 3,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
struct Arch {
    resolution: usize,
    pool: usize,
    size: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    dense: Dense,
    len: usize,
}

impl Arch {
    fn new(cfg: &DiscriminatorConfig, resolution: usize) -> Result<Self> {
        let mut size = resolution;
        let mut pool = 1;
        while size > cfg.max_input && size % 2 == 0 {
            size /= 2;
            pool *= 2;
        }
        if size % 4 != 0 || size > cfg.max_input || cfg.channels1 == 0 || cfg.channels2 == 0 {
            return Err(Error::Config(format!(
                "discriminator cannot take {resolution}×{resolution} inputs with {cfg:?}"
            )));
        }
        let mut layout = Layout::default();
        let conv1 = Conv2d::new(&mut layout, 1, cfg.channels1, 4, 2, 1);
        let conv2 = Conv2d::new(&mut layout, cfg.channels1, cfg.channels2, 4, 2, 1);
        let s2 = size / 4;
        let dense = Dense::new(&mut layout, cfg.channels2 * s2 * s2, 1);
        Ok(Self {
            resolution,
            pool,
            size,
            conv1,
            conv2,
            dense,
            len: layout.len(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DiscCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    arch: Arch,
    pub params: Vec<f64>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, resolution: usize, rng: &mut R) -> Result<Self> {
        let arch = Arch::new(&config, resolution)?;
        let mut params = vec![0.0; arch.len];
        arch.conv1.init(&mut params, 1.0, rng);
        arch.conv2.init(&mut params, 1.0, rng);
        arch.dense.init(&mut params, 1.0, rng);
        Ok(Self { config, arch, params })
    }

    pub fn from_params(config: DiscriminatorConfig, resolution: usize, params: Vec<f64>) -> Result<Self> {
        let arch = Arch::new(&config, resolution)?;
        if params.len() != arch.len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} discriminator parameters", arch.len),
                found: format!("{}", params.len()),
            });
        }
        Ok(Self { config, arch, params })
    }

    pub fn num_params(&self) -> usize {
        self.arch.len
    }

    pub fn resolution(&self) -> usize {
        self.arch.resolution
    }

    /// Zeroes the final dense layer (logit 0, score ½ for every input).
    pub fn zero_output_layer(&mut self) {
        self.arch.dense.weights_mut(&mut self.params).fill(0.0);
        self.arch.dense.bias_mut(&mut self.params).fill(0.0);
    }

    /// Pre-sigmoid output and the values needed by [`Discriminator::backward`].
    pub fn logit(&self, img: &Image) -> Result<(f64, DiscCache)> {
        let a = &self.arch;
        if img.dims() != (a.resolution, a.resolution) {
            return Err(Error::ShapeMismatch {
                expected: format!("{r}×{r} image", r = a.resolution),
                found: format!("{:?}", img.dims()),
            });
        }
        let p = &self.params;
        let x = avg_pool(img, a.pool).into_vec();
        let a1 = a.conv1.forward(p, &x, a.size);
        let h1 = leaky_relu(&a1, self.config.leak);
        let a2 = a.conv2.forward(p, &h1, a.size / 2);
        let h2 = leaky_relu(&a2, self.config.leak);
        let logit = a.dense.forward(p, &h2)[0];
        Ok((logit, DiscCache { x, a1, h1, a2, h2 }))
    }

    /// Probability that `img` is real.
    pub fn score(&self, img: &Image) -> Result<f64> {
        Ok(sigmoid(self.logit(img)?.0))
    }

    /// Accumulates parameter gradients for `∂L/∂logit` and returns `∂L/∂img`.
    pub fn backward(&self, cache: &DiscCache, g_logit: f64, grads: &mut [f64]) -> Image {
        let a = &self.arch;
        let p = &self.params;
        let leak = self.config.leak;
        let g_h2 = a.dense.backward(p, &cache.h2, &[g_logit], grads);
        let g_a2 = leaky_relu_backward(&cache.a2, leak, &g_h2);
        let g_h1 = a.conv2.backward(p, &cache.h1, a.size / 2, &g_a2, grads);
        let g_a1 = leaky_relu_backward(&cache.a1, leak, &g_h1);
        let g_x = a.conv1.backward(p, &cache.x, a.size, &g_a1, grads);
        let pooled = Image::from_vec(a.size, a.size, g_x).expect("pooled dims");
        avg_pool_adjoint(&pooled, a.pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_scores_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Discriminator::new(DiscriminatorConfig::default(), 16, &mut rng).unwrap();
        d.zero_output_layer();
        let img = Image::from_fn(16, 16, |x, y| ((x * y) as f64).sin());
        assert_eq!(d.score(&img).unwrap(), 0.5);
    }

    #[test]
    fn scores_stay_in_the_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new(DiscriminatorConfig::default(), 64, &mut rng).unwrap();
        for v in [-50.0, -1.0, 0.0, 3.0, 50.0] {
            let s = d.score(&Image::filled(64, 64, v)).unwrap();
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::new(DiscriminatorConfig::tiny(), 16, &mut rng).unwrap();
        let img = Image::from_fn(16, 16, |x, y| ((3 * x + 5 * y) as f64 * 0.37).sin());
        let (_, cache) = d.logit(&img).unwrap();
        let mut grads = vec![0.0; d.num_params()];
        let gx = d.backward(&cache, 1.0, &mut grads);
        let h = 1e-6;
        for i in (0..256).step_by(7) {
            let mut up = img.clone();
            up.data_mut()[i] += h;
            let mut down = img.clone();
            down.data_mut()[i] -= h;
            let fd = (d.logit(&up).unwrap().0 - d.logit(&down).unwrap().0) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-6, "{i}: {fd} vs {}", gx.data()[i]);
        }
    }

    #[test]
    fn pooling_for_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(DiscriminatorConfig::default(), 64, &mut rng).unwrap();
        let d32 = Discriminator::new(DiscriminatorConfig::default(), 32, &mut rng).unwrap();
        assert_eq!(d.num_params(), d32.num_params());
        assert!(Discriminator::new(DiscriminatorConfig::default(), 18, &mut rng).is_err());
    }
}
