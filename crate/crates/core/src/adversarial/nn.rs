//! Minimal layers over a flat parameter vector. Each layer records its
//! offsets into the owning network's parameters; gradients use the same
//! layout.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Allocates consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct Layout {
    len: usize,
}

impl Layout {
    fn take(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Fully connected layer `y = W x + b`, `W` row-major `out × in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    w: usize,
    b: usize,
}

impl Dense {
    pub fn new(layout: &mut Layout, inputs: usize, outputs: usize) -> Self {
        let w = layout.take(inputs * outputs);
        let b = layout.take(outputs);
        Self { inputs, outputs, w, b }
    }

    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.inputs * self.outputs]
    }

    pub fn weights_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.w..self.w + self.inputs * self.outputs]
    }

    pub fn bias_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.b..self.b + self.outputs]
    }

    /// Normal(0, scale²/inputs) weights and zero bias.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], scale: f64, rng: &mut R) {
        let std = scale / (self.inputs as f64).sqrt();
        if std > 0.0 {
            let n = Normal::new(0.0, std).expect("init std");
            for w in self.weights_mut(p) {
                *w = n.sample(rng);
            }
        } else {
            self.weights_mut(p).fill(0.0);
        }
        self.bias_mut(p).fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let w = self.weights(p);
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns `∂/∂x`.
    pub fn backward(&self, p: &[f64], x: &[f64], gy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let w = self.weights(p);
        let mut gx = vec![0.0; self.inputs];
        for (o, &go) in gy.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            g[self.b + o] += go;
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut g[self.w + o * self.inputs..self.w + (o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += go * x[i];
                gx[i] += go * row[i];
            }
        }
        gx
    }
}

/// 2D convolution over `channels × size × size` tensors stored channel-major,
/// zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    w: usize,
    b: usize,
}

impl Conv2d {
    pub fn new(
        layout: &mut Layout,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let w = layout.take(out_channels * in_channels * kernel * kernel);
        let b = layout.take(out_channels);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            w,
            b,
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], scale: f64, rng: &mut R) {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let n = Normal::new(0.0, scale / (fan_in as f64).sqrt()).expect("init std");
        let len = self.out_channels * fan_in;
        for w in &mut p[self.w..self.w + len] {
            *w = n.sample(rng);
        }
        p[self.b..self.b + self.out_channels].fill(0.0);
    }

    #[inline]
    fn widx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        self.w + ((o * self.in_channels + c) * self.kernel + ky) * self.kernel + kx
    }

    /// Source pixel of output `o` and tap `k`, if inside the input.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let s = (o * self.stride + k) as isize - self.padding as isize;
        (s >= 0 && (s as usize) < size).then_some(s as usize)
    }

    pub fn forward(&self, p: &[f64], x: &[f64], size: usize) -> Vec<f64> {
        let out = self.output_size(size);
        let mut y = vec![0.0; self.out_channels * out * out];
        for o in 0..self.out_channels {
            for oy in 0..out {
                for ox in 0..out {
                    let mut acc = p[self.b + o];
                    for c in 0..self.in_channels {
                        let plane = &x[c * size * size..(c + 1) * size * size];
                        for ky in 0..self.kernel {
                            let Some(sy) = self.source(oy, ky, size) else { continue };
                            for kx in 0..self.kernel {
                                let Some(sx) = self.source(ox, kx, size) else { continue };
                                acc += p[self.widx(o, c, ky, kx)] * plane[sy * size + sx];
                            }
                        }
                    }
                    y[(o * out + oy) * out + ox] = acc;
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &[f64], size: usize, gy: &[f64], g: &mut [f64]) -> Vec<f64> {
        let out = self.output_size(size);
        let mut gx = vec![0.0; x.len()];
        for o in 0..self.out_channels {
            for oy in 0..out {
                for ox in 0..out {
                    let go = gy[(o * out + oy) * out + ox];
                    if go == 0.0 {
                        continue;
                    }
                    g[self.b + o] += go;
                    for c in 0..self.in_channels {
                        let base = c * size * size;
                        for ky in 0..self.kernel {
                            let Some(sy) = self.source(oy, ky, size) else { continue };
                            for kx in 0..self.kernel {
                                let Some(sx) = self.source(ox, kx, size) else { continue };
                                let wi = self.widx(o, c, ky, kx);
                                let xi = base + sy * size + sx;
                                g[wi] += go * x[xi];
                                gx[xi] += go * p[wi];
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
}

pub fn leaky_relu_backward(x: &[f64], slope: f64, gy: &[f64]) -> Vec<f64> {
    x.iter().zip(gy).map(|(&v, &g)| if v > 0.0 { g } else { slope * g }).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Takes the activations `y = tanh(x)`.
pub fn tanh_backward(y: &[f64], gy: &[f64]) -> Vec<f64> {
    y.iter().zip(gy).map(|(&v, &g)| g * (1.0 - v * v)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(f: &dyn Fn(&[f64]) -> f64, at: &[f64], analytic: &[f64]) {
        let h = 1e-6;
        for i in 0..at.len() {
            let mut a = at.to_vec();
            a[i] += h;
            let up = f(&a);
            a[i] -= 2.0 * h;
            let down = f(&a);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn dense_gradients() {
        let mut layout = Layout::default();
        let d = Dense::new(&mut layout, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = vec![0.0; layout.len()];
        d.init(&mut p, 1.0, &mut rng);
        p.iter_mut().for_each(|v| *v += 0.1);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let r = [0.3, -1.2, 0.8];
        let loss = |p: &[f64], x: &[f64]| d.forward(p, x).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let mut g = vec![0.0; p.len()];
        let gx = d.backward(&p, &x, &r, &mut g);
        fd_check(&|pp| loss(pp, &x), &p, &g);
        fd_check(&|xx| loss(&p, xx), &x, &gx);
    }

    #[test]
    fn conv_gradients_and_shape() {
        let mut layout = Layout::default();
        let c = Conv2d::new(&mut layout, 2, 3, 4, 2, 1);
        assert_eq!(c.output_size(8), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![0.0; layout.len()];
        c.init(&mut p, 1.0, &mut rng);
        let x: Vec<f64> = (0..2 * 64).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let y = c.forward(&p, &x, 8);
        assert_eq!(y.len(), 3 * 16);
        let r: Vec<f64> = (0..y.len()).map(|i| (i as f64).cos()).collect();
        let loss = |p: &[f64], x: &[f64]| c.forward(p, x, 8).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let mut g = vec![0.0; p.len()];
        let gx = c.backward(&p, &x, 8, &r, &mut g);
        fd_check(&|pp| loss(pp, &x), &p, &g);
        fd_check(&|xx| loss(&p, xx), &x, &gx);
    }

    #[test]
    fn conv_matches_direct_sum() {
        // single channel, 3×3 kernel of ones, stride 1, pad 1: box sums
        let mut layout = Layout::default();
        let c = Conv2d::new(&mut layout, 1, 1, 3, 1, 1);
        let mut p = vec![1.0; layout.len()];
        *p.last_mut().unwrap() = 0.0;
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let y = c.forward(&p, &x, 4);
        // corner (0,0): 0 + 1 + 4 + 5
        assert_eq!(y[0], 10.0);
        // interior (1,1): 0+1+2+4+5+6+8+9+10
        assert_eq!(y[5], 45.0);
    }

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }
}
