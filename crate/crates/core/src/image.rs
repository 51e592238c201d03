//! Single-channel real-valued images and the linear resampling operators
//! shared by the augmentation stages, the generator heads and the pyramid.

use crate::error::{Error, Result};

/// Row-major `width × height` grid of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{} values cannot fill a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination; panics on shape mismatch.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert_eq!(self.dims(), other.dims(), "zip_map shape mismatch");
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Image) {
        assert_eq!(self.dims(), other.dims(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, k: f64) -> Image {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Bilinear sample at continuous index coordinates (pixel `i` sits at
    /// `i`), with half-sample symmetric reflection outside the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let xa = reflect_index(x0, self.width);
        let xb = reflect_index(x0 + 1, self.width);
        let ya = reflect_index(y0, self.height);
        let yb = reflect_index(y0 + 1, self.height);
        let top = self.get(xa, ya) * (1.0 - fx) + self.get(xb, ya) * fx;
        let bottom = self.get(xa, yb) * (1.0 - fx) + self.get(xb, yb) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid
/// for any offset, including ones wider than the signal.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Fixed linear resampling operator with up to four taps per output pixel.
/// Keeps the forward map and its adjoint next to each other so gradient
/// code never has to re-derive interpolation weights.
#[derive(Clone, Debug)]
pub struct Resampler {
    in_dims: (usize, usize),
    out_dims: (usize, usize),
    taps: Vec<[(usize, f64); 4]>,
}

impl Resampler {
    /// Bilinear resize with half-pixel alignment and clamped edges.
    pub fn bilinear(in_dims: (usize, usize), out_dims: (usize, usize)) -> Self {
        let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
            let ratio = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, src - i0 as f64)
                })
                .collect()
        };
        let xs = axis(in_dims.0, out_dims.0);
        let ys = axis(in_dims.1, out_dims.1);
        let w = in_dims.0;
        let mut taps = Vec::with_capacity(out_dims.0 * out_dims.1);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                taps.push([
                    (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                    (y0 * w + x1, fx * (1.0 - fy)),
                    (y1 * w + x0, (1.0 - fx) * fy),
                    (y1 * w + x1, fx * fy),
                ]);
            }
        }
        Self {
            in_dims,
            out_dims,
            taps,
        }
    }

    /// Nearest-neighbour resize (each output pixel copies one input pixel).
    pub fn nearest(in_dims: (usize, usize), out_dims: (usize, usize)) -> Self {
        let mut taps = Vec::with_capacity(out_dims.0 * out_dims.1);
        for oy in 0..out_dims.1 {
            let iy = (oy * in_dims.1) / out_dims.1;
            for ox in 0..out_dims.0 {
                let ix = (ox * in_dims.0) / out_dims.0;
                taps.push([(iy * in_dims.0 + ix, 1.0), (0, 0.0), (0, 0.0), (0, 0.0)]);
            }
        }
        Self {
            in_dims,
            out_dims,
            taps,
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        self.in_dims
    }

    pub fn out_dims(&self) -> (usize, usize) {
        self.out_dims
    }

    pub fn apply_slice(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_dims.0 * self.in_dims.1);
        self.taps
            .iter()
            .map(|t| t.iter().map(|&(i, w)| input[i] * w).sum())
            .collect()
    }

    pub fn apply(&self, input: &Image) -> Image {
        let (w, h) = self.out_dims;
        Image::from_vec(w, h, self.apply_slice(input.data())).expect("resampler dims")
    }

    /// Transpose of [`Resampler::apply_slice`].
    pub fn adjoint_slice(&self, grad_out: &[f64]) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.taps.len());
        let mut grad_in = vec![0.0; self.in_dims.0 * self.in_dims.1];
        for (t, &g) in self.taps.iter().zip(grad_out) {
            for &(i, w) in t {
                grad_in[i] += w * g;
            }
        }
        grad_in
    }
}

/// Block-average downsampling by an integer factor.
pub fn avg_pool(img: &Image, factor: usize) -> Image {
    assert!(factor > 0 && img.width() % factor == 0 && img.height() % factor == 0);
    if factor == 1 {
        return img.clone();
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Image::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                s += img.get(x * factor + dx, y * factor + dy);
            }
        }
        s * norm
    })
}

/// Adjoint of [`avg_pool`].
pub fn avg_pool_adjoint(grad: &Image, factor: usize) -> Image {
    let norm = 1.0 / (factor * factor) as f64;
    Image::from_fn(grad.width() * factor, grad.height() * factor, |x, y| {
        grad.get(x / factor, y / factor) * norm
    })
}
