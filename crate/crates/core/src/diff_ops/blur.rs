use crate::image::{reflect_index, Image};

/// Normalized Gaussian taps over `[-ceil(3σ), ceil(3σ)]`. `σ = 0` yields the
/// single tap `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be finite and >= 0");
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / denom).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / norm).collect()
}

fn convolve_rows(src: &Image, kernel: &[f64]) -> Image {
    let (w, h) = src.dims();
    let r = (kernel.len() / 2) as isize;
    let mut out = Image::zeros(w, h);
    let idx: Vec<Vec<usize>> = (0..w as isize)
        .map(|x| (-r..=r).map(|k| reflect_index(x + k, w)).collect())
        .collect();
    for y in 0..h {
        let row = &src.data()[y * w..(y + 1) * w];
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            *d = idx[x].iter().zip(kernel).map(|(&i, &k)| row[i] * k).sum();
        }
    }
    out
}

fn convolve_rows_adjoint(grad: &Image, kernel: &[f64]) -> Image {
    let (w, h) = grad.dims();
    let r = (kernel.len() / 2) as isize;
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        let g = &grad.data()[y * w..(y + 1) * w];
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for (x, &gx) in g.iter().enumerate() {
            for (k, &wk) in kernel.iter().enumerate() {
                dst[reflect_index(x as isize + k as isize - r, w)] += wk * gx;
            }
        }
    }
    out
}

fn transpose(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), |x, y| img.get(y, x))
}

/// Separable Gaussian blur with reflect borders.
pub fn gaussian_blur(x: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return x.clone();
    }
    let k = gaussian_kernel(sigma);
    let rows = convolve_rows(x, &k);
    transpose(&convolve_rows(&transpose(&rows), &k))
}

/// Adjoint of [`gaussian_blur`]: the same symmetric kernel, with the
/// reflected border contributions scattered back onto their sources.
pub fn gaussian_blur_adjoint(grad: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return grad.clone();
    }
    let k = gaussian_kernel(sigma);
    let cols = transpose(&convolve_rows_adjoint(&transpose(grad), &k));
    convolve_rows_adjoint(&cols, &k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 1.0, 2.0, 3.5, 4.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for i in 0..k.len() {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        // kernel wider than the image exercises repeated reflection
        let x = Image::filled(8, 8, 0.37);
        for sigma in [0.5, 2.0, 4.0] {
            let y = gaussian_blur(&x, sigma);
            assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = Image::from_fn(5, 7, |a, b| (a * 7 + b) as f64);
        assert_eq!(gaussian_blur(&x, 0.0), x);
    }

    #[test]
    fn impulse_matches_dense_gaussian() {
        // oracle: direct 2D convolution of the centered impulse, no borders reached
        let n = 33;
        let mut x = Image::zeros(n, n);
        x.set(16, 16, 1.0);
        let sigma = 2.0;
        let y = gaussian_blur(&x, sigma);
        let radius = 6i64;
        let g = |k: i64| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-radius..=radius).map(g).sum::<f64>().powi(2);
        for py in 0..n {
            for px in 0..n {
                let dx = px as i64 - 16;
                let dy = py as i64 - 16;
                let expect = if dx.abs() <= radius && dy.abs() <= radius {
                    g(dx) * g(dy) / norm
                } else {
                    0.0
                };
                assert!((y.get(px, py) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let a = Image::from_fn(9, 6, |x, y| ((x * 13 + y * 7) as f64).sin());
        let b = Image::from_fn(9, 6, |x, y| ((x * 3 + y * 11) as f64).cos());
        for sigma in [0.7, 2.0, 4.0] {
            let lhs = gaussian_blur(&a, sigma).dot(&b);
            let rhs = a.dot(&gaussian_blur_adjoint(&b, sigma));
            assert!((lhs - rhs).abs() < 1e-12, "sigma {sigma}: {lhs} vs {rhs}");
        }
    }
}
