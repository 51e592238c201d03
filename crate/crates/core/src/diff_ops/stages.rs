//! Forward maps and vector-Jacobian products of the individual stages.
//! Every `*_vjp` takes the forward inputs and the upstream gradient of the
//! stage output.

use super::blur::{gaussian_blur, gaussian_blur_adjoint};
use crate::error::Result;
use crate::image::Image;
use crate::tag_model::white_mask;

/// `(1 − α)(x − b(x)) + b(x)`, evaluated as `x + α (b(x) − x)` so that
/// `α = 0` returns `x` bit-exactly.
pub fn phi_blur(x: &Image, alpha: f64, sigma: f64) -> Image {
    let b = gaussian_blur(x, sigma);
    x.zip_map(&b, |xv, bv| xv + alpha * (bv - xv))
}

/// Returns `(∂/∂x, ∂/∂α)`.
pub fn phi_blur_vjp(x: &Image, alpha: f64, sigma: f64, grad: &Image) -> (Image, f64) {
    let b = gaussian_blur(x, sigma);
    let grad_alpha = grad
        .data()
        .iter()
        .zip(b.data().iter().zip(x.data()))
        .map(|(g, (bv, xv))| g * (bv - xv))
        .sum();
    let mut gx = gaussian_blur_adjoint(&grad.scale(alpha), sigma);
    for (a, g) in gx.data_mut().iter_mut().zip(grad.data()) {
        *a += (1.0 - alpha) * g;
    }
    (gx, grad_alpha)
}

/// `x·b(s_w)·W(x) + x·b(s_b)·(1 − W(x)) + b(t)` with `W` the white mask.
pub fn phi_lighting(x: &Image, s_w: &Image, s_b: &Image, t: &Image, sigma: f64) -> Result<Image> {
    x.same_shape(s_w)?;
    x.same_shape(s_b)?;
    x.same_shape(t)?;
    let w = white_mask(x);
    let bw = gaussian_blur(s_w, sigma);
    let bb = gaussian_blur(s_b, sigma);
    let bt = gaussian_blur(t, sigma);
    let mut out = Image::zeros(x.width(), x.height());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let xv = x.data()[i];
        let scale = if w.data()[i] == 1.0 { bw.data()[i] } else { bb.data()[i] };
        *o = xv * scale + bt.data()[i];
    }
    Ok(out)
}

pub struct LightingGrads {
    pub x: Image,
    pub s_w: Image,
    pub s_b: Image,
    pub t: Image,
}

/// `W(x)` is held constant.
pub fn phi_lighting_vjp(
    x: &Image,
    s_w: &Image,
    s_b: &Image,
    sigma: f64,
    grad: &Image,
) -> LightingGrads {
    let w = white_mask(x);
    let bw = gaussian_blur(s_w, sigma);
    let bb = gaussian_blur(s_b, sigma);
    let n = x.len();
    let (width, height) = x.dims();
    let mut gx = vec![0.0; n];
    let mut g_bw = vec![0.0; n];
    let mut g_bb = vec![0.0; n];
    for i in 0..n {
        let g = grad.data()[i];
        let xv = x.data()[i];
        if w.data()[i] == 1.0 {
            gx[i] = g * bw.data()[i];
            g_bw[i] = g * xv;
        } else {
            gx[i] = g * bb.data()[i];
            g_bb[i] = g * xv;
        }
    }
    let img = |v| Image::from_vec(width, height, v).expect("lighting dims");
    LightingGrads {
        x: img(gx),
        s_w: gaussian_blur_adjoint(&img(g_bw), sigma),
        s_b: gaussian_blur_adjoint(&img(g_bb), sigma),
        t: gaussian_blur_adjoint(grad, sigma),
    }
}

/// `x·(1 − B) + d·B`. Pixels with `B = 0` are copied from `x` unchanged.
pub fn phi_bg(x: &Image, bg_mask: &Image, d: &Image) -> Result<Image> {
    x.same_shape(bg_mask)?;
    x.same_shape(d)?;
    let mut out = x.clone();
    for ((o, &m), &dv) in out.data_mut().iter_mut().zip(bg_mask.data()).zip(d.data()) {
        if m == 1.0 {
            *o = dv;
        } else if m != 0.0 {
            *o = *o * (1.0 - m) + dv * m;
        }
    }
    Ok(out)
}

/// Returns `(∂/∂x, ∂/∂d)`.
pub fn phi_bg_vjp(bg_mask: &Image, grad: &Image) -> (Image, Image) {
    (
        grad.zip_map(bg_mask, |g, m| g * (1.0 - m)),
        grad.zip_map(bg_mask, |g, m| g * m),
    )
}

/// `H(v) = v − b(v)` applied `repeats` times.
pub fn highpass(d: &Image, sigma: f64, repeats: usize) -> Image {
    let mut v = d.clone();
    for _ in 0..repeats {
        let b = gaussian_blur(&v, sigma);
        v = v.zip_map(&b, |a, bv| a - bv);
    }
    v
}

pub fn highpass_vjp(sigma: f64, repeats: usize, grad: &Image) -> Image {
    let mut g = grad.clone();
    for _ in 0..repeats {
        let b = gaussian_blur_adjoint(&g, sigma);
        g = g.zip_map(&b, |a, bv| a - bv);
    }
    g
}

/// `x + highpass(d)`, not re-clamped.
pub fn phi_detail(x: &Image, d: &Image, sigma: f64, repeats: usize) -> Result<Image> {
    x.same_shape(d)?;
    let mut out = highpass(d, sigma, repeats);
    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *o += xv;
    }
    Ok(out)
}

/// Returns `(∂/∂x, ∂/∂d)`.
pub fn phi_detail_vjp(sigma: f64, repeats: usize, grad: &Image) -> (Image, Image) {
    (grad.clone(), highpass_vjp(sigma, repeats, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Image {
        Image::from_fn(n, n, |_, _| rng.random_range(lo..hi))
    }

    #[test]
    fn blur_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng, 16, -1.0, 1.0);
        assert_eq!(phi_blur(&x, 0.0, 2.0), x);
        let full = phi_blur(&x, 1.0, 2.0);
        let b = gaussian_blur(&x, 2.0);
        for (a, c) in full.data().iter().zip(b.data()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn lighting_identity_and_uniform_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 16, -1.0, 1.0);
        let ones = Image::filled(16, 16, 1.0);
        let zeros = Image::zeros(16, 16);
        let y = phi_lighting(&x, &ones, &ones, &zeros, 4.0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let tenth = Image::filled(16, 16, 0.1);
        let y = phi_lighting(&x, &tenth, &tenth, &zeros, 4.0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 0.1 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn bg_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 8, -1.0, 1.0);
        let d = random_image(&mut rng, 8, -1.0, 1.0);
        let mask = Image::from_fn(8, 8, |a, b| ((a + b) % 3 == 0) as u8 as f64);
        assert_eq!(phi_bg(&x, &mask, &x).unwrap(), x);
        assert_eq!(phi_bg(&x, &Image::zeros(8, 8), &d).unwrap(), x);
        let y = phi_bg(&x, &mask, &d).unwrap();
        for i in 0..x.len() {
            if mask.data()[i] == 0.0 {
                assert_eq!(y.data()[i].to_bits(), x.data()[i].to_bits());
            }
        }
        assert!(phi_bg(&x, &Image::zeros(4, 4), &d).is_err());
    }

    #[test]
    fn bg_gradient_wrt_d_is_masked_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_image(&mut rng, 8, -1.0, 1.0);
        let mask = Image::from_fn(8, 8, |a, _| (a < 3) as u8 as f64);
        let (_, gd) = phi_bg_vjp(&mask, &g);
        assert_eq!(gd, g.zip_map(&mask, |a, m| a * m));
    }

    #[test]
    fn highpass_kills_constants() {
        let c = Image::filled(16, 16, 1.7);
        assert!(highpass(&c, 3.5, 3).data().iter().all(|v| v.abs() < 1e-12));
        let z = Image::zeros(16, 16);
        assert_eq!(highpass(&z, 3.5, 3), z);
    }

    #[test]
    fn highpass_attenuation_of_a_sinusoid() {
        // Period-4 columns, phased to be symmetric under border reflection.
        // The blur response at that frequency is measured once; three
        // high-pass passes must scale the wave by (1 - ĝ)^3.
        let n = 64;
        let wave = Image::from_fn(n, n, |x, _| (std::f64::consts::TAU * (x as f64 + 0.5) / 4.0).cos());
        let blurred = gaussian_blur(&wave, 3.5);
        let g_hat = blurred.dot(&wave) / wave.dot(&wave);
        let out = highpass(&wave, 3.5, 3);
        let expected = (1.0 - g_hat).powi(3);
        let measured = out.dot(&wave) / wave.dot(&wave);
        assert!((measured - expected).abs() < 1e-9, "{measured} vs {expected}");
    }

    #[test]
    fn detail_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 16, -1.0, 1.0);
        let y = phi_detail(&x, &Image::filled(16, 16, 1.3), 3.5, 3).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(phi_detail(&x, &Image::zeros(16, 16), 3.5, 3).unwrap(), x);
    }
}
