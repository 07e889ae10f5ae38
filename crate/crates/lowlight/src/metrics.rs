//! Full-reference quality metrics: PSNR and SSIM on unit dynamic range.

use crate::error::{Error, Result};
use crate::img::{luminance, RgbImage};

/// PSNR saturates at this value instead of going to infinity at zero MSE.
pub const PSNR_SATURATION_DB: f32 = 100.0;

/// Per-image metric values; fields are absent when their inputs (reference
/// image, pristine corpus) were not supplied.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricReport {
    pub psnr_db: Option<f32>,
    pub ssim: Option<f32>,
    pub niqe: Option<f32>,
}

/// Peak signal-to-noise ratio in dB with peak 1.0; MSE below 1e-12 returns
/// the saturation sentinel.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f32> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "psnr on {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut acc = 0.0f64;
    let n = a.width() * a.height() * 3;
    for c in 0..3 {
        for (&x, &y) in a.channel(c).iter().zip(b.channel(c)) {
            let d = (x - y) as f64;
            acc += d * d;
        }
    }
    let mse = acc / n as f64;
    if mse < 1e-12 {
        return Ok(PSNR_SATURATION_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()) as f32)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let half = (len - 1) as f64 / 2.0;
    let mut k: Vec<f64> = (0..len)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter; output is (h-len+1) x (w-len+1).
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let len = kernel.len();
    let ow = w - len + 1;
    // horizontal pass
    let mut hbuf = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * data[y * w + x + i];
            }
            hbuf[y * ow + x] = acc;
        }
    }
    // vertical pass
    let oh = h - len + 1;
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * hbuf[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all 11x11 Gaussian-weighted windows of the luminance
/// planes. Both extents must be at least 11.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f32> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "ssim on {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "ssim needs extents of at least {SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let la: Vec<f64> = luminance(a).data().iter().map(|&v| v as f64).collect();
    let lb: Vec<f64> = luminance(b).data().iter().map(|&v| v as f64).collect();
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);

    let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| x * x).collect() };
    let prod: Vec<f64> = la.iter().zip(&lb).map(|(&x, &y)| x * y).collect();

    let (mu_a, ow, oh) = filter_valid(&la, w, h, &kernel);
    let (mu_b, _, _) = filter_valid(&lb, w, h, &kernel);
    let (e_aa, _, _) = filter_valid(&sq(&la), w, h, &kernel);
    let (e_bb, _, _) = filter_valid(&sq(&lb), w, h, &kernel);
    let (e_ab, _, _) = filter_valid(&prod, w, h, &kernel);

    let mut acc = 0.0f64;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        acc += num / den;
    }
    Ok((acc / (ow * oh) as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = w * h;
        let mut chans = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for ch in &mut chans {
            for v in ch.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
        }
        RgbImage::new(w, h, chans).unwrap()
    }

    #[test]
    fn psnr_saturates_on_identical_images() {
        let img = random_image(16, 16, 1);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_SATURATION_DB);
    }

    #[test]
    fn psnr_closed_form_uniform_difference() {
        let a = RgbImage::splat(8, 8, [0.4; 3]).unwrap();
        let b = RgbImage::splat(8, 8, [0.5; 3]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn psnr_matches_brute_force() {
        let a = random_image(12, 9, 2);
        let b = random_image(12, 9, 3);
        let mut acc = 0.0f64;
        for c in 0..3 {
            for (&x, &y) in a.channel(c).iter().zip(b.channel(c)) {
                acc += ((x - y) as f64).powi(2);
            }
        }
        let expected = 10.0 * (1.0 / (acc / (12.0 * 9.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() as f64 - expected).abs() < 1e-4);
    }

    #[test]
    fn psnr_decreases_with_perturbation() {
        let a = random_image(16, 16, 4);
        let mut prev = f32::INFINITY;
        for delta in [0.05f32, 0.1, 0.2, 0.4] {
            let b = a.map(|v| (v * (1.0 - delta) + delta * 0.5));
            let p = psnr(&a, &b).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn psnr_shape_mismatch_rejected() {
        let a = random_image(8, 8, 5);
        let b = random_image(9, 8, 5);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let img = random_image(24, 18, 6);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        // constants 0.2 vs 0.8: variance terms vanish, luminance term is
        // (2*0.16 + C1) / (0.04 + 0.64 + C1)
        let a = RgbImage::splat(16, 16, [0.2; 3]).unwrap();
        let b = RgbImage::splat(16, 16, [0.8; 3]).unwrap();
        assert!((ssim(&a, &b).unwrap() - 0.470666) < 1e-3);
        assert!((ssim(&a, &b).unwrap() - 0.470666).abs() < 1e-3);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        for seed in 0..6u64 {
            let a = random_image(16, 16, 100 + seed);
            let b = random_image(16, 16, 200 + seed);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-7);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn ssim_too_small_rejected() {
        let a = random_image(10, 16, 7);
        assert!(ssim(&a, &a).is_err());
    }
}
