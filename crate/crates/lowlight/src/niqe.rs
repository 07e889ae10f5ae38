//! No-reference quality scoring from natural-scene statistics.
//!
//! An image's luminance is normalized into MSCN coefficients (mean
//! subtracted, contrast normalized with a 7x7 Gaussian window). Each patch
//! contributes asymmetric-generalized-Gaussian fit parameters of the MSCN
//! field and its four neighboring pairwise products; a pristine corpus
//! yields a multivariate Gaussian over these features, and the score of a
//! test image is the Mahalanobis-style distance between the corpus model
//! and the image's own fit. Lower is better.
//!
//! The model here is fitted from a user-supplied corpus, so absolute
//! values are not comparable with scores from the original pristine model;
//! only orderings are meaningful.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;
use std::sync::OnceLock;

use crate::ckpt::NamedTensors;
use crate::error::{Error, Result};
use crate::img::{luminance, RgbImage};
use crate::tensor::Tensor;

/// Five AGGD fits (MSCN + 4 products), four parameters each.
pub const FEATURE_LEN: usize = 20;

const COV_EPSILON: f64 = 1e-6;
const MSCN_WINDOW: usize = 7;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
/// Patches whose sharpness reaches this quantile of their image are used
/// for fitting the pristine model.
const SHARPNESS_QUANTILE: f64 = 0.75;

/// Multivariate-Gaussian model of pristine natural-scene features.
#[derive(Debug, Clone)]
pub struct NiqeModel {
    mean: Vec<f64>,
    /// Row-major `FEATURE_LEN` x `FEATURE_LEN`, diagonal-regularized.
    cov: Vec<f64>,
    patch: usize,
    /// Identifier of the corpus the model was fitted from.
    source: String,
}

impl NiqeModel {
    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn to_named(&self) -> Result<NamedTensors> {
        let mut named = NamedTensors::new();
        named.push(
            "niqe.mean",
            Tensor::from_vec(vec![FEATURE_LEN], self.mean.iter().map(|&v| v as f32).collect())?,
        );
        named.push(
            "niqe.cov",
            Tensor::from_vec(
                vec![FEATURE_LEN, FEATURE_LEN],
                self.cov.iter().map(|&v| v as f32).collect(),
            )?,
        );
        named.push("niqe.patch", Tensor::scalar(self.patch as f32));
        Ok(named)
    }

    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let mean = named.take_checked("niqe.mean", &[FEATURE_LEN])?;
        let cov = named.take_checked("niqe.cov", &[FEATURE_LEN, FEATURE_LEN])?;
        let patch = named.take_checked("niqe.patch", &[1])?.item() as usize;
        Ok(Self {
            mean: mean.data().iter().map(|&v| v as f64).collect(),
            cov: cov.data().iter().map(|&v| v as f64).collect(),
            patch,
            source: "loaded".into(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_named()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_named(&NamedTensors::load(path)?)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // symmetric reflection without repeating the edge sample
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

/// Separable same-size Gaussian filter with symmetric border reflection.
fn gaussian_same(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut hbuf = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let xi = reflect(x as isize + i as isize - r as isize, w);
                acc += kv * data[y * w + xi];
            }
            hbuf[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                let yi = reflect(y as isize + i as isize - r as isize, h);
                acc += kv * hbuf[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

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

/// Mean-subtracted contrast-normalized coefficients and the local contrast
/// field they were normalized by.
fn mscn(img: &RgbImage) -> (Vec<f64>, Vec<f64>, usize, usize) {
    let (w, h) = (img.width(), img.height());
    let lum: Vec<f64> = luminance(img).data().iter().map(|&v| v as f64).collect();
    let kernel = gaussian_kernel(MSCN_WINDOW, MSCN_SIGMA);
    let mu = gaussian_same(&lum, w, h, &kernel);
    let sq: Vec<f64> = lum.iter().map(|&v| v * v).collect();
    let e2 = gaussian_same(&sq, w, h, &kernel);
    let mut coeffs = vec![0.0f64; w * h];
    let mut sigma = vec![0.0f64; w * h];
    for i in 0..w * h {
        let var = (e2[i] - mu[i] * mu[i]).max(0.0);
        let s = var.sqrt();
        sigma[i] = s;
        coeffs[i] = (lum[i] - mu[i]) / (s + 1.0);
    }
    (coeffs, sigma, w, h)
}

/// Asymmetric generalized Gaussian fit by moment matching:
/// `(alpha, eta, sigma_l^2, sigma_r^2)`.
fn aggd_fit(samples: &[f64]) -> [f64; 4] {
    let mut left_sq = 0.0f64;
    let mut left_n = 0usize;
    let mut right_sq = 0.0f64;
    let mut right_n = 0usize;
    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    for &x in samples {
        abs_sum += x.abs();
        sq_sum += x * x;
        if x < 0.0 {
            left_sq += x * x;
            left_n += 1;
        } else {
            right_sq += x * x;
            right_n += 1;
        }
    }
    let n = samples.len() as f64;
    let sigma_l = if left_n > 0 {
        (left_sq / left_n as f64).sqrt()
    } else {
        1e-8
    };
    let sigma_r = if right_n > 0 {
        (right_sq / right_n as f64).sqrt()
    } else {
        1e-8
    };
    let gamma_hat = sigma_l / sigma_r;
    let r_hat = if sq_sum > 0.0 {
        (abs_sum / n).powi(2) / (sq_sum / n)
    } else {
        0.5
    };
    let g2 = gamma_hat * gamma_hat;
    let r_big = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0) / (g2 + 1.0).powi(2);
    let alpha = solve_aggd_shape(r_big);
    let eta = (sigma_r - sigma_l) * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    [alpha, eta, sigma_l * sigma_l, sigma_r * sigma_r]
}

/// `rho(alpha) = gamma(2/a)^2 / (gamma(1/a) * gamma(3/a))` tabulated over
/// the usual search grid.
fn rho_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                let r = gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a));
                (a, r)
            })
            .collect()
    })
}

fn solve_aggd_shape(r_big: f64) -> f64 {
    let mut best = (f64::INFINITY, 1.0);
    for &(a, r) in rho_table() {
        let d = (r - r_big).abs();
        if d < best.0 {
            best = (d, a);
        }
    }
    best.1
}

/// The 20-element feature vector of one patch: AGGD fits of the MSCN field
/// and its horizontal, vertical, and two diagonal products.
fn patch_features(coeffs: &[f64], w: usize, x0: usize, y0: usize, patch: usize) -> Vec<f64> {
    let at = |x: usize, y: usize| coeffs[y * w + x];
    let mut base = Vec::with_capacity(patch * patch);
    let mut prod_h = Vec::new();
    let mut prod_v = Vec::new();
    let mut prod_d1 = Vec::new();
    let mut prod_d2 = Vec::new();
    for y in y0..y0 + patch {
        for x in x0..x0 + patch {
            let v = at(x, y);
            base.push(v);
            if x + 1 < x0 + patch {
                prod_h.push(v * at(x + 1, y));
            }
            if y + 1 < y0 + patch {
                prod_v.push(v * at(x, y + 1));
            }
            if x + 1 < x0 + patch && y + 1 < y0 + patch {
                prod_d1.push(v * at(x + 1, y + 1));
            }
            if x > x0 && y + 1 < y0 + patch {
                prod_d2.push(v * at(x - 1, y + 1));
            }
        }
    }
    let mut features = Vec::with_capacity(FEATURE_LEN);
    for sig in [&base, &prod_h, &prod_v, &prod_d1, &prod_d2] {
        features.extend_from_slice(&aggd_fit(sig));
    }
    features
}

/// Per-image patch features; `select_sharp` keeps only patches whose mean
/// local contrast reaches the sharpness quantile.
fn image_features(img: &RgbImage, patch: usize, select_sharp: bool) -> Result<Vec<Vec<f64>>> {
    let (coeffs, sigma, w, h) = mscn(img);
    let (px, py) = (w / patch, h / patch);
    if px * py == 0 {
        return Err(Error::Degenerate(format!(
            "image {w}x{h} holds no {patch}px patch"
        )));
    }
    let mut sharpness = Vec::with_capacity(px * py);
    for by in 0..py {
        for bx in 0..px {
            let mut acc = 0.0f64;
            for y in by * patch..(by + 1) * patch {
                for x in bx * patch..(bx + 1) * patch {
                    acc += sigma[y * w + x];
                }
            }
            sharpness.push(acc / (patch * patch) as f64);
        }
    }
    let threshold = if select_sharp {
        let mut sorted = sharpness.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[((sorted.len() - 1) as f64 * SHARPNESS_QUANTILE) as usize]
    } else {
        f64::NEG_INFINITY
    };
    let mut features = Vec::new();
    for by in 0..py {
        for bx in 0..px {
            if sharpness[by * px + bx] >= threshold {
                features.push(patch_features(&coeffs, w, bx * patch, by * patch, patch));
            }
        }
    }
    Ok(features)
}

fn fit_gaussian(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let p = features.len();
    let mut mean = vec![0.0f64; FEATURE_LEN];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= p as f64;
    }
    let mut cov = vec![0.0f64; FEATURE_LEN * FEATURE_LEN];
    if p > 1 {
        for f in features {
            for i in 0..FEATURE_LEN {
                let di = f[i] - mean[i];
                for j in 0..FEATURE_LEN {
                    cov[i * FEATURE_LEN + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for v in &mut cov {
            *v /= (p - 1) as f64;
        }
    }
    for i in 0..FEATURE_LEN {
        cov[i * FEATURE_LEN + i] += COV_EPSILON;
    }
    (mean, cov)
}

/// Fits the pristine model from a corpus of at least 20 natural images.
pub fn niqe_fit(corpus: &[RgbImage], patch: usize) -> Result<NiqeModel> {
    if corpus.len() < 20 {
        return Err(Error::Config(format!(
            "pristine corpus needs at least 20 images, got {}",
            corpus.len()
        )));
    }
    if patch < 8 {
        return Err(Error::Config("patch size must be at least 8".into()));
    }
    let mut features = Vec::new();
    for img in corpus {
        features.extend(image_features(img, patch, true)?);
    }
    if features.len() < 2 {
        return Err(Error::Degenerate("corpus yields fewer than 2 patches".into()));
    }
    let (mean, cov) = fit_gaussian(&features);
    Ok(NiqeModel {
        mean,
        cov,
        patch,
        source: format!("fitted from {} images", corpus.len()),
    })
}

/// Scores an image against a pristine model; lower is better.
pub fn niqe_score(img: &RgbImage, model: &NiqeModel) -> Result<f32> {
    let features = image_features(img, model.patch, false)?;
    if features.len() < 2 {
        return Err(Error::Degenerate(format!(
            "image yields {} patch(es); at least 2 required",
            features.len()
        )));
    }
    let (mean2, cov2) = fit_gaussian(&features);
    let diff = DVector::from_iterator(
        FEATURE_LEN,
        model.mean.iter().zip(&mean2).map(|(&a, &b)| a - b),
    );
    let avg_cov = DMatrix::from_row_iterator(
        FEATURE_LEN,
        FEATURE_LEN,
        model.cov.iter().zip(&cov2).map(|(&a, &b)| (a + b) / 2.0),
    );
    let solved = avg_cov
        .lu()
        .solve(&diff)
        .ok_or_else(|| Error::Degenerate("covariance is singular".into()))?;
    let inner = diff.dot(&solved).max(0.0);
    Ok(inner.sqrt() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_corpus(n: usize) -> Vec<RgbImage> {
        (0..n)
            .map(|_| RgbImage::splat(64, 64, [0.5, 0.5, 0.5]).unwrap())
            .collect()
    }

    #[test]
    fn identical_corpus_gives_regularization_floor_covariance() {
        let model = niqe_fit(&flat_corpus(20), 16).unwrap();
        for i in 0..FEATURE_LEN {
            for j in 0..FEATURE_LEN {
                let v = model.covariance()[i * FEATURE_LEN + j];
                if i == j {
                    assert!((v - COV_EPSILON).abs() < 1e-12, "diag {v}");
                } else {
                    assert!(v.abs() < 1e-30, "off-diagonal {v}");
                }
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        // corpus with some structure so the covariance is non-trivial
        let corpus: Vec<RgbImage> = (0..24)
            .map(|s| {
                let n = 64 * 64;
                let mut chans = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for y in 0..64 {
                    for x in 0..64 {
                        let v = 0.5
                            + 0.3 * ((x as f32 * 0.3 + s as f32).sin())
                            + 0.15 * ((y as f32 * 0.7).cos());
                        for ch in &mut chans {
                            ch[y * 64 + x] = v.clamp(0.0, 1.0);
                        }
                    }
                }
                RgbImage::new(64, 64, chans).unwrap()
            })
            .collect();
        let model = niqe_fit(&corpus, 16).unwrap();
        let m = DMatrix::from_row_slice(FEATURE_LEN, FEATURE_LEN, model.covariance());
        assert!((&m - m.transpose()).abs().max() < 1e-9);
        let eig = m.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-8), "eigenvalues {eig:?}");
    }

    #[test]
    fn refit_is_deterministic() {
        let corpus = flat_corpus(21);
        let a = niqe_fit(&corpus, 16).unwrap();
        let b = niqe_fit(&corpus, 16).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.covariance(), b.covariance());
    }

    #[test]
    fn small_corpus_rejected() {
        assert!(niqe_fit(&flat_corpus(19), 16).is_err());
    }

    #[test]
    fn scoring_is_deterministic() {
        let corpus: Vec<RgbImage> = (0..20)
            .map(|s| {
                RgbImage::splat(64, 64, [0.3 + 0.02 * s as f32, 0.5, 0.4]).unwrap()
            })
            .collect();
        let model = niqe_fit(&corpus, 16).unwrap();
        let img = RgbImage::splat(64, 64, [0.45, 0.5, 0.55]).unwrap();
        let a = niqe_score(&img, &model).unwrap();
        let b = niqe_score(&img, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_round_trip_through_container() {
        let corpus = flat_corpus(20);
        let model = niqe_fit(&corpus, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("niqe.llc");
        model.save(&path).unwrap();
        let back = NiqeModel::load(&path).unwrap();
        assert_eq!(back.patch(), 16);
        for (a, b) in model.mean().iter().zip(back.mean()) {
            assert!((*a as f32 - *b as f32).abs() < 1e-6);
        }
    }
}
