//! Feature detection and matching between low-light and normal-light
//! images: Harris corners, binary patch descriptors, 2-nearest-neighbor
//! ratio matching, and RANSAC homography filtering. The reported match
//! rate is the number of final matches divided by the points detected in
//! the normal-light image.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::img::{luminance, RgbImage};

/// A detected corner with sub-pixel coordinates and detector response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub response: f32,
}

/// 256-bit binary descriptor compared by Hamming distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descriptor {
    bits: [u8; 32],
}

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[cfg(test)]
    pub(crate) fn from_bits(bits: [u8; 32]) -> Self {
        Self { bits }
    }
}

/// Keypoint counts and match statistics for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchReport {
    pub detected_low: usize,
    pub detected_normal: usize,
    pub matches: usize,
    pub match_rate: f64,
}

impl MatchReport {
    fn new(detected_low: usize, detected_normal: usize, matches: usize) -> Self {
        let match_rate = if detected_normal == 0 {
            0.0
        } else {
            matches as f64 / detected_normal as f64
        };
        Self {
            detected_low,
            detected_normal,
            matches,
            match_rate,
        }
    }
}

/// Detection and matching parameters.
#[derive(Debug, Clone, Copy)]
pub struct MatchParams {
    pub max_points: usize,
    pub ratio: f32,
    pub ransac_iters: usize,
    pub ransac_tol: f32,
    pub seed: u64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_points: 500,
            ratio: 0.3,
            ransac_iters: 500,
            ransac_tol: 2.0,
            seed: 0,
        }
    }
}

const NMS_RADIUS: usize = 4;
const HARRIS_K: f32 = 0.04;
const HARRIS_FLOOR: f32 = 1e-8;
/// Keypoints closer than this to a border carry no descriptor.
const BORDER: usize = 16;
const DESCRIPTOR_PATTERN_SEED: u64 = 0x5eed_b41f;

fn smooth(plane: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = kernel.len() / 2;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i - 1;
            }
            if i >= n {
                i = 2 * n - 1 - i;
            }
        }
        i as usize
    };
    let mut hbuf = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + reflect(x as isize + i as isize - r as isize, w)];
            }
            hbuf[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * hbuf[reflect(y as isize + i as isize - r as isize, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gaussian_kernel(len: usize, sigma: f32) -> Vec<f32> {
    let half = (len - 1) as f32 / 2.0;
    let mut k: Vec<f32> = (0..len)
        .map(|i| {
            let d = i as f32 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f32 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Harris corner detection on luminance: Sobel gradients, a Gaussian
/// structure tensor, response `det - k trace^2`, non-maximum suppression
/// of radius 4, then the strongest `max_points`. A constant image yields
/// an empty list.
pub fn detect(img: &RgbImage, max_points: usize) -> Result<Vec<Keypoint>> {
    let (w, h) = (img.width(), img.height());
    if w < 32 || h < 32 {
        return Err(Error::ShapeMismatch(format!(
            "detection needs at least 32x32, got {w}x{h}"
        )));
    }
    let lum = luminance(img);
    let l = lum.data();
    let mut ix = vec![0.0f32; w * h];
    let mut iy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            ix[i] = (l[i - w + 1] + 2.0 * l[i + 1] + l[i + w + 1])
                - (l[i - w - 1] + 2.0 * l[i - 1] + l[i + w - 1]);
            iy[i] = (l[i + w - 1] + 2.0 * l[i + w] + l[i + w + 1])
                - (l[i - w - 1] + 2.0 * l[i - w] + l[i - w + 1]);
        }
    }
    let xx: Vec<f32> = ix.iter().map(|&v| v * v).collect();
    let yy: Vec<f32> = iy.iter().map(|&v| v * v).collect();
    let xy: Vec<f32> = ix.iter().zip(&iy).map(|(&a, &b)| a * b).collect();
    let window = gaussian_kernel(5, 1.0);
    let sxx = smooth(&xx, w, h, &window);
    let syy = smooth(&yy, w, h, &window);
    let sxy = smooth(&xy, w, h, &window);
    let mut response = vec![0.0f32; w * h];
    for i in 0..w * h {
        let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
        let tr = sxx[i] + syy[i];
        response[i] = det - HARRIS_K * tr * tr;
    }

    // non-maximum suppression; earlier pixels win ties
    let mut kps = Vec::new();
    let r = NMS_RADIUS;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = response[y * w + x];
            if v <= HARRIS_FLOOR {
                continue;
            }
            let mut is_max = true;
            'window: for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    if (ny, nx) == (y, x) {
                        continue;
                    }
                    let nv = response[ny * w + nx];
                    if nv > v || (nv == v && (ny, nx) < (y, x)) {
                        is_max = false;
                        break 'window;
                    }
                }
            }
            if is_max {
                kps.push(Keypoint {
                    x: x as f32,
                    y: y as f32,
                    response: v,
                });
            }
        }
    }
    kps.sort_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap()
            .then_with(|| (a.y as u32, a.x as u32).cmp(&(b.y as u32, b.x as u32)))
    });
    kps.truncate(max_points);
    Ok(kps)
}

fn descriptor_pattern() -> &'static [(i32, i32, i32, i32)] {
    static PATTERN: std::sync::OnceLock<Vec<(i32, i32, i32, i32)>> = std::sync::OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(DESCRIPTOR_PATTERN_SEED);
        (0..256)
            .map(|_| {
                (
                    rng.random_range(-15..=15),
                    rng.random_range(-15..=15),
                    rng.random_range(-15..=15),
                    rng.random_range(-15..=15),
                )
            })
            .collect()
    })
}

/// Binary descriptors from 256 fixed seeded pixel-pair comparisons in a
/// smoothed 31x31 patch. Keypoints within 16 px of a border are dropped;
/// the returned keypoint list pairs up with the descriptors.
pub fn describe(img: &RgbImage, kps: &[Keypoint]) -> (Vec<Keypoint>, Vec<Descriptor>) {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(9, 2.0);
    let smoothed = smooth(luminance(img).data(), w, h, &kernel);
    let pattern = descriptor_pattern();
    let mut kept = Vec::new();
    let mut descriptors = Vec::new();
    for &kp in kps {
        let (cx, cy) = (kp.x as usize, kp.y as usize);
        if cx < BORDER || cy < BORDER || cx + BORDER >= w || cy + BORDER >= h {
            continue;
        }
        let mut bits = [0u8; 32];
        for (i, &(x1, y1, x2, y2)) in pattern.iter().enumerate() {
            let a = smoothed[(cy as i32 + y1) as usize * w + (cx as i32 + x1) as usize];
            let b = smoothed[(cy as i32 + y2) as usize * w + (cx as i32 + x2) as usize];
            if a < b {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        kept.push(kp);
        descriptors.push(Descriptor { bits });
    }
    (kept, descriptors)
}

/// 2-nearest-neighbor matching with a ratio test (strict inequality) and
/// mutual-best filtering. Returns `(index into d1, index into d2)` pairs.
pub fn match_descriptors(d1: &[Descriptor], d2: &[Descriptor], ratio: f32) -> Vec<(usize, usize)> {
    if d2.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, a) in d1.iter().enumerate() {
        let mut best = (u32::MAX, usize::MAX);
        let mut second = u32::MAX;
        for (j, b) in d2.iter().enumerate() {
            let d = a.hamming(b);
            if d < best.0 {
                second = best.0;
                best = (d, j);
            } else if d < second {
                second = d;
            }
        }
        if (best.0 as f32) < ratio * second as f32 {
            // mutual best: the chosen d2 entry must prefer this d1 entry
            let j = best.1;
            let mut reverse_best = (u32::MAX, usize::MAX);
            for (i2, a2) in d1.iter().enumerate() {
                let d = a2.hamming(&d2[j]);
                if d < reverse_best.0 {
                    reverse_best = (d, i2);
                }
            }
            if reverse_best.1 == i {
                out.push((i, j));
            }
        }
    }
    out
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    area.abs() < 1e-6
}

/// Direct linear transform homography from point correspondences, with
/// Hartley normalization. Returns a row-major 3x3 matrix.
fn fit_homography(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<[f64; 9]> {
    let normalize = |pts: &[(f64, f64)]| -> ((f64, f64), f64) {
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let mean_dist = pts
            .iter()
            .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        let scale = if mean_dist > 1e-12 {
            std::f64::consts::SQRT_2 / mean_dist
        } else {
            1.0
        };
        ((cx, cy), scale)
    };
    let ((cx1, cy1), s1) = normalize(src);
    let ((cx2, cy2), s2) = normalize(dst);
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (r, (p, q)) in src.iter().zip(dst).enumerate() {
        let (x, y) = ((p.0 - cx1) * s1, (p.1 - cy1) * s1);
        let (u, v) = ((q.0 - cx2) * s2, (q.1 - cy2) * s2);
        a.set_row(
            2 * r,
            &nalgebra::RowDVector::from_row_slice(&[
                -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u,
            ])
            .into(),
        );
        a.set_row(
            2 * r + 1,
            &nalgebra::RowDVector::from_row_slice(&[
                0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v,
            ])
            .into(),
        );
    }
    let ata = a.transpose() * &a;
    let eigen = SymmetricEigen::new(ata);
    let mut min_idx = 0;
    for i in 1..9 {
        if eigen.eigenvalues[i] < eigen.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let hn = eigen.eigenvectors.column(min_idx);
    // denormalize: H = T2^-1 * Hn * T1
    let t1 = DMatrix::from_row_slice(3, 3, &[s1, 0.0, -s1 * cx1, 0.0, s1, -s1 * cy1, 0.0, 0.0, 1.0]);
    let t2_inv = DMatrix::from_row_slice(
        3,
        3,
        &[1.0 / s2, 0.0, cx2, 0.0, 1.0 / s2, cy2, 0.0, 0.0, 1.0],
    );
    let hn_m = DMatrix::from_row_slice(3, 3, hn.as_slice());
    let h = t2_inv * hn_m * t1;
    if h[(2, 2)].abs() < 1e-12 {
        return None;
    }
    let scale = h[(2, 2)];
    let mut out = [0.0f64; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = h[(r, c)] / scale;
        }
    }
    Some(out)
}

fn project(h: &[f64; 9], p: (f64, f64)) -> Option<(f64, f64)> {
    let w = h[6] * p.0 + h[7] * p.1 + h[8];
    if w.abs() < 1e-12 {
        return None;
    }
    Some((
        (h[0] * p.0 + h[1] * p.1 + h[2]) / w,
        (h[3] * p.0 + h[4] * p.1 + h[5]) / w,
    ))
}

/// RANSAC homography filtering: hypotheses from random 4-match samples,
/// inliers by reprojection error, best consensus returned. Deterministic
/// under the seed; fewer than 4 matches pass through with a warning.
pub fn ransac_filter(
    matches: &[(usize, usize)],
    kps1: &[Keypoint],
    kps2: &[Keypoint],
    iters: usize,
    tol: f32,
    seed: u64,
) -> Vec<(usize, usize)> {
    if matches.len() < 4 {
        log::warn!(
            "ransac: only {} match(es), passing through unfiltered",
            matches.len()
        );
        return matches.to_vec();
    }
    let pts1: Vec<(f64, f64)> = matches
        .iter()
        .map(|&(i, _)| (kps1[i].x as f64, kps1[i].y as f64))
        .collect();
    let pts2: Vec<(f64, f64)> = matches
        .iter()
        .map(|&(_, j)| (kps2[j].x as f64, kps2[j].y as f64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol2 = (tol as f64) * (tol as f64);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut performed = 0usize;
    let mut attempts = 0usize;
    let max_attempts = iters.saturating_mul(10).max(iters);
    while performed < iters && attempts < max_attempts {
        attempts += 1;
        // sample 4 distinct match indices
        let mut sample = [0usize; 4];
        for k in 0..4 {
            loop {
                let cand = rng.random_range(0..matches.len());
                if !sample[..k].contains(&cand) {
                    sample[k] = cand;
                    break;
                }
            }
        }
        let s1: Vec<(f64, f64)> = sample.iter().map(|&i| pts1[i]).collect();
        let s2: Vec<(f64, f64)> = sample.iter().map(|&i| pts2[i]).collect();
        let degenerate = (0..4).any(|skip| {
            let tri: Vec<(f64, f64)> = (0..4).filter(|&i| i != skip).map(|i| s1[i]).collect();
            collinear(tri[0], tri[1], tri[2])
        }) || (0..4).any(|skip| {
            let tri: Vec<(f64, f64)> = (0..4).filter(|&i| i != skip).map(|i| s2[i]).collect();
            collinear(tri[0], tri[1], tri[2])
        });
        if degenerate {
            continue;
        }
        let Some(h) = fit_homography(&s1, &s2) else {
            continue;
        };
        // the minimal sample must reproject exactly; otherwise the fit is
        // numerically degenerate
        let sample_ok = sample.iter().all(|&i| {
            project(&h, pts1[i])
                .map(|(u, v)| (u - pts2[i].0).powi(2) + (v - pts2[i].1).powi(2) < 1e-6)
                .unwrap_or(false)
        });
        if !sample_ok {
            continue;
        }
        performed += 1;
        let inliers: Vec<usize> = (0..matches.len())
            .filter(|&i| {
                project(&h, pts1[i])
                    .map(|(u, v)| (u - pts2[i].0).powi(2) + (v - pts2[i].1).powi(2) < tol2)
                    .unwrap_or(false)
            })
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }
    best_inliers.iter().map(|&i| matches[i]).collect()
}

/// Optional image transform applied to the low-light side before matching.
pub type Enhancer<'a> = &'a dyn Fn(&RgbImage) -> Result<RgbImage>;

/// Runs the full protocol (detect, describe, ratio-match, RANSAC) between
/// a low-light image (optionally enhanced) and its normal-light
/// counterpart.
pub fn evaluate_pair(
    low: &RgbImage,
    normal: &RgbImage,
    enhancer: Option<Enhancer>,
    params: &MatchParams,
) -> Result<MatchReport> {
    let enhanced;
    let low_side = match enhancer {
        Some(f) => {
            enhanced = f(low)?;
            &enhanced
        }
        None => low,
    };
    let kp_low = detect(low_side, params.max_points)?;
    let kp_normal = detect(normal, params.max_points)?;
    let (kept_low, d_low) = describe(low_side, &kp_low);
    let (kept_normal, d_normal) = describe(normal, &kp_normal);
    let candidate = match_descriptors(&d_low, &d_normal, params.ratio);
    let surviving = ransac_filter(
        &candidate,
        &kept_low,
        &kept_normal,
        params.ransac_iters,
        params.ransac_tol,
        params.seed,
    );
    Ok(MatchReport::new(kp_low.len(), kp_normal.len(), surviving.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_scene() -> RgbImage {
        let n = 64 * 64;
        let mut chans = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for y in 20..44 {
            for x in 20..44 {
                for ch in &mut chans {
                    ch[y * 64 + x] = 1.0;
                }
            }
        }
        RgbImage::new(64, 64, chans).unwrap()
    }

    #[test]
    fn constant_image_detects_nothing() {
        let img = RgbImage::splat(64, 64, [0.5; 3]).unwrap();
        assert!(detect(&img, 100).unwrap().is_empty());
    }

    #[test]
    fn tiny_image_rejected() {
        let img = RgbImage::splat(16, 16, [0.5; 3]).unwrap();
        assert!(detect(&img, 100).is_err());
    }

    #[test]
    fn white_square_corners_detected() {
        let img = square_scene();
        let kps = detect(&img, 8).unwrap();
        assert!(kps.len() >= 4, "found {} keypoints", kps.len());
        // the four square corners, allowing a small localization slack
        for corner in [(20.0f32, 20.0f32), (43.0, 20.0), (20.0, 43.0), (43.0, 43.0)] {
            let hit = kps[..4.min(kps.len())]
                .iter()
                .chain(kps.iter())
                .any(|k| (k.x - corner.0).abs() <= 3.0 && (k.y - corner.1).abs() <= 3.0);
            assert!(hit, "no keypoint near corner {corner:?}: {kps:?}");
        }
    }

    #[test]
    fn detection_respects_max_points() {
        let img = square_scene();
        for cap in [1usize, 2, 3] {
            assert!(detect(&img, cap).unwrap().len() <= cap);
        }
    }

    #[test]
    fn descriptors_deterministic_and_border_dropped() {
        let img = square_scene();
        let kps = vec![
            Keypoint { x: 0.0, y: 0.0, response: 1.0 },
            Keypoint { x: 32.0, y: 32.0, response: 1.0 },
        ];
        let (kept1, d1) = describe(&img, &kps);
        let (kept2, d2) = describe(&img, &kps);
        assert_eq!(kept1.len(), 1); // the (0,0) keypoint is dropped
        assert_eq!(kept1[0].x, 32.0);
        assert_eq!(kept1, kept2);
        assert_eq!(d1, d2);
    }

    fn descriptor_with_distance(base: &Descriptor, dist: usize) -> Descriptor {
        let mut bits = base.bits;
        for i in 0..dist {
            bits[i / 8] ^= 1 << (i % 8);
        }
        Descriptor { bits }
    }

    #[test]
    fn ratio_test_planted_distances() {
        let base = Descriptor::from_bits([0u8; 32]);
        let d1 = vec![base];
        // nearest at distance 10, second at 40: 10 < 0.3*40 keeps it
        let d2 = vec![
            descriptor_with_distance(&base, 10),
            descriptor_with_distance(&base, 40),
        ];
        assert_eq!(match_descriptors(&d1, &d2, 0.3), vec![(0, 0)]);
        // nearest 10, second 30: 10 >= 0.3*30 rejects
        let d2 = vec![
            descriptor_with_distance(&base, 10),
            descriptor_with_distance(&base, 30),
        ];
        assert!(match_descriptors(&d1, &d2, 0.3).is_empty());
    }

    #[test]
    fn self_matching_and_tie_rejection() {
        let base = Descriptor::from_bits([0u8; 32]);
        // distinct descriptors, far apart: each matches its copy
        let set: Vec<Descriptor> = (0..4)
            .map(|i| descriptor_with_distance(&base, i * 80))
            .collect();
        let matches = match_descriptors(&set, &set, 0.3);
        assert_eq!(matches.len(), 4);
        for (i, j) in matches {
            assert_eq!(i, j);
        }
        // two identical entries tie: ratio test must reject
        let twin = vec![base, base];
        assert!(match_descriptors(&[base], &twin, 0.3).is_empty());
        // fewer than two candidates: empty result
        assert!(match_descriptors(&[base], &[base], 0.3).is_empty());
    }

    fn grid_keypoints(n: usize) -> Vec<Keypoint> {
        // irregular but deterministic non-collinear layout
        (0..n)
            .map(|i| Keypoint {
                x: 10.0 + (i % 5) as f32 * 17.0 + (i as f32 * 0.7).sin() * 3.0,
                y: 10.0 + (i / 5) as f32 * 13.0 + (i as f32 * 1.3).cos() * 3.0,
                response: 1.0,
            })
            .collect()
    }

    #[test]
    fn ransac_identity_consistent_matches_retained() {
        let kps = grid_keypoints(20);
        let matches: Vec<(usize, usize)> = (0..20).map(|i| (i, i)).collect();
        let out = ransac_filter(&matches, &kps, &kps, 500, 2.0, 7);
        assert_eq!(out, matches);
    }

    #[test]
    fn ransac_planted_outliers_removed() {
        let mut kps1 = grid_keypoints(20);
        let mut kps2 = grid_keypoints(20);
        // five outliers mapping far off the identity
        for k in 0..5 {
            kps1.push(Keypoint {
                x: 30.0 + k as f32 * 11.0,
                y: 90.0,
                response: 1.0,
            });
            kps2.push(Keypoint {
                x: 90.0 - k as f32 * 13.0,
                y: 20.0 + k as f32 * 17.0,
                response: 1.0,
            });
        }
        let matches: Vec<(usize, usize)> = (0..25).map(|i| (i, i)).collect();
        let out = ransac_filter(&matches, &kps1, &kps2, 500, 2.0, 42);
        assert_eq!(out.len(), 20, "kept {:?}", out);
        assert!(out.iter().all(|&(i, _)| i < 20));
    }

    #[test]
    fn ransac_passthrough_below_four_matches() {
        let kps = grid_keypoints(3);
        let matches = vec![(0, 0), (1, 1), (2, 2)];
        assert_eq!(ransac_filter(&matches, &kps, &kps, 100, 2.0, 1), matches);
    }

    #[test]
    fn ransac_deterministic_under_seed() {
        let kps = grid_keypoints(20);
        let matches: Vec<(usize, usize)> = (0..20).map(|i| (i, i)).collect();
        let a = ransac_filter(&matches, &kps, &kps, 200, 2.0, 5);
        let b = ransac_filter(&matches, &kps, &kps, 200, 2.0, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn self_pair_matches_near_perfectly() {
        let img = square_scene();
        let params = MatchParams::default();
        let report = evaluate_pair(&img, &img, None, &params).unwrap();
        assert!(report.detected_normal > 0);
        assert!(
            report.match_rate >= 0.9 && report.match_rate <= 1.0,
            "rate {}",
            report.match_rate
        );
        assert!(report.matches <= report.detected_low.min(report.detected_normal));
    }

    #[test]
    fn match_rate_arithmetic() {
        let r = MatchReport::new(120, 100, 32);
        assert!((r.match_rate - 0.32).abs() < 1e-12);
        let z = MatchReport::new(0, 0, 0);
        assert_eq!(z.match_rate, 0.0);
    }
}
