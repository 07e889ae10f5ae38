//! Stage-1 pre-enhancement: Retinex-motivated adaptive tone mapping.
//!
//! A low-light image is brightened by the per-pixel gain `L_g / L_w`, where
//! `L_w` is the luminance and `L_g` the global adaptation
//! `log(L_w / Lbar + 1) / log(L_wmax / Lbar + 1)` computed from the
//! log-average luminance `Lbar`. The gain is scalar per pixel, so channel
//! ratios (hue) are preserved wherever the output is not clamped.

use crate::error::Result;
use crate::img::{luminance, ImagePlane, RgbImage};

/// Tone-mapping constants.
#[derive(Debug, Clone, Copy)]
pub struct ToneMapConfig {
    /// Log guard inside the log-average; keeps `log` finite at black pixels.
    pub sigma: f32,
    /// Divisor guard for the `L_g / L_w` gain at black pixels.
    pub epsilon_div: f32,
}

impl Default for ToneMapConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            epsilon_div: 1e-6,
        }
    }
}

impl ToneMapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 || self.epsilon_div <= 0.0 {
            return Err(crate::error::Error::Config(
                "tone-map sigma and epsilon_div must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Log-average luminance: `exp(mean(log(sigma + L_w)))`.
pub fn log_average_luminance(lw: &ImagePlane, cfg: &ToneMapConfig) -> f32 {
    let mut acc = 0.0f64;
    for &v in lw.data() {
        acc += (cfg.sigma as f64 + v as f64).ln();
    }
    (acc / lw.data().len() as f64).exp() as f32
}

/// Global adaptation: `log(L_w / Lbar + 1) / log(L_wmax / Lbar + 1)`
/// per pixel.
pub fn global_adaptation(lw: &ImagePlane, lbar: f32, lwmax: f32) -> ImagePlane {
    let denom = (lwmax as f64 / lbar as f64 + 1.0).ln();
    let data: Vec<f32> = lw
        .data()
        .iter()
        .map(|&v| (((v as f64 / lbar as f64) + 1.0).ln() / denom) as f32)
        .collect();
    ImagePlane::new(lw.width(), lw.height(), data).expect("same dimensions as input")
}

/// Applies the adaptive tone-mapping gain `L_g / (L_w + eps)` to every
/// channel of `x`, clamping the result to `[0,1]`. An all-black image is
/// returned unchanged.
pub fn pre_enhance(x: &RgbImage, cfg: &ToneMapConfig) -> RgbImage {
    let lw = luminance(x);
    let lwmax = lw.max();
    if lwmax == 0.0 {
        // degenerate denominator: nothing to adapt
        return x.clone();
    }
    let lbar = log_average_luminance(&lw, cfg);
    let lg = global_adaptation(&lw, lbar, lwmax);
    let n = x.width() * x.height();
    let mut channels = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for i in 0..n {
        let gain = lg.data()[i] as f64 / (lw.data()[i] as f64 + cfg.epsilon_div as f64);
        for (c, out) in channels.iter_mut().enumerate() {
            let v = (x.channel(c)[i] as f64 * gain) as f32;
            out.push(v.clamp(0.0, 1.0));
        }
    }
    RgbImage::new(x.width(), x.height(), channels).expect("same dimensions as input")
}

/// Retinex decomposition `X = I ∘ R` with the illumination initialized to
/// the per-pixel channel maximum; `R = X / (I + eps)` clamped to `[0,1]`.
pub fn decompose_retinex(x: &RgbImage, cfg: &ToneMapConfig) -> (ImagePlane, RgbImage) {
    let n = x.width() * x.height();
    let mut illum = Vec::with_capacity(n);
    for i in 0..n {
        illum.push(
            x.channel(0)[i]
                .max(x.channel(1)[i])
                .max(x.channel(2)[i]),
        );
    }
    let mut channels = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for i in 0..n {
        let denom = illum[i] + cfg.epsilon_div;
        for (c, out) in channels.iter_mut().enumerate() {
            out.push((x.channel(c)[i] / denom).clamp(0.0, 1.0));
        }
    }
    let i_plane = ImagePlane::new(x.width(), x.height(), illum).expect("same dimensions");
    let r = RgbImage::new(x.width(), x.height(), channels).expect("same dimensions");
    (i_plane, r)
}
