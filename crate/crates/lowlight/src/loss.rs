//! The four training loss terms and their weighted combination: mean-L1
//! reconstruction, feature-space (perceptual) distance under a frozen
//! extractor, anisotropic total variation, and the relativistic
//! adversarial pair.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvParams, Value};

/// Weighting coefficients of the combined generator loss.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Weight on the perceptual term.
    pub w_per: f32,
    /// Weight on the total-variation term.
    pub w_tv: f32,
    /// Weight on the adversarial term.
    pub w_adv: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_per: 1.0,
            w_tv: 0.1,
            w_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_per < 0.0 || self.w_tv < 0.0 || self.w_adv < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-step loss values; `total` is the weighted generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_rec: f32,
    pub l_per: f32,
    pub l_tv: f32,
    pub l_adv_g: f32,
    pub l_adv_d: f32,
    pub total: f32,
}

impl LossBreakdown {
    /// Recombines the parts into the weighted total (generator side).
    pub fn recombine(&self, w: &LossWeights) -> f32 {
        self.l_rec + w.w_per * self.l_per + w.w_tv * self.l_tv + w.w_adv * self.l_adv_g
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_rec", self.l_rec),
            ("l_per", self.l_per),
            ("l_tv", self.l_tv),
            ("l_adv_g", self.l_adv_g),
            ("l_adv_d", self.l_adv_d),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Frozen feature extractor for the perceptual loss: four seeded
/// convolutions with two interleaved poolings, never trained.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    convs: [ConvParams; 4],
    seed: u64,
}

pub const DEFAULT_FEATURE_SEED: u64 = 0x9e37_79b9;

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::seeded(DEFAULT_FEATURE_SEED)
    }
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let convs = [
            ConvParams::init(8, 3, 3, 1, 1, &mut rng),
            ConvParams::init(16, 8, 3, 1, 1, &mut rng),
            ConvParams::init(32, 16, 3, 1, 1, &mut rng),
            ConvParams::init(32, 32, 3, 1, 1, &mut rng),
        ];
        Self { convs, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Final-layer feature maps. Input spatial extents must be even at
    /// both pooling stages (divisible by 4).
    pub fn features(&self, x: &Value) -> Result<Value> {
        let g = x.graph();
        let lift = |p: &ConvParams| (g.constant(&p.kernel), g.constant(&p.bias));
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (k, b) = lift(conv);
            h = conv2d(&h, &k, &b, 1, 1)?.relu();
            if i < 2 {
                h = h.max_pool2()?;
            }
        }
        Ok(h)
    }
}

/// Mean absolute difference (content consistency).
pub fn loss_rec(y: &Value, y_pre: &Value) -> Result<Value> {
    Ok(y.sub(y_pre)?.abs().mean())
}

/// Mean squared difference between frozen feature maps.
pub fn loss_perceptual(y: &Value, y_pre: &Value, phi: &FeatureExtractor) -> Result<Value> {
    if y.shape() != y_pre.shape() {
        return Err(Error::ShapeMismatch(format!(
            "perceptual loss on {:?} vs {:?}",
            y.shape(),
            y_pre.shape()
        )));
    }
    let fy = phi.features(y)?;
    let fp = phi.features(y_pre)?;
    let d = fy.sub(&fp)?;
    Ok(d.mul(&d)?.mean())
}

/// Anisotropic total variation: mean absolute forward difference.
pub fn loss_tv(y: &Value) -> Result<Value> {
    y.tv_l1_mean()
}

/// Relativistic least-squares adversarial pair from two scalar scores.
///
/// Returns `(g_loss, d_loss)`. The generator loss treats the real score as
/// a constant (it is detached here); the discriminator loss keeps both
/// scores differentiable, so the caller must evaluate `d_fake` on a
/// detached fake image when stepping the discriminator.
pub fn loss_adversarial(d_fake: &Value, d_real: &Value) -> Result<(Value, Value)> {
    // generator side: wants d_fake - d_real driven to the stationary point
    let dr_const = d_real.detach();
    let u = d_fake.sub(&dr_const)?;
    let um1 = u.add_scalar(-1.0);
    let rev = dr_const.sub(d_fake)?;
    let g_loss = um1.mul(&um1)?.add(&rev.mul(&rev)?)?;

    // discriminator side: role-swapped difference
    let v = d_real.sub(d_fake)?;
    let vm1 = v.add_scalar(-1.0);
    let rev_d = d_fake.sub(d_real)?;
    let d_loss = vm1.mul(&vm1)?.add(&rev_d.mul(&rev_d)?)?;
    Ok((g_loss, d_loss))
}

/// Weighted sum of the generator-side parts.
pub fn total_loss(parts: &LossBreakdown, w: &LossWeights) -> f32 {
    parts.recombine(w)
}
