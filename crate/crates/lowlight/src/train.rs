//! Unpaired adversarial training: patch sampling, Adam updates, and the
//! alternating discriminator/generator loop.
//!
//! Every low-light patch is tone-mapped (stage 1) before it reaches the
//! generator; the discriminator compares refined fakes against patches
//! from the normal-light pool. One discriminator step is followed by one
//! generator step per batch. The trainer is single-threaded and
//! bit-deterministic under a fixed seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmt::sig6;
use crate::img::{batch_to_tensor, crop_patch, load_image, RgbImage};
use crate::loss::{
    loss_adversarial, loss_perceptual, loss_rec, loss_tv, FeatureExtractor, LossBreakdown,
    LossWeights,
};
use crate::net::{save_checkpoint, DiscriminatorModel, GeneratorModel, WidthScale};
use crate::tensor::{Graph, Tensor};
use crate::tonemap::{pre_enhance, ToneMapConfig};

/// Bias-corrected Adam with classic (L2-on-gradient) weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: usize,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f32, weight_decay: f32, param_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One Adam update across a parameter group. `params` and `grads` must
/// align with the sizes the state was built with.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&[f32]], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::Config(format!(
            "adam_step arity mismatch: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads[i];
        if grad.len() != param.numel() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} != parameter length {}",
                grad.len(),
                param.numel()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = param.data_mut();
        for j in 0..data.len() {
            let g = grad[j] + state.weight_decay * data[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Square patch size; must be divisible by 16.
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub width_scale: WidthScale,
    pub weights: LossWeights,
    pub lr: f32,
    pub weight_decay: f32,
    pub tonemap: ToneMapConfig,
    /// Checkpoint every N epochs; 0 checkpoints only at termination.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper_scale()
    }
}

impl TrainConfig {
    /// The published training schedule: 128x128 patches, batch 64,
    /// 1000 epochs, full-width model, Adam at 1e-4 with 1e-4 weight decay.
    pub fn paper_scale() -> Self {
        Self {
            patch_size: 128,
            batch_size: 64,
            epochs: 1000,
            seed: 0,
            width_scale: WidthScale::ONE,
            weights: LossWeights::default(),
            lr: 1e-4,
            weight_decay: 1e-4,
            tonemap: ToneMapConfig::default(),
            checkpoint_every: 50,
        }
    }

    /// A configuration small enough for CPU smoke runs: 32x32 patches,
    /// batch 4, eighth-width model, and a faster learning rate.
    pub fn desk_scale() -> Self {
        Self {
            patch_size: 32,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            width_scale: WidthScale { num: 1, den: 8 },
            weights: LossWeights::default(),
            lr: 1e-3,
            weight_decay: 1e-4,
            tonemap: ToneMapConfig::default(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 16 != 0 {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of 16",
                self.patch_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.weights.validate()?;
        self.tonemap.validate()?;
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Independent pools of low-light and normal-light images; no pairing is
/// assumed.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    low: Vec<RgbImage>,
    normal: Vec<RgbImage>,
}

impl UnpairedDataset {
    pub fn new(low: Vec<RgbImage>, normal: Vec<RgbImage>) -> Result<Self> {
        if low.is_empty() {
            return Err(Error::Config("low-light pool is empty".into()));
        }
        if normal.is_empty() {
            return Err(Error::Config("normal-light pool is empty".into()));
        }
        Ok(Self { low, normal })
    }

    /// Loads every PNG/PPM file from both directories, sorted by filename.
    pub fn from_dirs(low_dir: &Path, normal_dir: &Path) -> Result<Self> {
        Self::new(load_dir(low_dir)?, load_dir(normal_dir)?)
    }

    pub fn low(&self) -> &[RgbImage] {
        &self.low
    }

    pub fn normal(&self) -> &[RgbImage] {
        &self.normal
    }
}

fn load_dir(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "ppm" | "PNG" | "PPM")
            )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_image(p)).collect()
}

/// Indices of images large enough to supply a `patch` crop; warns once
/// about skipped images and errors when the pool exhausts.
fn eligible(pool: &[RgbImage], patch: usize, label: &str) -> Result<Vec<usize>> {
    let idx: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, img)| img.width() >= patch && img.height() >= patch)
        .map(|(i, _)| i)
        .collect();
    let skipped = pool.len() - idx.len();
    if skipped > 0 {
        log::warn!("{label}: skipped {skipped} image(s) smaller than the {patch}px patch size");
    }
    if idx.is_empty() {
        return Err(Error::Config(format!(
            "{label}: no image is at least {patch}x{patch}"
        )));
    }
    Ok(idx)
}

fn random_crop(img: &RgbImage, patch: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let x = rng.random_range(0..=img.width() - patch);
    let y = rng.random_range(0..=img.height() - patch);
    crop_patch(img, x, y, patch).expect("origin chosen in bounds")
}

/// Draws `batch_size` patches independently from each pool: uniform over
/// eligible images, then uniform over valid crop origins. Deterministic
/// under a fixed RNG state; the low batch is drawn first.
pub fn sample_batch(
    ds: &UnpairedDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RgbImage>, Vec<RgbImage>)> {
    let low_idx = eligible(&ds.low, cfg.patch_size, "low-light pool")?;
    let normal_idx = eligible(&ds.normal, cfg.patch_size, "normal-light pool")?;
    let draw = |idx: &[usize], pool: &[RgbImage], rng: &mut ChaCha8Rng| {
        (0..cfg.batch_size)
            .map(|_| {
                let img = &pool[idx[rng.random_range(0..idx.len())]];
                random_crop(img, cfg.patch_size, rng)
            })
            .collect::<Vec<_>>()
    };
    let low = draw(&low_idx, &ds.low, rng);
    let normal = draw(&normal_idx, &ds.normal, rng);
    Ok((low, normal))
}

/// Generator-side losses of one step.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLosses {
    pub l_rec: f32,
    pub l_per: f32,
    pub l_tv: f32,
    pub l_adv_g: f32,
    pub total: f32,
}

/// Owns both models and their optimizer states for one training run.
pub struct Trainer {
    pub gen: GeneratorModel,
    pub disc: DiscriminatorModel,
    gen_opt: AdamState,
    disc_opt: AdamState,
    phi: FeatureExtractor,
    cfg: TrainConfig,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = GeneratorModel::seeded(cfg.width_scale, cfg.seed.wrapping_add(1));
        let disc = DiscriminatorModel::seeded(cfg.width_scale, cfg.seed.wrapping_add(2));
        let gen_sizes: Vec<usize> = gen
            .layers()
            .iter()
            .flat_map(|(_, p)| [p.kernel.numel(), p.bias.numel()])
            .collect();
        let disc_sizes: Vec<usize> = disc
            .layers()
            .iter()
            .flat_map(|(_, p)| [p.kernel.numel(), p.bias.numel()])
            .collect();
        Ok(Self {
            gen_opt: AdamState::new(cfg.lr, cfg.weight_decay, &gen_sizes),
            disc_opt: AdamState::new(cfg.lr, cfg.weight_decay, &disc_sizes),
            gen,
            disc,
            phi: FeatureExtractor::default(),
            cfg,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Discriminator update on one batch; the fake image is produced by an
    /// untracked generator pass, so no gradient reaches the generator.
    /// Returns the discriminator loss.
    pub fn discriminator_step(&mut self, y_pre: &Tensor, normal: &Tensor) -> Result<f32> {
        let g = Graph::new();
        let fake = {
            let frozen_gen = self.gen.mount(&g, false);
            frozen_gen.forward(&g.constant(y_pre))?
        };
        let mounted = self.disc.mount(&g, true);
        let d_fake = mounted.score(&fake)?;
        let d_real = mounted.score(&g.constant(normal))?;
        let (_, d_loss) = loss_adversarial(&d_fake, &d_real)?;
        let value = d_loss.item();
        let grads = d_loss.backward()?;
        let grad_slices: Vec<&[f32]> = mounted
            .param_values()
            .iter()
            .map(|v| {
                grads
                    .get(v)
                    .ok_or_else(|| Error::Config("missing discriminator gradient".into()))
            })
            .collect::<Result<_>>()?;
        let mut layers = self.disc.layers_mut();
        let mut params: Vec<&mut Tensor> = layers
            .iter_mut()
            .flat_map(|(_, p)| [&mut p.kernel, &mut p.bias])
            .collect();
        adam_step(&mut params, &grad_slices, &mut self.disc_opt)?;
        Ok(value)
    }

    /// Generator update on one batch; the discriminator participates as a
    /// frozen scorer.
    pub fn generator_step(&mut self, y_pre: &Tensor, normal: &Tensor) -> Result<GeneratorLosses> {
        let g = Graph::new();
        let mounted = self.gen.mount(&g, true);
        let y_pre_v = g.constant(y_pre);
        let y = mounted.forward(&y_pre_v)?;
        let frozen_disc = self.disc.mount(&g, false);
        let d_fake = frozen_disc.score(&y)?;
        let d_real = frozen_disc.score(&g.constant(normal))?;
        let l_rec = loss_rec(&y, &y_pre_v)?;
        let l_per = loss_perceptual(&y, &y_pre_v, &self.phi)?;
        let l_tv = loss_tv(&y)?;
        let (l_adv_g, _) = loss_adversarial(&d_fake, &d_real)?;
        let w = &self.cfg.weights;
        let total = l_rec
            .add(&l_per.mul_scalar(w.w_per))?
            .add(&l_tv.mul_scalar(w.w_tv))?
            .add(&l_adv_g.mul_scalar(w.w_adv))?;
        let losses = GeneratorLosses {
            l_rec: l_rec.item(),
            l_per: l_per.item(),
            l_tv: l_tv.item(),
            l_adv_g: l_adv_g.item(),
            total: total.item(),
        };
        let grads = total.backward()?;
        let grad_slices: Vec<&[f32]> = mounted
            .param_values()
            .iter()
            .map(|v| {
                grads
                    .get(v)
                    .ok_or_else(|| Error::Config("missing generator gradient".into()))
            })
            .collect::<Result<_>>()?;
        let mut layers = self.gen.layers_mut();
        let mut params: Vec<&mut Tensor> = layers
            .iter_mut()
            .flat_map(|(_, p)| [&mut p.kernel, &mut p.bias])
            .collect();
        adam_step(&mut params, &grad_slices, &mut self.gen_opt)?;
        Ok(losses)
    }

    /// One full step: tone-map the low patches, update the discriminator,
    /// then the generator. Aborts on any non-finite loss term.
    pub fn train_step(
        &mut self,
        low_patches: &[RgbImage],
        normal_patches: &[RgbImage],
    ) -> Result<LossBreakdown> {
        let pre: Vec<RgbImage> = low_patches
            .iter()
            .map(|p| pre_enhance(p, &self.cfg.tonemap))
            .collect();
        let y_pre = batch_to_tensor(&pre)?;
        let normal = batch_to_tensor(normal_patches)?;
        let l_adv_d = self.discriminator_step(&y_pre, &normal)?;
        let gl = self.generator_step(&y_pre, &normal)?;
        self.step += 1;
        let breakdown = LossBreakdown {
            l_rec: gl.l_rec,
            l_per: gl.l_per,
            l_tv: gl.l_tv,
            l_adv_g: gl.l_adv_g,
            l_adv_d,
            total: gl.total,
        };
        if let Some(term) = breakdown.first_non_finite() {
            return Err(Error::NonFinite {
                term: term.to_string(),
                step: self.step,
            });
        }
        Ok(breakdown)
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub gen: GeneratorModel,
    pub disc: DiscriminatorModel,
    pub history: Vec<LossBreakdown>,
}

/// Runs the full schedule. An epoch is one pass over the eligible
/// low-light pool in random order; the normal-light batch is drawn
/// uniformly with replacement. When `out_dir` is given, a `loss.csv` log
/// and periodic plus final checkpoints are written there.
pub fn train(ds: &UnpairedDataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("loss.csv"))?;
            writeln!(f, "step,epoch,l_rec,l_per,l_tv,l_adv_g,l_adv_d,total")?;
            Some(f)
        }
        None => None,
    };
    let mut history = Vec::new();
    // checked up front so failures precede any step
    let low_idx = eligible(ds.low(), cfg.patch_size, "low-light pool")?;
    let normal_idx = eligible(ds.normal(), cfg.patch_size, "normal-light pool")?;

    for epoch in 0..cfg.epochs {
        let mut order = low_idx.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let low_patches: Vec<RgbImage> = chunk
                .iter()
                .map(|&i| random_crop(&ds.low()[i], cfg.patch_size, &mut rng))
                .collect();
            let normal_patches: Vec<RgbImage> = (0..chunk.len())
                .map(|_| {
                    let img = &ds.normal()[normal_idx[rng.random_range(0..normal_idx.len())]];
                    random_crop(img, cfg.patch_size, &mut rng)
                })
                .collect();
            let breakdown = trainer.train_step(&low_patches, &normal_patches)?;
            if let Some(f) = log_file.as_mut() {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    trainer.step_count(),
                    epoch,
                    sig6(breakdown.l_rec as f64),
                    sig6(breakdown.l_per as f64),
                    sig6(breakdown.l_tv as f64),
                    sig6(breakdown.l_adv_g as f64),
                    sig6(breakdown.l_adv_d as f64),
                    sig6(breakdown.total as f64),
                )?;
            }
            history.push(breakdown);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_epoch{:04}.llc", epoch + 1));
                save_checkpoint(&trainer.gen, &trainer.disc, &path)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&trainer.gen, &trainer.disc, &dir.join("checkpoint_final.llc"))?;
    }
    Ok(TrainOutcome {
        gen: trainer.gen,
        disc: trainer.disc,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_signed_lr() {
        // at step 1 bias correction makes m_hat = g and v_hat = g^2, so the
        // update is lr * g / (|g| + eps)
        let mut p = Tensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap();
        let g = vec![0.5f32, -3.0];
        let mut state = AdamState::new(0.1, 0.0, &[2]);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert!((p.data()[0] - (1.0 - 0.1)).abs() < 1e-5);
        assert!((p.data()[1] - (-2.0 + 0.1)).abs() < 1e-5);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let g = vec![0.0f32; 3];
        let mut state = AdamState::new(0.1, 0.0, &[3]);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn adam_quadratic_descent_matches_scalar_oracle() {
        // 10 steps on f(w) = w^2 from w = 1 with lr 0.1. The frozen value
        // comes from an independent high-precision scalar recurrence; |w|
        // must also decrease monotonically.
        let mut w = Tensor::scalar(1.0);
        let mut state = AdamState::new(0.1, 0.0, &[1]);
        let mut prev = 1.0f32;
        for _ in 0..10 {
            let g = vec![2.0 * w.data()[0]];
            adam_step(&mut [&mut w], &[&g], &mut state).unwrap();
            assert!(w.data()[0].abs() < prev.abs());
            prev = w.data()[0];
        }
        assert!((w.data()[0] - 0.07624916).abs() < 1e-5);
    }

    #[test]
    fn adam_arity_mismatch_rejected() {
        let mut p = Tensor::scalar(1.0);
        let mut state = AdamState::new(0.1, 0.0, &[1, 1]);
        let g = vec![1.0f32];
        assert!(adam_step(&mut [&mut p], &[&g], &mut state).is_err());
    }

    fn uniform_pool(n: usize, size: usize, v: f32) -> Vec<RgbImage> {
        (0..n)
            .map(|i| RgbImage::splat(size, size, [v + i as f32 * 0.01; 3]).unwrap())
            .collect()
    }

    #[test]
    fn sample_batch_whole_image_when_exactly_patch_sized() {
        let ds = UnpairedDataset::new(uniform_pool(1, 32, 0.1), uniform_pool(1, 32, 0.8)).unwrap();
        let mut cfg = TrainConfig::desk_scale();
        cfg.patch_size = 32;
        cfg.batch_size = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (low, _) = sample_batch(&ds, &cfg, &mut rng).unwrap();
        for p in low {
            assert_eq!(p, ds.low()[0]);
        }
    }

    #[test]
    fn sample_batch_deterministic_under_seed() {
        let ds = UnpairedDataset::new(uniform_pool(4, 48, 0.1), uniform_pool(4, 48, 0.7)).unwrap();
        let cfg = TrainConfig::desk_scale();
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let b1 = sample_batch(&ds, &cfg, &mut r1).unwrap();
        let b2 = sample_batch(&ds, &cfg, &mut r2).unwrap();
        assert_eq!(b1.0, b2.0);
        assert_eq!(b1.1, b2.1);
    }

    #[test]
    fn sample_batch_uniform_over_two_image_pool() {
        // distinguish images by constant value; 1000 draws should split
        // within [0.4, 0.6] per image (a many-sigma binomial bound)
        let mut pool = uniform_pool(1, 32, 0.2);
        pool.push(RgbImage::splat(32, 32, [0.9; 3]).unwrap());
        let ds = UnpairedDataset::new(pool, uniform_pool(1, 32, 0.5)).unwrap();
        let mut cfg = TrainConfig::desk_scale();
        cfg.batch_size = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut first = 0usize;
        for _ in 0..1000 {
            let (low, _) = sample_batch(&ds, &cfg, &mut rng).unwrap();
            if (low[0].channel(0)[0] - 0.2).abs() < 0.05 {
                first += 1;
            }
        }
        let freq = first as f64 / 1000.0;
        assert!((0.4..=0.6).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn sample_batch_skips_small_and_errors_on_exhausted_pool() {
        let mut pool = uniform_pool(1, 16, 0.3); // too small for 32px patches
        let cfg = TrainConfig::desk_scale();
        let ds = UnpairedDataset::new(pool.clone(), uniform_pool(1, 32, 0.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch(&ds, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
        // one eligible image alongside the small one works
        pool.push(RgbImage::splat(32, 32, [0.4; 3]).unwrap());
        let ds = UnpairedDataset::new(pool, uniform_pool(1, 32, 0.5)).unwrap();
        assert!(sample_batch(&ds, &cfg, &mut rng).is_ok());
    }

    #[test]
    fn empty_pool_rejected_before_any_step() {
        assert!(UnpairedDataset::new(uniform_pool(1, 32, 0.1), Vec::new()).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialized_model_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let ds = UnpairedDataset::new(uniform_pool(2, 32, 0.1), uniform_pool(2, 32, 0.8)).unwrap();
        let mut cfg = TrainConfig::desk_scale();
        cfg.epochs = 0;
        let outcome = train(&ds, &cfg, Some(dir.path())).unwrap();
        assert!(outcome.history.is_empty());
        let reference = GeneratorModel::seeded(cfg.width_scale, cfg.seed.wrapping_add(1));
        for ((_, a), (_, b)) in outcome.gen.layers().iter().zip(reference.layers().iter()) {
            assert_eq!(a.kernel.data(), b.kernel.data());
        }
        assert!(dir.path().join("checkpoint_final.llc").exists());
        assert!(dir.path().join("loss.csv").exists());
    }

    #[test]
    fn non_finite_parameter_aborts_within_one_step() {
        let ds = UnpairedDataset::new(uniform_pool(2, 32, 0.1), uniform_pool(2, 32, 0.8)).unwrap();
        let cfg = TrainConfig::desk_scale();
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        // poison one generator weight
        {
            let mut layers = trainer.gen.layers_mut();
            let (_, p) = &mut layers[0];
            p.kernel.data_mut()[0] = f32::INFINITY;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (low, normal) = sample_batch(&ds, &cfg, &mut rng).unwrap();
        let err = trainer.train_step(&low, &normal).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn parameter_isolation_between_steps() {
        let ds = UnpairedDataset::new(uniform_pool(2, 32, 0.15), uniform_pool(2, 32, 0.7)).unwrap();
        let cfg = TrainConfig::desk_scale();
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (low, normal) = sample_batch(&ds, &cfg, &mut rng).unwrap();
        let pre: Vec<RgbImage> = low.iter().map(|p| pre_enhance(p, &cfg.tonemap)).collect();
        let y_pre = batch_to_tensor(&pre).unwrap();
        let normal_t = batch_to_tensor(&normal).unwrap();

        let checksum = |layers: Vec<(String, &crate::tensor::ConvParams)>| -> f64 {
            layers
                .iter()
                .flat_map(|(_, p)| p.kernel.data().iter().chain(p.bias.data()))
                .map(|&v| v as f64)
                .sum()
        };
        let gen_before = checksum(trainer.gen.layers());
        let disc_before = checksum(trainer.disc.layers());
        trainer.discriminator_step(&y_pre, &normal_t).unwrap();
        assert_eq!(checksum(trainer.gen.layers()), gen_before);
        assert_ne!(checksum(trainer.disc.layers()), disc_before);

        let disc_after_d = checksum(trainer.disc.layers());
        trainer.generator_step(&y_pre, &normal_t).unwrap();
        assert_eq!(checksum(trainer.disc.layers()), disc_after_d);
        assert_ne!(checksum(trainer.gen.layers()), gen_before);
    }
}
