//! The stage-2 refinement generator (a U-net encoder-decoder) and the
//! fully convolutional discriminator used for adversarial training.
//!
//! At `width_scale` 1 the generator's layer shapes are, for a 128x128
//! input: 3 -> 32 -> 32, four downsampling blocks to 256 channels at 8x8,
//! two 512-channel convolutions, then four upsample+fusion stages back to
//! 32 channels and a final 3-channel sigmoid output. Every convolution is
//! 3x3; downsampling blocks are two convolutions plus 2x2 max pooling,
//! upsampling is nearest-neighbor 2x followed by a convolution, and fusion
//! blocks concatenate the matching encoder feature before two convolutions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ckpt::NamedTensors;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvParams, Graph, Tensor, Value};

/// Negative slope for the leaky ReLU activations.
const LEAKY_SLOPE: f32 = 0.2;

/// Rational channel-width multiplier applied to every layer width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthScale {
    pub num: u32,
    pub den: u32,
}

impl WidthScale {
    pub const ONE: WidthScale = WidthScale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config("width scale must be positive".into()));
        }
        Ok(Self { num, den })
    }

    /// Scales a base channel count, never below 1.
    pub fn apply(&self, channels: usize) -> usize {
        (channels * self.num as usize / self.den as usize).max(1)
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for WidthScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("invalid width scale `{s}`")))
        };
        match s.split_once('/') {
            Some((n, d)) => WidthScale::new(parse(n)?, parse(d)?),
            None => WidthScale::new(parse(s)?, 1),
        }
    }
}

/// Base (unscaled) channel widths of the generator, following the
/// encoder-decoder layout described in the module docs.
const GEN_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];

#[derive(Debug, Clone)]
struct DownBlock {
    conv_a: ConvParams,
    conv_b: ConvParams,
}

#[derive(Debug, Clone)]
struct FusionBlock {
    conv_a: ConvParams,
    conv_b: ConvParams,
}

/// The refinement U-net.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    width_scale: WidthScale,
    conv1: ConvParams,
    conv2: ConvParams,
    down: [DownBlock; 4],
    conv3: ConvParams,
    conv4: ConvParams,
    up: [ConvParams; 4],
    fusion: [FusionBlock; 4],
    conv5: ConvParams,
}

fn conv3x3(out_c: usize, in_c: usize, rng: &mut impl Rng) -> ConvParams {
    ConvParams::init(out_c, in_c, 3, 1, 1, rng)
}

impl GeneratorModel {
    pub fn new(width_scale: WidthScale, rng: &mut impl Rng) -> Self {
        let w = |c: usize| width_scale.apply(c);
        let [w32, w64, w128, w256, w512] = GEN_WIDTHS.map(w);
        let down_io = [(w32, w32), (w32, w64), (w64, w128), (w128, w256)];
        GeneratorModel {
            width_scale,
            conv1: conv3x3(w32, 3, rng),
            conv2: conv3x3(w32, w32, rng),
            down: down_io.map(|(i, o)| DownBlock {
                conv_a: conv3x3(o, i, rng),
                conv_b: conv3x3(o, o, rng),
            }),
            conv3: conv3x3(w512, w256, rng),
            conv4: conv3x3(w512, w512, rng),
            up: [
                conv3x3(w256, w512, rng),
                conv3x3(w128, w256, rng),
                conv3x3(w64, w128, rng),
                conv3x3(w32, w64, rng),
            ],
            fusion: [
                FusionBlock {
                    conv_a: conv3x3(w256, w256 + w128, rng),
                    conv_b: conv3x3(w256, w256, rng),
                },
                FusionBlock {
                    conv_a: conv3x3(w128, w128 + w64, rng),
                    conv_b: conv3x3(w128, w128, rng),
                },
                FusionBlock {
                    conv_a: conv3x3(w64, w64 + w32, rng),
                    conv_b: conv3x3(w64, w64, rng),
                },
                FusionBlock {
                    conv_a: conv3x3(w32, w32 + w32, rng),
                    conv_b: conv3x3(w32, w32, rng),
                },
            ],
            conv5: conv3x3(3, w32, rng),
        }
    }

    pub fn seeded(width_scale: WidthScale, seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        Self::new(width_scale, &mut rng)
    }

    pub fn width_scale(&self) -> WidthScale {
        self.width_scale
    }

    /// Named convolution layers in forward order.
    pub fn layers(&self) -> Vec<(String, &ConvParams)> {
        let mut out: Vec<(String, &ConvParams)> = Vec::with_capacity(25);
        out.push(("conv1".into(), &self.conv1));
        out.push(("conv2".into(), &self.conv2));
        for (i, d) in self.down.iter().enumerate() {
            out.push((format!("down{}.a", i + 1), &d.conv_a));
            out.push((format!("down{}.b", i + 1), &d.conv_b));
        }
        out.push(("conv3".into(), &self.conv3));
        out.push(("conv4".into(), &self.conv4));
        for i in 0..4 {
            out.push((format!("up{}", i + 1), &self.up[i]));
            out.push((format!("fusion{}.a", i + 1), &self.fusion[i].conv_a));
            out.push((format!("fusion{}.b", i + 1), &self.fusion[i].conv_b));
        }
        out.push(("conv5".into(), &self.conv5));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut ConvParams)> {
        let mut out: Vec<(String, &mut ConvParams)> = Vec::with_capacity(25);
        out.push(("conv1".into(), &mut self.conv1));
        out.push(("conv2".into(), &mut self.conv2));
        for (i, d) in self.down.iter_mut().enumerate() {
            out.push((format!("down{}.a", i + 1), &mut d.conv_a));
            out.push((format!("down{}.b", i + 1), &mut d.conv_b));
        }
        out.push(("conv3".into(), &mut self.conv3));
        out.push(("conv4".into(), &mut self.conv4));
        for (i, (u, f)) in self.up.iter_mut().zip(self.fusion.iter_mut()).enumerate() {
            out.push((format!("up{}", i + 1), u));
            out.push((format!("fusion{}.a", i + 1), &mut f.conv_a));
            out.push((format!("fusion{}.b", i + 1), &mut f.conv_b));
        }
        out.push(("conv5".into(), &mut self.conv5));
        out
    }

    /// Mounts the parameters onto a graph; `trainable` decides whether
    /// gradients are retained for them.
    pub fn mount(&self, g: &Graph, trainable: bool) -> MountedGenerator {
        let lift = |p: &ConvParams| MountedConv::lift(g, p, trainable);
        MountedGenerator {
            conv1: lift(&self.conv1),
            conv2: lift(&self.conv2),
            down: [
                (lift(&self.down[0].conv_a), lift(&self.down[0].conv_b)),
                (lift(&self.down[1].conv_a), lift(&self.down[1].conv_b)),
                (lift(&self.down[2].conv_a), lift(&self.down[2].conv_b)),
                (lift(&self.down[3].conv_a), lift(&self.down[3].conv_b)),
            ],
            conv3: lift(&self.conv3),
            conv4: lift(&self.conv4),
            up: [
                lift(&self.up[0]),
                lift(&self.up[1]),
                lift(&self.up[2]),
                lift(&self.up[3]),
            ],
            fusion: [
                (lift(&self.fusion[0].conv_a), lift(&self.fusion[0].conv_b)),
                (lift(&self.fusion[1].conv_a), lift(&self.fusion[1].conv_b)),
                (lift(&self.fusion[2].conv_a), lift(&self.fusion[2].conv_b)),
                (lift(&self.fusion[3].conv_a), lift(&self.fusion[3].conv_b)),
            ],
            conv5: lift(&self.conv5),
        }
    }

    /// Programmatic architecture walk: one row per layer with the output
    /// size the layer produces for the given input extents and its
    /// input/output channel counts.
    pub fn layer_table(&self, input_h: usize, input_w: usize) -> Vec<LayerRow> {
        let mut rows = Vec::with_capacity(17);
        let (mut h, mut w) = (input_h, input_w);
        let row = |name: &str, h: usize, w: usize, p: &ConvParams| LayerRow {
            name: name.to_string(),
            out_h: h,
            out_w: w,
            in_channels: p.in_channels(),
            out_channels: p.out_channels(),
        };
        rows.push(row("conv1", h, w, &self.conv1));
        rows.push(row("conv2", h, w, &self.conv2));
        for (i, d) in self.down.iter().enumerate() {
            h /= 2;
            w /= 2;
            rows.push(LayerRow {
                name: format!("down{}", i + 1),
                out_h: h,
                out_w: w,
                in_channels: d.conv_a.in_channels(),
                out_channels: d.conv_b.out_channels(),
            });
        }
        rows.push(row("conv3", h, w, &self.conv3));
        rows.push(row("conv4", h, w, &self.conv4));
        for i in 0..4 {
            h *= 2;
            w *= 2;
            rows.push(row(&format!("up{}", i + 1), h, w, &self.up[i]));
            rows.push(LayerRow {
                name: format!("fusion{}", i + 1),
                out_h: h,
                out_w: w,
                in_channels: self.fusion[i].conv_a.in_channels(),
                out_channels: self.fusion[i].conv_b.out_channels(),
            });
        }
        rows.push(row("conv5", h, w, &self.conv5));
        rows
    }

    /// Rebuilds a model from checkpoint tensors, validating every shape
    /// against the expected `width_scale` architecture.
    pub fn from_named(named: &NamedTensors, width_scale: WidthScale) -> Result<Self> {
        let mut model = GeneratorModel::seeded(width_scale, 0);
        for (name, params) in model.layers_mut() {
            params.kernel =
                named.take_checked(&format!("gen.{name}.weight"), params.kernel.shape())?;
            params.bias = named.take_checked(&format!("gen.{name}.bias"), params.bias.shape())?;
        }
        Ok(model)
    }
}

/// One row of the architecture walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub out_h: usize,
    pub out_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// A convolution layer mounted on a differentiation graph.
pub struct MountedConv {
    pub kernel: Value,
    pub bias: Value,
    stride: usize,
    padding: usize,
}

impl MountedConv {
    fn lift(g: &Graph, p: &ConvParams, trainable: bool) -> Self {
        let (kernel, bias) = if trainable {
            (g.var(&p.kernel), g.var(&p.bias))
        } else {
            (g.constant(&p.kernel), g.constant(&p.bias))
        };
        Self {
            kernel,
            bias,
            stride: p.stride,
            padding: p.padding,
        }
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        conv2d(x, &self.kernel, &self.bias, self.stride, self.padding)
    }
}

/// Generator parameters mounted on a graph for one forward/backward pass.
pub struct MountedGenerator {
    conv1: MountedConv,
    conv2: MountedConv,
    down: [(MountedConv, MountedConv); 4],
    conv3: MountedConv,
    conv4: MountedConv,
    up: [MountedConv; 4],
    fusion: [(MountedConv, MountedConv); 4],
    conv5: MountedConv,
}

impl MountedGenerator {
    /// Parameter values in the same order as [`GeneratorModel::layers`],
    /// kernel then bias per layer.
    pub fn param_values(&self) -> Vec<&Value> {
        let mut all: Vec<&MountedConv> = vec![&self.conv1, &self.conv2];
        for (a, b) in &self.down {
            all.push(a);
            all.push(b);
        }
        all.push(&self.conv3);
        all.push(&self.conv4);
        for i in 0..4 {
            all.push(&self.up[i]);
            all.push(&self.fusion[i].0);
            all.push(&self.fusion[i].1);
        }
        all.push(&self.conv5);
        all.into_iter().flat_map(|c| [&c.kernel, &c.bias]).collect()
    }

    /// U-net forward pass; input spatial extents must be divisible by 16.
    pub fn forward(&self, y_pre: &Value) -> Result<Value> {
        let (_, c, h, w) = y_pre.tensor().nchw()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "generator expects 3 input channels, got {c}"
            )));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "generator input extents must be divisible by 16, got {h}x{w}"
            )));
        }
        let act = |v: Value| v.leaky_relu(LEAKY_SLOPE);
        let x1 = act(self.conv1.forward(y_pre)?);
        let x2 = act(self.conv2.forward(&x1)?);
        let down_block = |blk: &(MountedConv, MountedConv), x: &Value| -> Result<Value> {
            let a = act(blk.0.forward(x)?);
            let b = act(blk.1.forward(&a)?);
            b.max_pool2()
        };
        let x3 = down_block(&self.down[0], &x2)?;
        let x4 = down_block(&self.down[1], &x3)?;
        let x5 = down_block(&self.down[2], &x4)?;
        let x6 = down_block(&self.down[3], &x5)?;
        let x7 = act(self.conv3.forward(&x6)?);
        let x8 = act(self.conv4.forward(&x7)?);
        let up_block = |conv: &MountedConv, x: &Value| -> Result<Value> {
            Ok(act(conv.forward(&x.upsample2()?)?))
        };
        let fusion_block = |blk: &(MountedConv, MountedConv),
                            dec: &Value,
                            skip: &Value|
         -> Result<Value> {
            let cat = dec.concat_channels(skip)?;
            let a = act(blk.0.forward(&cat)?);
            Ok(act(blk.1.forward(&a)?))
        };
        let x9 = up_block(&self.up[0], &x8)?;
        let x10 = fusion_block(&self.fusion[0], &x9, &x5)?;
        let x11 = up_block(&self.up[1], &x10)?;
        let x12 = fusion_block(&self.fusion[1], &x11, &x4)?;
        let x13 = up_block(&self.up[2], &x12)?;
        let x14 = fusion_block(&self.fusion[2], &x13, &x3)?;
        let x15 = up_block(&self.up[3], &x14)?;
        let x16 = fusion_block(&self.fusion[3], &x15, &x2)?;
        Ok(self.conv5.forward(&x16)?.sigmoid())
    }
}

/// The fully convolutional discriminator: stride-2 convolutions ending in
/// a single-channel score map.
#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    layers: Vec<ConvParams>,
}

/// Base widths of the discriminator stack; the final layer always has one
/// output channel.
const DISC_WIDTHS: [usize; 4] = [32, 64, 128, 256];

impl DiscriminatorModel {
    pub fn new(width_scale: WidthScale, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(DISC_WIDTHS.len() + 1);
        let mut in_c = 3;
        for base in DISC_WIDTHS {
            let out_c = width_scale.apply(base);
            layers.push(ConvParams::init(out_c, in_c, 3, 2, 1, rng));
            in_c = out_c;
        }
        layers.push(ConvParams::init(1, in_c, 3, 2, 1, rng));
        Self { layers }
    }

    pub fn seeded(width_scale: WidthScale, seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        Self::new(width_scale, &mut rng)
    }

    /// Smallest accepted input extent (the stack's receptive stride).
    pub fn min_input(&self) -> usize {
        1 << self.layers.len()
    }

    pub fn layers(&self) -> Vec<(String, &ConvParams)> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("layer{i}"), p))
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut ConvParams)> {
        self.layers
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("layer{i}"), p))
            .collect()
    }

    pub fn mount(&self, g: &Graph, trainable: bool) -> MountedDiscriminator {
        MountedDiscriminator {
            layers: self
                .layers
                .iter()
                .map(|p| MountedConv::lift(g, p, trainable))
                .collect(),
            min_input: self.min_input(),
        }
    }

    pub fn from_named(named: &NamedTensors, width_scale: WidthScale) -> Result<Self> {
        let mut model = DiscriminatorModel::seeded(width_scale, 0);
        for (name, params) in model.layers_mut() {
            params.kernel =
                named.take_checked(&format!("disc.{name}.weight"), params.kernel.shape())?;
            params.bias = named.take_checked(&format!("disc.{name}.bias"), params.bias.shape())?;
        }
        Ok(model)
    }
}

/// Discriminator parameters mounted on a graph.
pub struct MountedDiscriminator {
    layers: Vec<MountedConv>,
    min_input: usize,
}

impl MountedDiscriminator {
    pub fn param_values(&self) -> Vec<&Value> {
        self.layers
            .iter()
            .flat_map(|c| [&c.kernel, &c.bias])
            .collect()
    }

    /// Produces the single-channel score map.
    pub fn forward(&self, img: &Value) -> Result<Value> {
        let (_, _, h, w) = img.tensor().nchw()?;
        if h < self.min_input || w < self.min_input {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} smaller than the discriminator receptive field {0}x{0}",
                self.min_input
            )));
        }
        let mut x = img.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i != last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(x)
    }

    /// Scalar score: the mean of the score map.
    pub fn score(&self, img: &Value) -> Result<Value> {
        Ok(self.forward(img)?.mean())
    }
}

/// One-shot generator evaluation without gradient tracking.
pub fn generator_forward(model: &GeneratorModel, y_pre: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let x = g.constant(y_pre);
    let out = model.mount(&g, false).forward(&x)?;
    Ok(out.tensor().clone())
}

/// One-shot discriminator evaluation without gradient tracking.
pub fn discriminator_forward(model: &DiscriminatorModel, img: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let x = g.constant(img);
    let out = model.mount(&g, false).forward(&x)?;
    Ok(out.tensor().clone())
}

/// Writes generator and discriminator parameters (plus the width scale)
/// into one checkpoint file.
pub fn save_checkpoint(
    gen: &GeneratorModel,
    disc: &DiscriminatorModel,
    path: &Path,
) -> Result<()> {
    let mut named = NamedTensors::new();
    let scale = gen.width_scale;
    named.push(
        "meta.width_scale",
        Tensor::from_vec(vec![2], vec![scale.num as f32, scale.den as f32])?,
    );
    for (name, p) in gen.layers() {
        named.push(format!("gen.{name}.weight"), p.kernel.clone());
        named.push(format!("gen.{name}.bias"), p.bias.clone());
    }
    for (name, p) in disc.layers() {
        named.push(format!("disc.{name}.weight"), p.kernel.clone());
        named.push(format!("disc.{name}.bias"), p.bias.clone());
    }
    named.save(path)
}

/// Loads both models from a checkpoint, reconstructing the width scale
/// from its metadata.
pub fn load_checkpoint(path: &Path) -> Result<(GeneratorModel, DiscriminatorModel)> {
    let named = NamedTensors::load(path)?;
    let meta = named.take_checked("meta.width_scale", &[2])?;
    let scale = WidthScale::new(meta.data()[0] as u32, meta.data()[1] as u32)?;
    let gen = GeneratorModel::from_named(&named, scale)?;
    let disc = DiscriminatorModel::from_named(&named, scale)?;
    Ok((gen, disc))
}
