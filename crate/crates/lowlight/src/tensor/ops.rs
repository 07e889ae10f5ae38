//! Differentiable operations: elementwise arithmetic, activations,
//! reductions, and the layer primitives of the refinement network.

use super::{GradStore, Tensor, Value};
use crate::error::{Error, Result};

/// Valid output index range along one spatial axis for kernel offset `k`.
///
/// Returns `lo..hi` such that `o*stride + k - pad` stays inside `0..extent`.
fn axis_range(out: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    if extent + pad <= k {
        return (0, 0);
    }
    let hi = ((extent - 1 + pad - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "spatial extent {extent} (+2x{pad} pad) smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

impl Value {
    fn binary(
        &self,
        other: &Value,
        f: impl Fn(f32, f32) -> f32,
        make_back: impl FnOnce(&Value, &Value) -> super::BackFn,
    ) -> Result<Value> {
        self.check_same_graph(other)?;
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data: Vec<f32> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let out = Tensor::from_vec(self.shape().to_vec(), data)?;
        let live = self.live() || other.live();
        let back = live.then(|| make_back(self, other));
        Ok(self.new_from_op(out, live, back))
    }

    pub fn add(&self, other: &Value) -> Result<Value> {
        self.binary(other, |a, b| a + b, |a, b| {
            let (aid, alive) = (a.id(), a.live());
            let (bid, blive) = (b.id(), b.live());
            let n = a.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                if alive {
                    for (s, &d) in store.slot(aid, n).iter_mut().zip(g) {
                        *s += d;
                    }
                }
                if blive {
                    for (s, &d) in store.slot(bid, n).iter_mut().zip(g) {
                        *s += d;
                    }
                }
            })
        })
    }

    pub fn sub(&self, other: &Value) -> Result<Value> {
        self.binary(other, |a, b| a - b, |a, b| {
            let (aid, alive) = (a.id(), a.live());
            let (bid, blive) = (b.id(), b.live());
            let n = a.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                if alive {
                    for (s, &d) in store.slot(aid, n).iter_mut().zip(g) {
                        *s += d;
                    }
                }
                if blive {
                    for (s, &d) in store.slot(bid, n).iter_mut().zip(g) {
                        *s -= d;
                    }
                }
            })
        })
    }

    pub fn mul(&self, other: &Value) -> Result<Value> {
        self.binary(other, |a, b| a * b, |a, b| {
            let (aid, alive, adata) = (a.id(), a.live(), a.tensor().clone());
            let (bid, blive, bdata) = (b.id(), b.live(), b.tensor().clone());
            let n = adata.numel();
            Box::new(move |g, store: &mut GradStore| {
                if alive {
                    let slot = store.slot(aid, n);
                    for i in 0..n {
                        slot[i] += g[i] * bdata.data()[i];
                    }
                }
                if blive {
                    let slot = store.slot(bid, n);
                    for i in 0..n {
                        slot[i] += g[i] * adata.data()[i];
                    }
                }
            })
        })
    }

    fn unary(
        &self,
        f: impl Fn(f32) -> f32,
        dfdx: impl Fn(f32, f32) -> f32 + 'static,
    ) -> Value {
        let data: Vec<f32> = self.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(self.shape().to_vec(), data).unwrap();
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let n = self.tensor().numel();
            let x = self.tensor().clone();
            let y = out.clone();
            Box::new(move |g, store: &mut GradStore| {
                let slot = store.slot(id, n);
                for i in 0..n {
                    slot[i] += g[i] * dfdx(x.data()[i], y.data()[i]);
                }
            })
        });
        self.new_from_op(out, live, back)
    }

    pub fn add_scalar(&self, c: f32) -> Value {
        self.unary(|x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f32) -> Value {
        self.unary(move |x| x * c, move |_, _| c)
    }

    /// Elementwise absolute value; the subgradient at 0 is 0.
    pub fn abs(&self) -> Value {
        self.unary(f32::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self) -> Value {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f32) -> Value {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Value {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    /// Sum of all elements (f64 accumulation), as a scalar tensor.
    pub fn sum(&self) -> Value {
        let total: f64 = self.data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar(total as f32);
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let n = self.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                let d = g[0];
                for s in store.slot(id, n) {
                    *s += d;
                }
            })
        });
        self.new_from_op(out, live, back)
    }

    /// Mean of all elements (f64 accumulation), as a scalar tensor.
    pub fn mean(&self) -> Value {
        let n = self.tensor().numel();
        let total: f64 = self.data().iter().map(|&v| v as f64).sum();
        let out = Tensor::scalar((total / n as f64) as f32);
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let inv = 1.0 / n as f32;
            Box::new(move |g, store: &mut GradStore| {
                let d = g[0] * inv;
                for s in store.slot(id, n) {
                    *s += d;
                }
            })
        });
        self.new_from_op(out, live, back)
    }

    /// 2x2 max pooling with stride 2; gradient routes to the argmax
    /// (first occurrence in row-major order on ties).
    pub fn max_pool2(&self) -> Result<Value> {
        let (n, c, h, w) = self.tensor().nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "max_pool2 requires even spatial extents, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + (2 * oy) * w + 2 * ox;
                    let mut best = x[best_idx];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    data.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let mut out_shape = self.shape().to_vec();
        let rank = out_shape.len();
        out_shape[rank - 2] = oh;
        out_shape[rank - 1] = ow;
        let out = Tensor::from_vec(out_shape, data)?;
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let numel = self.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                let slot = store.slot(id, numel);
                for (i, &src) in argmax.iter().enumerate() {
                    slot[src] += g[i];
                }
            })
        });
        Ok(self.new_from_op(out, live, back))
    }

    /// Nearest-neighbor 2x spatial upsampling; the gradient of each input
    /// sample sums over its four replicas.
    pub fn upsample2(&self) -> Result<Value> {
        let (n, c, h, w) = self.tensor().nchw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.data();
        let mut data = vec![0.0f32; n * c * oh * ow];
        for plane in 0..n * c {
            let ibase = plane * h * w;
            let obase = plane * oh * ow;
            for oy in 0..oh {
                let irow = ibase + (oy / 2) * w;
                let orow = obase + oy * ow;
                for ox in 0..ow {
                    data[orow + ox] = x[irow + ox / 2];
                }
            }
        }
        let mut out_shape = self.shape().to_vec();
        let rank = out_shape.len();
        out_shape[rank - 2] = oh;
        out_shape[rank - 1] = ow;
        let out = Tensor::from_vec(out_shape, data)?;
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let numel = self.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                let slot = store.slot(id, numel);
                for plane in 0..n * c {
                    let ibase = plane * h * w;
                    let obase = plane * oh * ow;
                    for oy in 0..oh {
                        let irow = ibase + (oy / 2) * w;
                        let orow = obase + oy * ow;
                        for ox in 0..ow {
                            slot[irow + ox / 2] += g[orow + ox];
                        }
                    }
                }
            })
        });
        Ok(self.new_from_op(out, live, back))
    }

    /// Concatenates along the channel axis; spatial and batch extents must
    /// agree. The gradient splits back to both operands.
    pub fn concat_channels(&self, other: &Value) -> Result<Value> {
        self.check_same_graph(other)?;
        let (na, ca, ha, wa) = self.tensor().nchw()?;
        let (nb, cb, hb, wb) = other.tensor().nchw()?;
        if (na, ha, wa) != (nb, hb, wb) || self.shape().len() != other.shape().len() {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels on {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (h, w) = (ha, wa);
        let plane = h * w;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for bn in 0..na {
            data.extend_from_slice(&self.data()[bn * ca * plane..(bn + 1) * ca * plane]);
            data.extend_from_slice(&other.data()[bn * cb * plane..(bn + 1) * cb * plane]);
        }
        let mut out_shape = self.shape().to_vec();
        let rank = out_shape.len();
        out_shape[rank - 3] = ca + cb;
        let out = Tensor::from_vec(out_shape, data)?;
        let live = self.live() || other.live();
        let back = live.then(|| -> super::BackFn {
            let (aid, alive) = (self.id(), self.live());
            let (bid, blive) = (other.id(), other.live());
            let an = self.tensor().numel();
            let bn_len = other.tensor().numel();
            Box::new(move |g, store: &mut GradStore| {
                let step = (ca + cb) * plane;
                if alive {
                    let slot = store.slot(aid, an);
                    for bn in 0..na {
                        let src = &g[bn * step..bn * step + ca * plane];
                        let dst = &mut slot[bn * ca * plane..(bn + 1) * ca * plane];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if blive {
                    let slot = store.slot(bid, bn_len);
                    for bn in 0..na {
                        let src = &g[bn * step + ca * plane..(bn + 1) * step];
                        let dst = &mut slot[bn * cb * plane..(bn + 1) * cb * plane];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            })
        });
        Ok(self.new_from_op(out, live, back))
    }

    /// Mean absolute forward difference (anisotropic total variation).
    ///
    /// Sums `|horizontal difference| + |vertical difference|` over every
    /// interior pair and divides by the number of differences; boundaries
    /// are excluded.
    pub fn tv_l1_mean(&self) -> Result<Value> {
        let (n, c, h, w) = self.tensor().nchw()?;
        if h < 2 && w < 2 {
            return Err(Error::Degenerate(
                "total variation needs a spatial extent of at least 2".into(),
            ));
        }
        let planes = n * c;
        let count = planes * (h * (w - 1) + (h - 1) * w);
        let x = self.data();
        let mut total = 0.0f64;
        for plane in 0..planes {
            let base = plane * h * w;
            for y in 0..h {
                let row = base + y * w;
                for xx in 0..w - 1 {
                    total += (x[row + xx + 1] - x[row + xx]).abs() as f64;
                }
            }
            for y in 0..h - 1 {
                let row = base + y * w;
                for xx in 0..w {
                    total += (x[row + w + xx] - x[row + xx]).abs() as f64;
                }
            }
        }
        let out = Tensor::scalar((total / count as f64) as f32);
        let live = self.live();
        let back = live.then(|| -> super::BackFn {
            let id = self.id();
            let numel = self.tensor().numel();
            let x = self.tensor().clone();
            Box::new(move |g, store: &mut GradStore| {
                let d = g[0] / count as f32;
                let x = x.data();
                let slot = store.slot(id, numel);
                for plane in 0..planes {
                    let base = plane * h * w;
                    for y in 0..h {
                        let row = base + y * w;
                        for xx in 0..w - 1 {
                            let s = (x[row + xx + 1] - x[row + xx]).signum_or_zero();
                            slot[row + xx + 1] += d * s;
                            slot[row + xx] -= d * s;
                        }
                    }
                    for y in 0..h - 1 {
                        let row = base + y * w;
                        for xx in 0..w {
                            let s = (x[row + w + xx] - x[row + xx]).signum_or_zero();
                            slot[row + w + xx] += d * s;
                            slot[row + xx] -= d * s;
                        }
                    }
                }
            })
        });
        Ok(self.new_from_op(out, live, back))
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f32;
}

impl SignumOrZero for f32 {
    fn signum_or_zero(self) -> f32 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// 2-D cross-correlation with the given stride and padding; differentiable
/// w.r.t. input, kernel, and bias.
///
/// Output spatial extent is `floor((in + 2*pad - k) / stride) + 1`.
pub fn conv2d(input: &Value, kernel: &Value, bias: &Value, stride: usize, padding: usize) -> Result<Value> {
    input.check_same_graph(kernel)?;
    input.check_same_graph(bias)?;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let (n, c_in, h, w) = input.tensor().nchw()?;
    let kshape = kernel.shape();
    let (c_out, kc, kh, kw) = match kshape {
        [co, ci, kh, kw] => (*co, *ci, *kh, *kw),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "kernel must be [out,in,kh,kw], got {other:?}"
            )))
        }
    };
    if kc != c_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::ShapeMismatch(format!(
            "bias shape {:?} does not match {c_out} output channels",
            bias.shape()
        )));
    }
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;

    let x = input.data();
    let k = kernel.data();
    let b = bias.data();
    let mut data = vec![0.0f32; n * c_out * oh * ow];
    for bn in 0..n {
        let in_base = bn * c_in * h * w;
        let out_base = bn * c_out * oh * ow;
        for co in 0..c_out {
            let out_plane = &mut data[out_base + co * oh * ow..out_base + (co + 1) * oh * ow];
            out_plane.fill(b[co]);
            for ci in 0..c_in {
                let in_plane = &x[in_base + ci * h * w..in_base + (ci + 1) * h * w];
                let k_base = (co * c_in + ci) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = axis_range(oh, h, ky, stride, padding);
                    for kx in 0..kw {
                        let wgt = k[k_base + ky * kw + kx];
                        let (ox_lo, ox_hi) = axis_range(ow, w, kx, stride, padding);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut out_plane[oy * ow..oy * ow + ow];
                            if stride == 1 {
                                let ix0 = ox_lo + kx - padding;
                                let len = ox_hi - ox_lo;
                                for (o, &i) in out_row[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(&in_row[ix0..ix0 + len])
                                {
                                    *o += wgt * i;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += wgt * in_row[ox * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let out_shape = if input.shape().len() == 3 {
        vec![c_out, oh, ow]
    } else {
        vec![n, c_out, oh, ow]
    };
    let out = Tensor::from_vec(out_shape, data)?;
    let live = input.live() || kernel.live() || bias.live();
    let back = live.then(|| -> super::BackFn {
        let (xid, xlive, xdata) = (input.id(), input.live(), input.tensor().clone());
        let (kid, klive, kdata) = (kernel.id(), kernel.live(), kernel.tensor().clone());
        let (bid, blive) = (bias.id(), bias.live());
        Box::new(move |g, store: &mut GradStore| {
            let x = xdata.data();
            let k = kdata.data();
            if blive {
                let slot = store.slot(bid, c_out);
                for bn in 0..n {
                    let out_base = bn * c_out * oh * ow;
                    for (co, s) in slot.iter_mut().enumerate() {
                        let plane = &g[out_base + co * oh * ow..out_base + (co + 1) * oh * ow];
                        *s += plane.iter().sum::<f32>();
                    }
                }
            }
            if klive {
                let slot = store.slot(kid, kdata.numel());
                for bn in 0..n {
                    let in_base = bn * c_in * h * w;
                    let out_base = bn * c_out * oh * ow;
                    for co in 0..c_out {
                        let g_plane = &g[out_base + co * oh * ow..out_base + (co + 1) * oh * ow];
                        for ci in 0..c_in {
                            let in_plane = &x[in_base + ci * h * w..in_base + (ci + 1) * h * w];
                            let k_base = (co * c_in + ci) * kh * kw;
                            for ky in 0..kh {
                                let (oy_lo, oy_hi) = axis_range(oh, h, ky, stride, padding);
                                for kx in 0..kw {
                                    let (ox_lo, ox_hi) = axis_range(ow, w, kx, stride, padding);
                                    if ox_lo >= ox_hi {
                                        continue;
                                    }
                                    let mut acc = 0.0f32;
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy * stride + ky - padding;
                                        let g_row = &g_plane[oy * ow..oy * ow + ow];
                                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                                        if stride == 1 {
                                            let ix0 = ox_lo + kx - padding;
                                            let len = ox_hi - ox_lo;
                                            acc += g_row[ox_lo..ox_hi]
                                                .iter()
                                                .zip(&in_row[ix0..ix0 + len])
                                                .map(|(&a, &b)| a * b)
                                                .sum::<f32>();
                                        } else {
                                            for ox in ox_lo..ox_hi {
                                                acc += g_row[ox]
                                                    * in_row[ox * stride + kx - padding];
                                            }
                                        }
                                    }
                                    slot[k_base + ky * kw + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if xlive {
                let slot = store.slot(xid, xdata.numel());
                for bn in 0..n {
                    let in_base = bn * c_in * h * w;
                    let out_base = bn * c_out * oh * ow;
                    for co in 0..c_out {
                        let g_plane = &g[out_base + co * oh * ow..out_base + (co + 1) * oh * ow];
                        for ci in 0..c_in {
                            let k_base = (co * c_in + ci) * kh * kw;
                            for ky in 0..kh {
                                let (oy_lo, oy_hi) = axis_range(oh, h, ky, stride, padding);
                                for kx in 0..kw {
                                    let wgt = k[k_base + ky * kw + kx];
                                    let (ox_lo, ox_hi) = axis_range(ow, w, kx, stride, padding);
                                    if ox_lo >= ox_hi || wgt == 0.0 {
                                        continue;
                                    }
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy * stride + ky - padding;
                                        let g_row = &g_plane[oy * ow..oy * ow + ow];
                                        let row_base = in_base + ci * h * w + iy * w;
                                        if stride == 1 {
                                            let ix0 = ox_lo + kx - padding;
                                            let len = ox_hi - ox_lo;
                                            let dst = &mut slot
                                                [row_base + ix0..row_base + ix0 + len];
                                            for (d, &gv) in dst.iter_mut().zip(&g_row[ox_lo..ox_hi])
                                            {
                                                *d += wgt * gv;
                                            }
                                        } else {
                                            for ox in ox_lo..ox_hi {
                                                slot[row_base + ox * stride + kx - padding] +=
                                                    wgt * g_row[ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        })
    });
    Ok(input.new_from_op(out, live, back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn val(g: &Graph, shape: Vec<usize>, data: Vec<f32>) -> Value {
        g.var(&Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn identity_conv_preserves_input() {
        let g = Graph::new();
        let x = val(&g, vec![1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let k = g.constant(&Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(&Tensor::zeros(vec![1]));
        let y = conv2d(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias() {
        let g = Graph::new();
        let x = g.constant(&Tensor::zeros(vec![2, 4, 4]));
        let k = g.constant(&Tensor::zeros(vec![3, 2, 3, 3]));
        let b = g.constant(&Tensor::from_vec(vec![3], vec![0.5, -0.25, 1.5]).unwrap());
        let y = conv2d(&x, &k, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for c in 0..3 {
            for v in &y.data()[c * 16..(c + 1) * 16] {
                assert_eq!(*v, [0.5, -0.25, 1.5][c]);
            }
        }
    }

    #[test]
    fn averaging_kernel_on_identity_pattern() {
        // 3x3 identity-matrix input, 3x3 kernel of 1/9, pad 1: center sees all
        // three ones.
        let g = Graph::new();
        let x = val(
            &g,
            vec![1, 3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let k = g.constant(&Tensor::full(vec![1, 1, 3, 3], 1.0 / 9.0));
        let b = g.constant(&Tensor::zeros(vec![1]));
        let y = conv2d(&x, &k, &b, 1, 1).unwrap();
        assert!((y.data()[4] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn conv_shape_mismatch_rejected() {
        let g = Graph::new();
        let x = g.constant(&Tensor::zeros(vec![2, 4, 4]));
        let k = g.constant(&Tensor::zeros(vec![1, 3, 3, 3]));
        let b = g.constant(&Tensor::zeros(vec![1]));
        assert!(conv2d(&x, &k, &b, 1, 1).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let g = Graph::new();
        let x = val(&g, vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.max_pool2().unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);

        let c = val(&g, vec![1, 4, 4], vec![0.7; 16]);
        let yc = c.max_pool2().unwrap();
        assert_eq!(yc.shape(), &[1, 2, 2]);
        assert_eq!(yc.data(), &[0.7; 4]);
    }

    #[test]
    fn max_pool_tie_routes_to_first_occurrence() {
        let g = Graph::new();
        let x = val(&g, vec![1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]);
        let y = x.max_pool2().unwrap();
        let loss = y.sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_rejects_odd_extent() {
        let g = Graph::new();
        let x = g.constant(&Tensor::zeros(vec![1, 3, 4]));
        assert!(x.max_pool2().is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let g = Graph::new();
        let x = val(&g, vec![1, 1, 1], vec![1.0]);
        let y = x.upsample2().unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);

        let x2 = val(&g, vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y2 = x2.upsample2().unwrap();
        assert_eq!(
            y2.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn upsample_gradient_sums_replicas() {
        let g = Graph::new();
        let x = val(&g, vec![1, 1, 1], vec![0.3]);
        let y = x.upsample2().unwrap();
        let loss = y.sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[4.0]);
    }

    #[test]
    fn concat_channel_arithmetic_matches_fusion_rows() {
        let g = Graph::new();
        // fusion1: 256 + 128 = 384 at 16x16
        let a = g.constant(&Tensor::zeros(vec![256, 16, 16]));
        let b = g.constant(&Tensor::zeros(vec![128, 16, 16]));
        assert_eq!(a.concat_channels(&b).unwrap().shape(), &[384, 16, 16]);
        // fusion3: 64 + 32 = 96 at 64x64
        let c = g.constant(&Tensor::zeros(vec![64, 64, 64]));
        let d = g.constant(&Tensor::zeros(vec![32, 64, 64]));
        assert_eq!(c.concat_channels(&d).unwrap().shape(), &[96, 64, 64]);
    }

    #[test]
    fn concat_with_zero_channels_is_identity() {
        let g = Graph::new();
        let a = val(&g, vec![2, 2, 2], vec![0.5; 8]);
        let b = g.constant(&Tensor::zeros(vec![0, 2, 2]));
        let y = a.concat_channels(&b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let g = Graph::new();
        let a = g.constant(&Tensor::zeros(vec![1, 2, 2]));
        let b = g.constant(&Tensor::zeros(vec![1, 4, 4]));
        assert!(a.concat_channels(&b).is_err());
    }

    #[test]
    fn activation_values() {
        let g = Graph::new();
        let x = val(&g, vec![3], vec![-1.0, 2.0, 0.0]);
        assert_eq!(x.relu().data(), &[0.0, 2.0, 0.0]);
        let lr = x.leaky_relu(0.2);
        assert!((lr.data()[0] + 0.2).abs() < 1e-7);
        assert_eq!(lr.data()[1], 2.0);
        let s = val(&g, vec![1], vec![0.0]).sigmoid();
        assert_eq!(s.data(), &[0.5]);
    }

    #[test]
    fn backward_linear_form() {
        // loss = sum(w * x) with x constant: grad(w) = x
        let g = Graph::new();
        let w = val(&g, vec![3], vec![1.0, 2.0, 3.0]);
        let x = g.constant(&Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let loss = w.mul(&x).unwrap().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&w).unwrap(), &[0.5, -1.0, 2.0]);
        assert!(grads.get(&x).is_none());
    }

    #[test]
    fn backward_square() {
        // loss = sum(w^2) at w=3: grad = 6
        let g = Graph::new();
        let w = val(&g, vec![1], vec![3.0]);
        let loss = w.mul(&w).unwrap().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&w).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let g = Graph::new();
        let w = val(&g, vec![1], vec![2.0]);
        let loss = w.mul(&w).unwrap().sum();
        assert!(loss.backward().is_ok());
        assert!(matches!(
            loss.backward(),
            Err(crate::error::Error::GraphConsumed)
        ));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let g = Graph::new();
        let w = val(&g, vec![2], vec![1.0, 2.0]);
        let y = w.relu();
        assert!(matches!(
            y.backward(),
            Err(crate::error::Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let g = Graph::new();
        let w = val(&g, vec![1], vec![2.0]);
        let d = w.mul(&w).unwrap().detach();
        let loss = d.mul(&w).unwrap().sum();
        let grads = loss.backward().unwrap();
        // only the direct path contributes: d(4w)/dw = 4
        assert_eq!(grads.get(&w).unwrap(), &[4.0]);
    }

    #[test]
    fn graph_mismatch_rejected() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.constant(&Tensor::zeros(vec![1]));
        let b = g2.constant(&Tensor::zeros(vec![1]));
        assert!(matches!(a.add(&b), Err(Error::GraphMismatch)));
    }

    #[test]
    fn tv_examples() {
        let g = Graph::new();
        let c = g.constant(&Tensor::full(vec![1, 4, 4], 0.42));
        assert_eq!(c.tv_l1_mean().unwrap().item(), 0.0);

        let pair = g.constant(&Tensor::from_vec(vec![1, 1, 2], vec![0.0, 1.0]).unwrap());
        assert_eq!(pair.tv_l1_mean().unwrap().item(), 1.0);

        // horizontal ramp with step 0.1 on 1xN
        let n = 8;
        let ramp: Vec<f32> = (0..n).map(|i| 0.1 * i as f32).collect();
        let r = g.constant(&Tensor::from_vec(vec![1, 1, n], ramp).unwrap());
        assert!((r.tv_l1_mean().unwrap().item() - 0.1).abs() < 1e-6);

        let one = g.constant(&Tensor::zeros(vec![1, 1, 1]));
        assert!(one.tv_l1_mean().is_err());
    }

    #[test]
    fn conv_linearity_with_zero_bias() {
        let g = Graph::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let k = g.constant(&Tensor::glorot(vec![2, 3, 3, 3], 27, 18, &mut rng));
        let b = g.constant(&Tensor::zeros(vec![2]));
        let xv: Vec<f32> = (0..3 * 4 * 4).map(|i| (i as f32 * 0.37).sin()).collect();
        let yv: Vec<f32> = (0..3 * 4 * 4).map(|i| (i as f32 * 0.11).cos()).collect();
        let x = g.constant(&Tensor::from_vec(vec![3, 4, 4], xv.clone()).unwrap());
        let y = g.constant(&Tensor::from_vec(vec![3, 4, 4], yv.clone()).unwrap());
        let (alpha, beta) = (0.7f32, -1.3f32);
        let mixed: Vec<f32> = xv
            .iter()
            .zip(&yv)
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        let m = g.constant(&Tensor::from_vec(vec![3, 4, 4], mixed).unwrap());
        let cm = conv2d(&m, &k, &b, 1, 1).unwrap();
        let cx = conv2d(&x, &k, &b, 1, 1).unwrap();
        let cy = conv2d(&y, &k, &b, 1, 1).unwrap();
        for i in 0..cm.tensor().numel() {
            let expect = alpha * cx.data()[i] + beta * cy.data()[i];
            assert!((cm.data()[i] - expect).abs() < 1e-5);
        }
    }
}
