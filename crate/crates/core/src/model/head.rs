//! Three-layer convolutional feature head with hand-written backpropagation.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::par::{self, Execution};
use crate::raster::{Raster, RasterData};
use crate::wcam::{Reader, Writer, EXT_PARAMS};
use crate::{Error, Result};

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    /// Affinity feature depth D.
    pub depth: usize,
    /// Spatial reduction of the second convolution.
    pub stride: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden1: 16,
            hidden2: 32,
            depth: 16,
            stride: 2,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 || self.depth == 0 || self.stride == 0 {
            return Err(Error::arg(format!("head config fields must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Feature-grid dims for an image of `width` x `height`.
    pub fn grid_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (width.div_ceil(self.stride), height.div_ceil(self.stride))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn zeros(name: &str, out_ch: usize, in_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvLayer {
            name: name.to_string(),
            out_ch,
            in_ch,
            kernel,
            stride,
            pad,
            weight: vec![T::zero(); out_ch * in_ch * kernel * kernel],
            bias: vec![T::zero(); out_ch],
        }
    }

    fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output positions `o` whose source `o * stride + k - pad` falls inside `0..len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.pad);
        let start = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let end = if len + p > k { ((len + p - k - 1) / s + 1).min(out_len) } else { 0 };
        start..end.max(start)
    }

    fn forward(&self, input: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
        let (oh, ow) = (self.out_len(h), self.out_len(w));
        let mut out = vec![T::zero(); self.out_ch * oh * ow];
        let k = self.kernel;
        par::for_each_chunk_mut(Execution::default(), &mut out, oh * ow, |o, dst| {
            dst.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let src = &input[i * h * w..(i + 1) * h * w];
                for ky in 0..k {
                    let ys = self.valid(ky, h, oh);
                    for kx in 0..k {
                        let xs = self.valid(kx, w, ow);
                        let wv = self.weight[((o * self.in_ch + i) * k + ky) * k + kx];
                        for oy in ys.clone() {
                            let iy = oy * self.stride + ky - self.pad;
                            let row = &src[iy * w..(iy + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for ox in xs.clone() {
                                drow[ox] += wv * row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        });
        (out, oh, ow)
    }

    /// Returns (weight grad, bias grad, input grad if requested).
    fn backward(
        &self,
        input: &[T],
        h: usize,
        w: usize,
        d_out: &[T],
        oh: usize,
        ow: usize,
        want_input: bool,
    ) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
        let k = self.kernel;
        let per_out = par::map_range(Execution::default(), self.out_ch, |o| {
            let g = &d_out[o * oh * ow..(o + 1) * oh * ow];
            let bias: f64 = g.iter().map(|v| v.to_f64().unwrap_or(0.0)).sum();
            let mut wg = vec![T::zero(); self.in_ch * k * k];
            for i in 0..self.in_ch {
                let src = &input[i * h * w..(i + 1) * h * w];
                for ky in 0..k {
                    let ys = self.valid(ky, h, oh);
                    for kx in 0..k {
                        let xs = self.valid(kx, w, ow);
                        let mut acc = 0.0f64;
                        for oy in ys.clone() {
                            let iy = oy * self.stride + ky - self.pad;
                            let row = &src[iy * w..(iy + 1) * w];
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let mut racc = T::zero();
                            for ox in xs.clone() {
                                racc += grow[ox] * row[ox * self.stride + kx - self.pad];
                            }
                            acc += racc.to_f64().unwrap_or(f64::NAN);
                        }
                        wg[(i * k + ky) * k + kx] = T::from_f64(acc).unwrap_or_else(T::nan);
                    }
                }
            }
            (wg, T::from_f64(bias).unwrap_or_else(T::nan))
        });
        let mut w_grad = Vec::with_capacity(self.weight.len());
        let mut b_grad = Vec::with_capacity(self.out_ch);
        for (wg, bg) in per_out {
            w_grad.extend(wg);
            b_grad.push(bg);
        }
        let in_grad = want_input.then(|| {
            let mut d_in = vec![T::zero(); self.in_ch * h * w];
            par::for_each_chunk_mut(Execution::default(), &mut d_in, h * w, |i, dst| {
                for o in 0..self.out_ch {
                    let g = &d_out[o * oh * ow..(o + 1) * oh * ow];
                    for ky in 0..k {
                        let ys = self.valid(ky, h, oh);
                        for kx in 0..k {
                            let xs = self.valid(kx, w, ow);
                            let wv = self.weight[((o * self.in_ch + i) * k + ky) * k + kx];
                            for oy in ys.clone() {
                                let iy = oy * self.stride + ky - self.pad;
                                let drow = &mut dst[iy * w..(iy + 1) * w];
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                for ox in xs.clone() {
                                    drow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            });
            d_in
        });
        (w_grad, b_grad, in_grad)
    }
}

/// Parameters of the feature head; also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f32> {
    pub config: HeadConfig,
    pub layers: Vec<ConvLayer<T>>,
}

/// The trained (32-bit) head.
pub type FeatureHeadParams = HeadParams<f32>;

impl<T: Scalar> HeadParams<T> {
    pub fn zeros(config: HeadConfig) -> Result<Self> {
        config.validate()?;
        Ok(HeadParams {
            config,
            layers: vec![
                ConvLayer::zeros("conv1", config.hidden1, 3, 3, 1, 1),
                ConvLayer::zeros("conv2", config.hidden2, config.hidden1, 3, config.stride, 1),
                ConvLayer::zeros("conv3", config.depth, config.hidden2, 1, 1, 0),
            ],
        })
    }

    /// Weights uniform in `±sqrt(2 / fan_in)`, biases zero.
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.layers {
            let bound = (2.0 / (layer.in_ch * layer.kernel * layer.kernel) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in &mut layer.weight {
                *v = T::from_f64(dist.sample(&mut rng)).unwrap_or_else(T::zero);
            }
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter in layer order, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        HeadParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    out_ch: l.out_ch,
                    in_ch: l.in_ch,
                    kernel: l.kernel,
                    stride: l.stride,
                    pad: l.pad,
                    weight: l.weight.iter().map(|v| U::from(*v).unwrap_or_else(U::nan)).collect(),
                    bias: l.bias.iter().map(|v| U::from(*v).unwrap_or_else(U::nan)).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn check_shapes(&self) -> Result<()> {
        let expected = HeadParams::<T>::zeros(self.config)?;
        let same = self.layers.len() == expected.layers.len()
            && self.layers.iter().zip(&expected.layers).all(|(a, b)| {
                (a.out_ch, a.in_ch, a.kernel, a.stride, a.pad, a.weight.len(), a.bias.len())
                    == (b.out_ch, b.in_ch, b.kernel, b.stride, b.pad, b.weight.len(), b.bias.len())
            });
        if !same {
            return Err(Error::Validation("head parameters do not match the declared architecture".into()));
        }
        Ok(())
    }
}

/// `depth`-dimensional feature per grid cell, stored cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f32> {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 || data.len() != width * height * depth {
            return Err(Error::arg("feature map dims do not match data length"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("feature map contains non-finite values"));
        }
        Ok(FeatureMap {
            width,
            height,
            depth,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, i: usize) -> &[T] {
        &self.data[i * self.depth..(i + 1) * self.depth]
    }
}

/// Intermediate values kept for the backward pass.
pub(crate) struct Trace<T> {
    input: Vec<T>,
    h0: usize,
    w0: usize,
    pre1: Vec<T>,
    act1: Vec<T>,
    pre2: Vec<T>,
    act2: Vec<T>,
    h2: usize,
    w2: usize,
}

fn planar_input<T: Scalar>(image: &Raster) -> Result<Vec<T>> {
    if image.channels() != 3 {
        return Err(Error::arg(format!(
            "feature head needs a 3-channel image, got {} channels",
            image.channels()
        )));
    }
    let n = image.width() * image.height();
    let unit = image.to_unit_f32();
    let RasterData::F32(data) = unit.data() else {
        unreachable!("to_unit_f32 yields float data")
    };
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::arg(format!("image value {v} outside [0, 1]")));
    }
    let mut out = vec![T::zero(); 3 * n];
    for (p, px) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + p] = T::from(px[c]).unwrap_or_else(T::zero);
        }
    }
    Ok(out)
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect()
}

pub(crate) fn forward_trace<T: Scalar>(params: &HeadParams<T>, image: &Raster) -> Result<(FeatureMap<T>, Trace<T>)> {
    params.check_shapes()?;
    let input = planar_input::<T>(image)?;
    let (h0, w0) = (image.height(), image.width());
    let [l1, l2, l3] = &params.layers[..] else {
        unreachable!("shape checked")
    };
    let (pre1, h1, w1) = l1.forward(&input, h0, w0);
    let act1 = relu(&pre1);
    let (pre2, h2, w2) = l2.forward(&act1, h1, w1);
    let act2 = relu(&pre2);
    let (out, _, _) = l3.forward(&act2, h2, w2);
    let d = params.config.depth;
    let cells = h2 * w2;
    let mut data = vec![T::zero(); cells * d];
    for c in 0..d {
        for i in 0..cells {
            data[i * d + c] = out[c * cells + i];
        }
    }
    let feat = FeatureMap {
        width: w2,
        height: h2,
        depth: d,
        data,
    };
    Ok((
        feat,
        Trace {
            input,
            h0,
            w0,
            pre1,
            act1,
            pre2,
            act2,
            h2,
            w2,
        },
    ))
}

/// Runs the head on a 3-channel image (8-bit input is scaled to [0, 1]).
pub fn forward<T: Scalar>(params: &HeadParams<T>, image: &Raster) -> Result<FeatureMap<T>> {
    let (feat, _) = forward_trace(params, image)?;
    if !feat.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("feature head produced non-finite features".into()));
    }
    Ok(feat)
}

/// Backpropagates a cell-major feature gradient into parameter gradients.
pub(crate) fn backward<T: Scalar>(params: &HeadParams<T>, trace: &Trace<T>, d_feat: &[T]) -> HeadParams<T> {
    let d = params.config.depth;
    let cells = trace.h2 * trace.w2;
    let mut d_out = vec![T::zero(); d * cells];
    for i in 0..cells {
        for c in 0..d {
            d_out[c * cells + i] = d_feat[i * d + c];
        }
    }
    let [l1, l2, l3] = &params.layers[..] else {
        unreachable!("shape checked")
    };
    let (h0, w0) = (trace.h0, trace.w0);
    let (w3, b3, d_act2) = l3.backward(&trace.act2, trace.h2, trace.w2, &d_out, trace.h2, trace.w2, true);
    let d_pre2 = mask_relu(d_act2.expect("requested"), &trace.pre2);
    let (w2g, b2, d_act1) = l2.backward(&trace.act1, h0, w0, &d_pre2, trace.h2, trace.w2, true);
    let d_pre1 = mask_relu(d_act1.expect("requested"), &trace.pre1);
    let (w1g, b1, _) = l1.backward(&trace.input, h0, w0, &d_pre1, h0, w0, false);
    let mut grad = params.clone();
    for (layer, (wg, bg)) in grad.layers.iter_mut().zip([(w1g, b1), (w2g, b2), (w3, b3)]) {
        layer.weight = wg;
        layer.bias = bg;
    }
    grad
}

fn mask_relu<T: Scalar>(mut g: Vec<T>, pre: &[T]) -> Vec<T> {
    for (v, &p) in g.iter_mut().zip(pre) {
        if p <= T::zero() {
            *v = T::zero();
        }
    }
    g
}

impl FeatureHeadParams {
    /// Checkpoint layout after the `EXT_PARAMS` header:
    ///
    /// ```text
    /// u32 hidden1, hidden2, depth, stride
    /// u16 tensor count, then per tensor: name (u16 len + UTF-8), u8 rank,
    ///     rank x u32 dims, u64 offset into the payload (in floats)
    /// u64 payload length (floats), f32 payload
    /// ```
    ///
    /// Tensors are listed as `<layer>.weight` (rank 4) and `<layer>.bias` (rank 1).
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_header(EXT_PARAMS);
        for v in [self.config.hidden1, self.config.hidden2, self.config.depth, self.config.stride] {
            w.dim(v)?;
        }
        w.u16((self.layers.len() * 2) as u16);
        let mut offset = 0u64;
        for l in &self.layers {
            w.str(&format!("{}.weight", l.name))?;
            w.u8(4);
            for d in [l.out_ch, l.in_ch, l.kernel, l.kernel] {
                w.dim(d)?;
            }
            w.u64(offset);
            offset += l.weight.len() as u64;
            w.str(&format!("{}.bias", l.name))?;
            w.u8(1);
            w.dim(l.out_ch)?;
            w.u64(offset);
            offset += l.bias.len() as u64;
        }
        w.u64(offset);
        for v in self.values() {
            w.f32(*v);
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, kind) = Reader::open(bytes)?;
        if kind != EXT_PARAMS {
            return Err(Error::format(5, format!("expected parameter checkpoint, found kind {kind:#04x}")));
        }
        let config = HeadConfig {
            hidden1: r.u32()? as usize,
            hidden2: r.u32()? as usize,
            depth: r.u32()? as usize,
            stride: r.u32()? as usize,
        };
        let mut params = HeadParams::<f32>::zeros(config).map_err(|e| Error::format(6, e.to_string()))?;
        let table_at = r.offset();
        let count = r.u16()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            entries.push((name, dims, offset));
        }
        let total = r.u64()? as usize;
        let payload_at = r.offset();
        let n = r.payload_len(&[total], 4)?;
        let payload = r.f32s(n / 4)?;
        r.finish()?;
        if total != params.num_params() {
            return Err(Error::format(payload_at, "parameter count does not match architecture"));
        }
        for layer in &mut params.layers {
            for (suffix, dst) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let key = format!("{}.{suffix}", layer.name);
                let (_, dims, off) = entries
                    .iter()
                    .find(|(n, _, _)| *n == key)
                    .ok_or_else(|| Error::format(table_at, format!("missing tensor {key}")))?;
                let len: usize = dims.iter().product();
                if len != dst.len() || off + len > payload.len() {
                    return Err(Error::format(table_at, format!("tensor {key} has wrong shape or offset")));
                }
                dst.copy_from_slice(&payload[*off..off + len]);
            }
        }
        Ok(params)
    }
}
