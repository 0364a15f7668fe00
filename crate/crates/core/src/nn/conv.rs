//! 3D convolution, pooling and residual blocks on channel-first volumes
//! `[C, D, H, W]`.
//!
//! Convolution is computed one output depth-plane at a time: the receptive
//! fields of that plane are unrolled into a `(C_in·k³) × (H_out·W_out)` column
//! matrix and multiplied by the flattened kernel.

use rand::Rng;

use super::{hash_flags, he_uniform, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

pub fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    debug_assert!(n + 2 * pad >= k && stride > 0);
    (n + 2 * pad - k) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 5 {
            return Err(Error::shape("conv3d operands", &[0, 0, 0, 0], x_shape));
        }
        let (co, ci, k) = (w_shape[0], w_shape[1], w_shape[2]);
        if w_shape[3] != k || w_shape[4] != k {
            return Err(Error::shape("conv3d cubic kernel", &[co, ci, k, k, k], w_shape));
        }
        if x_shape[0] != ci {
            return Err(Error::shape("conv3d input channels", &[ci], &x_shape[..1]));
        }
        let inp = [x_shape[1], x_shape[2], x_shape[3]];
        if inp.iter().any(|&n| n + 2 * pad < k) || stride == 0 {
            return Err(Error::shape("conv3d input smaller than kernel", &[k, k, k], &inp));
        }
        let out = inp.map(|n| conv_out_len(n, k, stride, pad));
        Ok(Geometry {
            ci,
            co,
            k,
            stride,
            pad,
            inp,
            out,
        })
    }

    fn rows(&self) -> usize {
        self.ci * self.k * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.out[1] * self.out[2]
    }

    /// Source coordinate for output index `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, axis: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.inp[axis]).then_some(i as usize)
    }

    fn im2col(&self, x: &[f64], od: usize, cols: &mut [f64]) {
        let [_, ih, iw] = self.inp;
        let [_, oh, ow] = self.out;
        let p = self.plane();
        let k = self.k;
        for c in 0..self.ci {
            for a in 0..k {
                for b in 0..k {
                    for e in 0..k {
                        let row = ((c * k + a) * k + b) * k + e;
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let Some(id) = self.src(od, a, 0) else {
                            dst.fill(0.0);
                            continue;
                        };
                        for oy in 0..oh {
                            let line = &mut dst[oy * ow..(oy + 1) * ow];
                            let Some(iy) = self.src(oy, b, 1) else {
                                line.fill(0.0);
                                continue;
                            };
                            let base = ((c * self.inp[0] + id) * ih + iy) * iw;
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match self.src(ox, e, 2) {
                                    Some(ix) => x[base + ix],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], od: usize, dx: &mut [f64]) {
        let [_, ih, iw] = self.inp;
        let [_, oh, ow] = self.out;
        let p = self.plane();
        let k = self.k;
        for c in 0..self.ci {
            for a in 0..k {
                let Some(id) = self.src(od, a, 0) else { continue };
                for b in 0..k {
                    for e in 0..k {
                        let row = ((c * k + a) * k + b) * k + e;
                        let src = &cols[row * p..(row + 1) * p];
                        for oy in 0..oh {
                            let Some(iy) = self.src(oy, b, 1) else { continue };
                            let base = ((c * self.inp[0] + id) * ih + iy) * iw;
                            for ox in 0..ow {
                                if let Some(ix) = self.src(ox, e, 2) {
                                    dx[base + ix] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x: [C_in, D, H, W]` with `w: [C_out, C_in, k, k, k]`,
/// zero padding `pad` on every side.
pub fn conv3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = Geometry::new(x.shape(), w.shape(), stride, pad)?;
    let [od, oh, ow] = g.out;
    let p = g.plane();
    let rows = g.rows();
    let mut out = Tensor::zeros(&[g.co, od, oh, ow]);
    let mut cols = vec![0.0; rows * p];
    let mut tmp = vec![0.0; g.co * p];
    for d in 0..od {
        g.im2col(x.data(), d, &mut cols);
        gemm(g.co, rows, p, w.data(), false, &cols, false, &mut tmp, false);
        let o = out.data_mut();
        for c in 0..g.co {
            let b = bias.map_or(0.0, |b| b.data()[c]);
            let dst = &mut o[(c * od + d) * p..(c * od + d + 1) * p];
            for (v, &t) in dst.iter_mut().zip(&tmp[c * p..(c + 1) * p]) {
                *v = t + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv3d`]: `(dw, db, dx)`; `dx` only when requested.
pub fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<(Tensor, Vec<f64>, Option<Tensor>)> {
    let g = Geometry::new(x.shape(), w.shape(), stride, pad)?;
    let [od, oh, ow] = g.out;
    grad_out.ensure_shape(&[g.co, od, oh, ow], "conv3d grad_out")?;
    let p = g.plane();
    let rows = g.rows();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![0.0; g.co];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![0.0; rows * p];
    let mut gplane = vec![0.0; g.co * p];
    let go = grad_out.data();
    for d in 0..od {
        for c in 0..g.co {
            let src = &go[(c * od + d) * p..(c * od + d + 1) * p];
            gplane[c * p..(c + 1) * p].copy_from_slice(src);
            db[c] += src.iter().sum::<f64>();
        }
        g.im2col(x.data(), d, &mut cols);
        gemm(g.co, p, rows, &gplane, false, &cols, true, dw.data_mut(), true);
        if let Some(dx) = dx.as_mut() {
            gemm(rows, g.co, p, w.data(), true, &gplane, false, &mut cols, false);
            g.col2im_add(&cols, d, dx.data_mut());
        }
    }
    Ok((dw, db, dx))
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    params: [Param; 2],
    stride: usize,
    pad: usize,
    input: Option<Tensor>,
}

impl Conv3d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let w = he_uniform(&[c_out, c_in, k, k, k], c_in * k * k * k, rng);
        Conv3d {
            params: [
                Param::new("weight", w),
                Param::new("bias", Tensor::zeros(&[c_out])),
            ],
            stride,
            pad,
            input: None,
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        if weight.ndim() != 5 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("conv3d bias", &[weight.shape()[0]], bias.shape()));
        }
        Ok(Conv3d {
            params: [Param::new("weight", weight), Param::new("bias", bias)],
            stride,
            pad,
            input: None,
        })
    }
}

fn conv_output_shape(input: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Vec<usize>> {
    let g = Geometry::new(input, w, stride, pad)?;
    Ok(vec![g.co, g.out[0], g.out[1], g.out[2]])
}

impl Layer for Conv3d {
    fn kind(&self) -> &'static str {
        "conv3d"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        conv_output_shape(input, self.params[0].value.shape(), self.stride, self.pad)
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let y = conv3d(x, &self.params[0].value, Some(&self.params[1].value), self.stride, self.pad)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("conv3d".into()))?;
        let (dw, db, dx) = conv3d_backward(x, &self.params[0].value, grad_out, self.stride, self.pad, need_input_grad)?;
        self.params[0].grad.axpy(1.0, &dw)?;
        for (g, d) in self.params[1].grad.data_mut().iter_mut().zip(db) {
            *g += d;
        }
        Ok(dx)
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Max pooling with `-inf` padding; gradients route to the arg-max.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    k: usize,
    stride: usize,
    pad: usize,
    argmax: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool3d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        MaxPool3d {
            k,
            stride,
            pad,
            argmax: None,
        }
    }
}

impl Layer for MaxPool3d {
    fn kind(&self) -> &'static str {
        "maxpool3d"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1..].iter().any(|&n| n + 2 * self.pad < self.k) || self.pad >= self.k {
            return Err(Error::shape("maxpool3d input", &[0, self.k, self.k, self.k], input));
        }
        let mut out = vec![input[0]];
        out.extend(input[1..].iter().map(|&n| conv_out_len(n, self.k, self.stride, self.pad)));
        Ok(out)
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let s = x.shape();
        let (d, h, w) = (s[1], s[2], s[3]);
        let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
        let mut y = Tensor::zeros(&out_shape);
        let mut arg = vec![0usize; y.len()];
        let xs = x.data();
        let range = |o: usize, n: usize| {
            let start = (o * self.stride) as isize - self.pad as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.k as isize) as usize).min(n);
            lo..hi
        };
        let ys = y.data_mut();
        let mut idx = 0;
        for c in 0..s[0] {
            for a in 0..od {
                for b in 0..oh {
                    for e in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for z in range(a, d) {
                            for yy in range(b, h) {
                                let row = ((c * d + z) * h + yy) * w;
                                for xx in range(e, w) {
                                    let v = xs[row + xx];
                                    if v > best {
                                        best = v;
                                        best_i = row + xx;
                                    }
                                }
                            }
                        }
                        ys[idx] = best;
                        arg[idx] = best_i;
                        idx += 1;
                    }
                }
            }
        }
        self.argmax = Some((arg, s.to_vec()));
        Ok(y)
    }

    fn kink_state(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        if let Some((arg, _)) = &self.argmax {
            std::hash::Hash::hash(arg, &mut h);
        }
        std::hash::Hasher::finish(&h)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let (arg, in_shape) = self
            .argmax
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("maxpool3d".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(in_shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        Ok(Some(dx))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Global average pooling `[C, ...] -> [C]`.
#[derive(Debug, Clone, Default)]
pub struct Gap {
    in_shape: Option<Vec<usize>>,
}

impl Layer for Gap {
    fn kind(&self) -> &'static str {
        "gap"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() < 2 {
            return Err(Error::shape("gap input needs spatial axes", &[0, 0], input));
        }
        Ok(vec![input[0]])
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        self.output_shape(x.shape())?;
        let c = x.shape()[0];
        let y = (0..c)
            .map(|k| {
                let ch = x.channel(k);
                ch.iter().sum::<f64>() / ch.len() as f64
            })
            .collect();
        self.in_shape = Some(x.shape().to_vec());
        Ok(Tensor::vector(y))
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let shape = self
            .in_shape
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("gap".into()))?;
        if !need_input_grad {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(shape);
        let per = dx.len() / shape[0];
        for (c, &g) in grad_out.data().iter().enumerate() {
            dx.channel_mut(c).fill(g / per as f64);
        }
        Ok(Some(dx))
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    x: Tensor,
    r1: Tensor,
    y: Tensor,
}

/// Basic residual block: `ReLU(conv2(ReLU(conv1(x))) + shortcut(x))`.
///
/// Both convolutions are 3×3×3 with padding 1; the first carries the stride.
/// The shortcut is the identity unless the stride or channel count changes,
/// in which case it is a strided 1×1×1 projection.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    params: Vec<Param>,
    stride: usize,
    cache: Option<BlockCache>,
}

impl ResidualBlock {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut params = vec![
            Param::new("conv1.weight", he_uniform(&[c_out, c_in, 3, 3, 3], c_in * 27, rng)),
            Param::new("conv1.bias", Tensor::zeros(&[c_out])),
            Param::new("conv2.weight", he_uniform(&[c_out, c_out, 3, 3, 3], c_out * 27, rng)),
            Param::new("conv2.bias", Tensor::zeros(&[c_out])),
        ];
        if stride != 1 || c_in != c_out {
            params.push(Param::new("proj.weight", he_uniform(&[c_out, c_in, 1, 1, 1], c_in, rng)));
            params.push(Param::new("proj.bias", Tensor::zeros(&[c_out])));
        }
        ResidualBlock {
            params,
            stride,
            cache: None,
        }
    }

    pub fn has_projection(&self) -> bool {
        self.params.len() == 6
    }

    fn p(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }
}

impl Layer for ResidualBlock {
    fn kind(&self) -> &'static str {
        "residual_block"
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mid = conv_output_shape(input, self.p(0).shape(), self.stride, 1)?;
        conv_output_shape(&mid, self.p(2).shape(), 1, 1)
    }

    fn forward(&mut self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
        let h1 = conv3d(x, self.p(0), Some(self.p(1)), self.stride, 1)?;
        let r1 = h1.map(|v| v.max(0.0));
        let mut y = conv3d(&r1, self.p(2), Some(self.p(3)), 1, 1)?;
        if self.has_projection() {
            let sc = conv3d(x, self.p(4), Some(self.p(5)), self.stride, 0)?;
            y.axpy(1.0, &sc)?;
        } else {
            y.axpy(1.0, x)?;
        }
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.cache = Some(BlockCache {
            x: x.clone(),
            r1,
            y: y.clone(),
        });
        Ok(y)
    }

    fn kink_state(&self) -> u64 {
        self.cache.as_ref().map_or(0, |c| {
            hash_flags(c.r1.data().iter().chain(c.y.data()).map(|&v| v > 0.0))
        })
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("residual_block".into()))?;
        let mut gy = grad_out.clone();
        for (g, &y) in gy.data_mut().iter_mut().zip(cache.y.data()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        let (dw2, db2, dr1) = conv3d_backward(&cache.r1, self.p(2), &gy, 1, 1, true)?;
        let mut dh1 = dr1.expect("requested");
        for (g, &r) in dh1.data_mut().iter_mut().zip(cache.r1.data()) {
            if r <= 0.0 {
                *g = 0.0;
            }
        }
        let (dw1, db1, dx1) = conv3d_backward(&cache.x, self.p(0), &dh1, self.stride, 1, need_input_grad)?;
        let mut grads = vec![(dw1, db1), (dw2, db2)];
        let mut dx = dx1;
        if self.has_projection() {
            let (dwp, dbp, dxp) = conv3d_backward(&cache.x, self.p(4), &gy, self.stride, 0, need_input_grad)?;
            grads.push((dwp, dbp));
            if let (Some(dx), Some(dxp)) = (dx.as_mut(), dxp) {
                dx.axpy(1.0, &dxp)?;
            }
        } else if let Some(dx) = dx.as_mut() {
            dx.axpy(1.0, &gy)?;
        }
        for (i, (dw, db)) in grads.into_iter().enumerate() {
            self.params[2 * i].grad.axpy(1.0, &dw)?;
            for (g, d) in self.params[2 * i + 1].grad.data_mut().iter_mut().zip(db) {
                *g += d;
            }
        }
        Ok(dx)
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
