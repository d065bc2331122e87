use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{elem_count, Tensor};

/// One layer of a feed-forward network.
///
/// Shape conventions (all row-major):
/// - `FullyConnected`: weight `[out, in]`, bias `[out]`, maps rank-1 → rank-1.
/// - `Conv2d`: weight `[co, ci, kh, kw]`, bias `[co]`, input `[ci, h, w]`.
/// - `ConvTranspose2d`: weight `[ci, co, kh, kw]`, bias `[co]`, input `[ci, h, w]`.
#[derive(Debug, Clone)]
pub enum Layer {
    FullyConnected {
        weight: Tensor,
        bias: Tensor,
    },
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    Reshape {
        shape: Vec<usize>,
    },
    Dropout {
        p: f32,
    },
}

/// Survivor scaling used by inverted dropout.
pub fn dropout_keep_scale(p: f32) -> f32 {
    1.0 / (1.0 - p)
}

fn glorot(fan_in: usize, fan_out: usize, n: usize, rng: &mut impl Rng) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

impl Layer {
    pub fn fully_connected(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Layer {
        Layer::FullyConnected {
            weight: Tensor::new(vec![out_dim, in_dim], glorot(in_dim, out_dim, out_dim * in_dim, rng))
                .expect("consistent shape"),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    /// Fully-connected layer with all-zero parameters (used for heads that
    /// must start as the identity-like baseline).
    pub fn fully_connected_zeroed(in_dim: usize, out_dim: usize) -> Layer {
        Layer::FullyConnected {
            weight: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn conv2d(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Layer {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        Layer::Conv2d {
            weight: Tensor::new(
                vec![out_ch, in_ch, kernel, kernel],
                glorot(fan_in, fan_out, out_ch * in_ch * kernel * kernel, rng),
            )
            .expect("consistent shape"),
            bias: Tensor::zeros(vec![out_ch]),
            stride,
            padding,
        }
    }

    pub fn conv2d_zeroed(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
        Layer::Conv2d {
            weight: Tensor::zeros(vec![out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(vec![out_ch]),
            stride,
            padding,
        }
    }

    pub fn conv_transpose2d(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Layer {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        Layer::ConvTranspose2d {
            weight: Tensor::new(
                vec![in_ch, out_ch, kernel, kernel],
                glorot(fan_in, fan_out, in_ch * out_ch * kernel * kernel, rng),
            )
            .expect("consistent shape"),
            bias: Tensor::zeros(vec![out_ch]),
            stride,
            padding,
        }
    }

    pub fn relu() -> Layer {
        Layer::Relu
    }

    pub fn reshape(shape: Vec<usize>) -> Layer {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "reshape target must have positive dims"
        );
        Layer::Reshape { shape }
    }

    pub fn dropout(p: f32) -> Layer {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Layer::Dropout { p }
    }

    /// Output shape as a pure function of the input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::FullyConnected { weight, .. } => {
                let in_dim = weight.shape()[1];
                if input != [in_dim] {
                    return Err(Error::ShapeMismatch {
                        context: "FullyConnected",
                        expected: vec![in_dim],
                        got: input.to_vec(),
                    });
                }
                Ok(vec![weight.shape()[0]])
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let (co, ci) = (weight.shape()[0], weight.shape()[1]);
                let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
                if input.len() != 3 || input[0] != ci {
                    return Err(Error::ShapeMismatch {
                        context: "Conv2d",
                        expected: vec![ci, 0, 0],
                        got: input.to_vec(),
                    });
                }
                let (h, w) = (input[1], input[2]);
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err(Error::InvalidShape(format!(
                        "conv kernel {kh}x{kw} exceeds padded input {h}x{w}"
                    )));
                }
                Ok(vec![
                    co,
                    (h + 2 * padding - kh) / stride + 1,
                    (w + 2 * padding - kw) / stride + 1,
                ])
            }
            Layer::ConvTranspose2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let (ci, co) = (weight.shape()[0], weight.shape()[1]);
                let (kh, kw) = (weight.shape()[2], weight.shape()[3]);
                if input.len() != 3 || input[0] != ci {
                    return Err(Error::ShapeMismatch {
                        context: "ConvTranspose2d",
                        expected: vec![ci, 0, 0],
                        got: input.to_vec(),
                    });
                }
                let (h, w) = (input[1], input[2]);
                let ho = (h - 1) * stride + kh;
                let wo = (w - 1) * stride + kw;
                if ho < 2 * padding || wo < 2 * padding {
                    return Err(Error::InvalidShape(format!(
                        "transpose-conv padding {padding} swallows the {ho}x{wo} output"
                    )));
                }
                Ok(vec![co, ho - 2 * padding, wo - 2 * padding])
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::Reshape { shape } => {
                if elem_count(shape) != elem_count(input) {
                    return Err(Error::ShapeMismatch {
                        context: "Reshape",
                        expected: shape.clone(),
                        got: input.to_vec(),
                    });
                }
                Ok(shape.clone())
            }
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            Layer::FullyConnected { .. } | Layer::Conv2d { .. } | Layer::ConvTranspose2d { .. }
        )
    }
}

/// Per-layer state captured by a train-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub input: Tensor,
    pub mask: Option<Vec<f32>>,
}

/// Forward-mode tangent bundle: `cols` directional derivatives per element,
/// stored element-major so layer kernels can stream over elements.
#[derive(Debug, Clone)]
pub(crate) struct Tangent {
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tangent {
    pub fn identity(n: usize) -> Tangent {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tangent { cols: n, data }
    }
}

// ── Forward kernels (f32 storage, f64 accumulation) ─────────────────────────

fn fc_forward(weight: &Tensor, bias: &Tensor, x: &[f32]) -> Vec<f32> {
    let out_dim = weight.shape()[0];
    let in_dim = weight.shape()[1];
    let w = weight.data();
    let b = bias.data();
    let mut y = vec![0.0f32; out_dim];
    for i in 0..out_dim {
        let row = &w[i * in_dim..(i + 1) * in_dim];
        let mut acc = b[i] as f64;
        for (wk, xk) in row.iter().zip(x) {
            acc += *wk as f64 * *xk as f64;
        }
        y[i] = acc as f32;
    }
    y
}

struct ConvDims {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(weight: &Tensor, in_shape: &[usize], stride: usize, padding: usize) -> ConvDims {
    let (ci, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (co, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    ConvDims {
        ci,
        h,
        w,
        co,
        kh,
        kw,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    }
}

fn deconv_dims(weight: &Tensor, in_shape: &[usize], stride: usize, padding: usize) -> ConvDims {
    let (ci, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (co, kh, kw) = (weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    ConvDims {
        ci,
        h,
        w,
        co,
        kh,
        kw,
        ho: (h - 1) * stride + kh - 2 * padding,
        wo: (w - 1) * stride + kw - 2 * padding,
    }
}

fn conv2d_forward(
    weight: &Tensor,
    bias: &Tensor,
    x: &[f32],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    let d = conv_dims(weight, in_shape, stride, padding);
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f32; d.co * d.ho * d.wo];
    for oc in 0..d.co {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let mut acc = bd[oc] as f64;
                for ic in 0..d.ci {
                    for ky in 0..d.kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = &x[(ic * d.h + iy as usize) * d.w..];
                        let wrow = &wd[((oc * d.ci + ic) * d.kh + ky) * d.kw..];
                        for kx in 0..d.kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            acc += wrow[kx] as f64 * xrow[ix as usize] as f64;
                        }
                    }
                }
                out[(oc * d.ho + oy) * d.wo + ox] = acc as f32;
            }
        }
    }
    out
}

fn deconv2d_forward(
    weight: &Tensor,
    bias: &Tensor,
    x: &[f32],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Vec<f32> {
    let d = deconv_dims(weight, in_shape, stride, padding);
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f32; d.co * d.ho * d.wo];
    for oc in 0..d.co {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let mut acc = bd[oc] as f64;
                for ic in 0..d.ci {
                    for ky in 0..d.kh {
                        let ny = oy as isize + padding as isize - ky as isize;
                        if ny < 0 || ny % stride as isize != 0 {
                            continue;
                        }
                        let iy = (ny / stride as isize) as usize;
                        if iy >= d.h {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let nx = ox as isize + padding as isize - kx as isize;
                            if nx < 0 || nx % stride as isize != 0 {
                                continue;
                            }
                            let ix = (nx / stride as isize) as usize;
                            if ix >= d.w {
                                continue;
                            }
                            let wv = wd[((ic * d.co + oc) * d.kh + ky) * d.kw + kx] as f64;
                            acc += wv * x[(ic * d.h + iy) * d.w + ix] as f64;
                        }
                    }
                }
                out[(oc * d.ho + oy) * d.wo + ox] = acc as f32;
            }
        }
    }
    out
}

// ── Backward kernels (f64 throughout) ───────────────────────────────────────

fn fc_backward(
    weight: &Tensor,
    x: &[f32],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let out_dim = weight.shape()[0];
    let in_dim = weight.shape()[1];
    let w = weight.data();
    let mut wgrad = vec![0.0f64; out_dim * in_dim];
    let mut bgrad = vec![0.0f64; out_dim];
    let mut xgrad = vec![0.0f64; in_dim];
    for i in 0..out_dim {
        let gi = g[i];
        bgrad[i] = gi;
        let wrow = &w[i * in_dim..(i + 1) * in_dim];
        let grow = &mut wgrad[i * in_dim..(i + 1) * in_dim];
        for k in 0..in_dim {
            grow[k] = gi * x[k] as f64;
        }
        for k in 0..in_dim {
            xgrad[k] += gi * wrow[k] as f64;
        }
    }
    (wgrad, bgrad, xgrad)
}

fn conv2d_backward(
    weight: &Tensor,
    x: &[f32],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = conv_dims(weight, in_shape, stride, padding);
    let wd = weight.data();
    let mut wgrad = vec![0.0f64; wd.len()];
    let mut bgrad = vec![0.0f64; d.co];
    let mut xgrad = vec![0.0f64; x.len()];
    for oc in 0..d.co {
        let mut bacc = 0.0f64;
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let gv = g[(oc * d.ho + oy) * d.wo + ox];
                bacc += gv;
                if gv == 0.0 {
                    continue;
                }
                for ic in 0..d.ci {
                    for ky in 0..d.kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            let widx = ((oc * d.ci + ic) * d.kh + ky) * d.kw + kx;
                            let xidx = (ic * d.h + iy as usize) * d.w + ix as usize;
                            wgrad[widx] += gv * x[xidx] as f64;
                            xgrad[xidx] += gv * wd[widx] as f64;
                        }
                    }
                }
            }
        }
        bgrad[oc] = bacc;
    }
    (wgrad, bgrad, xgrad)
}

fn deconv2d_backward(
    weight: &Tensor,
    x: &[f32],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = deconv_dims(weight, in_shape, stride, padding);
    let wd = weight.data();
    let mut wgrad = vec![0.0f64; wd.len()];
    let mut bgrad = vec![0.0f64; d.co];
    let mut xgrad = vec![0.0f64; x.len()];
    // Walk input-major: each input pixel scatters onto a kh×kw patch of the
    // output, which is a gather over `g` from the input's point of view.
    for ic in 0..d.ci {
        for iy in 0..d.h {
            for ix in 0..d.w {
                let xv = x[(ic * d.h + iy) * d.w + ix] as f64;
                let mut xacc = 0.0f64;
                for oc in 0..d.co {
                    for ky in 0..d.kh {
                        let oy = (iy * stride + ky) as isize - padding as isize;
                        if oy < 0 || oy >= d.ho as isize {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ox = (ix * stride + kx) as isize - padding as isize;
                            if ox < 0 || ox >= d.wo as isize {
                                continue;
                            }
                            let gv = g[(oc * d.ho + oy as usize) * d.wo + ox as usize];
                            let widx = ((ic * d.co + oc) * d.kh + ky) * d.kw + kx;
                            wgrad[widx] += gv * xv;
                            xacc += gv * wd[widx] as f64;
                        }
                    }
                }
                xgrad[(ic * d.h + iy) * d.w + ix] = xacc;
            }
        }
    }
    for oc in 0..d.co {
        let mut bacc = 0.0f64;
        for v in &g[oc * d.ho * d.wo..(oc + 1) * d.ho * d.wo] {
            bacc += v;
        }
        bgrad[oc] = bacc;
    }
    (wgrad, bgrad, xgrad)
}

// ── Forward-mode tangent kernels (f64) ──────────────────────────────────────

fn fc_jvp(weight: &Tensor, t: &Tangent) -> Tangent {
    let out_dim = weight.shape()[0];
    let in_dim = weight.shape()[1];
    let cols = t.cols;
    let w = weight.data();
    let mut out = vec![0.0f64; out_dim * cols];
    for i in 0..out_dim {
        let wrow = &w[i * in_dim..(i + 1) * in_dim];
        let orow = &mut out[i * cols..(i + 1) * cols];
        for k in 0..in_dim {
            let wv = wrow[k] as f64;
            let trow = &t.data[k * cols..(k + 1) * cols];
            for c in 0..cols {
                orow[c] += wv * trow[c];
            }
        }
    }
    Tangent { cols, data: out }
}

fn conv2d_jvp(
    weight: &Tensor,
    t: &Tangent,
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tangent {
    let d = conv_dims(weight, in_shape, stride, padding);
    let cols = t.cols;
    let wd = weight.data();
    let mut out = vec![0.0f64; d.co * d.ho * d.wo * cols];
    for oc in 0..d.co {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let orow =
                    &mut out[((oc * d.ho + oy) * d.wo + ox) * cols..((oc * d.ho + oy) * d.wo + ox + 1) * cols];
                for ic in 0..d.ci {
                    for ky in 0..d.kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            let wv = wd[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx] as f64;
                            let tidx = ((ic * d.h + iy as usize) * d.w + ix as usize) * cols;
                            let trow = &t.data[tidx..tidx + cols];
                            for c in 0..cols {
                                orow[c] += wv * trow[c];
                            }
                        }
                    }
                }
            }
        }
    }
    Tangent { cols, data: out }
}

fn deconv2d_jvp(
    weight: &Tensor,
    t: &Tangent,
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tangent {
    let d = deconv_dims(weight, in_shape, stride, padding);
    let cols = t.cols;
    let wd = weight.data();
    let mut out = vec![0.0f64; d.co * d.ho * d.wo * cols];
    for oc in 0..d.co {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let obase = ((oc * d.ho + oy) * d.wo + ox) * cols;
                for ic in 0..d.ci {
                    for ky in 0..d.kh {
                        let ny = oy as isize + padding as isize - ky as isize;
                        if ny < 0 || ny % stride as isize != 0 {
                            continue;
                        }
                        let iy = (ny / stride as isize) as usize;
                        if iy >= d.h {
                            continue;
                        }
                        for kx in 0..d.kw {
                            let nx = ox as isize + padding as isize - kx as isize;
                            if nx < 0 || nx % stride as isize != 0 {
                                continue;
                            }
                            let ix = (nx / stride as isize) as usize;
                            if ix >= d.w {
                                continue;
                            }
                            let wv = wd[((ic * d.co + oc) * d.kh + ky) * d.kw + kx] as f64;
                            let tidx = ((ic * d.h + iy) * d.w + ix) * cols;
                            for c in 0..cols {
                                out[obase + c] += wv * t.data[tidx + c];
                            }
                        }
                    }
                }
            }
        }
    }
    Tangent { cols, data: out }
}

// ── Layer dispatch ───────────────────────────────────────────────────────────

impl Layer {
    /// Evaluation-mode forward pass; dropout is the identity.
    pub(crate) fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let data = match self {
            Layer::FullyConnected { weight, bias } => fc_forward(weight, bias, input.data()),
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => conv2d_forward(weight, bias, input.data(), input.shape(), *stride, *padding),
            Layer::ConvTranspose2d {
                weight,
                bias,
                stride,
                padding,
            } => deconv2d_forward(weight, bias, input.data(), input.shape(), *stride, *padding),
            Layer::Relu => input.data().iter().map(|&v| v.max(0.0)).collect(),
            Layer::Reshape { .. } | Layer::Dropout { .. } => input.data().to_vec(),
        };
        Tensor::new(out_shape, data)
    }

    /// Train-mode forward pass: returns the output plus the cache entry the
    /// matching backward pass will consume. Dropout draws one `f32` per
    /// element in row-major order from `rng`.
    pub(crate) fn forward_train(
        &self,
        input: &Tensor,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Dropout { p } => {
                let out_shape = self.output_shape(input.shape())?;
                let scale = dropout_keep_scale(*p);
                let mask: Vec<f32> = (0..input.len())
                    .map(|_| if rng.gen::<f32>() < *p { 0.0 } else { scale })
                    .collect();
                let data = input
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| v * m)
                    .collect();
                Ok((
                    Tensor::new(out_shape, data)?,
                    LayerCache {
                        input: input.clone(),
                        mask: Some(mask),
                    },
                ))
            }
            _ => {
                let out = self.forward_eval(input)?;
                Ok((
                    out,
                    LayerCache {
                        input: input.clone(),
                        mask: None,
                    },
                ))
            }
        }
    }

    /// Backward pass. `g` is the upstream gradient in output layout; returns
    /// parameter gradients (weight, bias) when the layer has parameters, plus
    /// the gradient with respect to the layer input.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        g: &[f64],
    ) -> (Option<(Vec<f64>, Vec<f64>)>, Vec<f64>) {
        let x = cache.input.data();
        match self {
            Layer::FullyConnected { weight, .. } => {
                let (wg, bg, xg) = fc_backward(weight, x, g);
                (Some((wg, bg)), xg)
            }
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let (wg, bg, xg) =
                    conv2d_backward(weight, x, cache.input.shape(), *stride, *padding, g);
                (Some((wg, bg)), xg)
            }
            Layer::ConvTranspose2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let (wg, bg, xg) =
                    deconv2d_backward(weight, x, cache.input.shape(), *stride, *padding, g);
                (Some((wg, bg)), xg)
            }
            Layer::Relu => (
                None,
                x.iter()
                    .zip(g)
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
            ),
            Layer::Reshape { .. } => (None, g.to_vec()),
            Layer::Dropout { .. } => {
                let mask = cache.mask.as_ref().expect("dropout cache carries its mask");
                (
                    None,
                    g.iter().zip(mask).map(|(&gv, &m)| gv * m as f64).collect(),
                )
            }
        }
    }

    /// Push a tangent bundle through the layer's linearization at `input`
    /// (the cached forward activation feeding this layer).
    pub(crate) fn jvp(&self, input: &Tensor, t: &Tangent) -> Tangent {
        match self {
            Layer::FullyConnected { weight, .. } => fc_jvp(weight, t),
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => conv2d_jvp(weight, t, input.shape(), *stride, *padding),
            Layer::ConvTranspose2d {
                weight,
                stride,
                padding,
                ..
            } => deconv2d_jvp(weight, t, input.shape(), *stride, *padding),
            Layer::Relu => {
                let cols = t.cols;
                let mut data = t.data.clone();
                for (e, &xv) in input.data().iter().enumerate() {
                    if xv <= 0.0 {
                        for c in 0..cols {
                            data[e * cols + c] = 0.0;
                        }
                    }
                }
                Tangent { cols, data }
            }
            // Eval-mode dropout is the identity; train mode is rejected
            // before tangents are ever pushed.
            Layer::Reshape { .. } | Layer::Dropout { .. } => t.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let l = Layer::relu();
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let y = l.forward_eval(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn fc_identity_passes_input_through() {
        let mut w = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let l = Layer::FullyConnected {
            weight: w,
            bias: Tensor::zeros(vec![3]),
        };
        let x = Tensor::from_vec(vec![0.5, -1.25, 3.0]);
        let y = l.forward_eval(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_shapes_follow_the_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Layer::conv2d(3, 8, 3, 2, 1, &mut rng);
        assert_eq!(conv.output_shape(&[3, 64, 64]).unwrap(), vec![8, 32, 32]);
        let deconv = Layer::conv_transpose2d(8, 4, 4, 2, 1, &mut rng);
        assert_eq!(deconv.output_shape(&[8, 4, 4]).unwrap(), vec![4, 8, 8]);
        // A stride-2 k=4 p=1 transpose-conv exactly doubles resolution.
        assert_eq!(deconv.output_shape(&[8, 32, 32]).unwrap(), vec![4, 64, 64]);
    }

    #[test]
    fn shape_errors_are_reported_not_panicked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Layer::conv2d(3, 8, 3, 1, 0, &mut rng);
        assert!(conv.output_shape(&[4, 8, 8]).is_err());
        let fc = Layer::fully_connected(4, 2, &mut rng);
        assert!(fc.output_shape(&[5]).is_err());
    }

    #[test]
    fn dropout_train_zeroes_and_rescales() {
        let l = Layer::dropout(0.5);
        let x = Tensor::from_vec(vec![1.0; 1000]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, cache) = l.forward_train(&x, &mut rng).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        // Survivors are scaled by 2, everything else is zero.
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!((400..600).contains(&kept), "kept {kept} of 1000 at p=0.5");
        assert!(cache.mask.is_some());
        // Eval mode is the identity.
        let ye = l.forward_eval(&x).unwrap();
        assert_eq!(ye.data(), x.data());
    }

    #[test]
    fn random_shape_algebra_matches_actual_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let ci = rng.gen_range(1..4usize);
            let co = rng.gen_range(1..4usize);
            let k = rng.gen_range(1..4usize);
            let stride = rng.gen_range(1..3usize);
            let padding = rng.gen_range(0..k);
            let h = rng.gen_range(k..9usize);
            let w = rng.gen_range(k..9usize);
            let x = Tensor::new(
                vec![ci, h, w],
                (0..ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let conv = Layer::conv2d(ci, co, k, stride, padding, &mut rng);
            let y = conv.forward_eval(&x).unwrap();
            assert_eq!(y.shape(), conv.output_shape(x.shape()).unwrap().as_slice());
            let deconv = Layer::conv_transpose2d(ci, co, k, stride, padding.min((k - 1) / 2), &mut rng);
            let y = deconv.forward_eval(&x).unwrap();
            assert_eq!(
                y.shape(),
                deconv.output_shape(x.shape()).unwrap().as_slice()
            );
        }
    }
}
