//! Slow `f64` reference implementations and finite-difference helpers.
//!
//! Everything here exists to check the engine, not to run it: the reference
//! kernels recompute each layer in plain double precision with naive loops,
//! so the validation suite can compare analytic gradients against central
//! differences of an independent code path. Production code must never call
//! into this module.

use rand::Rng;

use crate::error::Result;
use crate::layer::{dropout_keep_scale, Layer};
use crate::network::{Mode, Network};
use crate::tensor::Tensor;

/// `y = W x + b` with `W` stored row-major `[out, in]`.
pub fn fc_f64(weight: &Tensor, bias: &Tensor, x: &[f64]) -> Vec<f64> {
    let out_dim = weight.shape()[0];
    let in_dim = weight.shape()[1];
    assert_eq!(x.len(), in_dim);
    let w = weight.data();
    let b = bias.data();
    (0..out_dim)
        .map(|i| {
            let mut acc = b[i] as f64;
            for k in 0..in_dim {
                acc += w[i * in_dim + k] as f64 * x[k];
            }
            acc
        })
        .collect()
}

pub fn relu_f64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Strided zero-padded cross-correlation; weight `[co, ci, kh, kw]`,
/// input `[ci, h, w]`, output `[co, ho, wo]`.
pub fn conv2d_f64(
    weight: &Tensor,
    bias: &Tensor,
    x: &[f64],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (ci, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (co, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    assert_eq!(weight.shape()[1], ci);
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f64; co * ho * wo];
    for oc in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bd[oc] as f64;
                for ic in 0..ci {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wv = wd[((oc * ci + ic) * kh + ky) * kw + kx] as f64;
                            acc += wv * x[(ic * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, vec![co, ho, wo])
}

/// Transposed convolution; weight `[ci, co, kh, kw]`, input `[ci, h, w]`,
/// output `[co, (h-1)*stride - 2*padding + kh, ...]`.
pub fn conv_transpose2d_f64(
    weight: &Tensor,
    bias: &Tensor,
    x: &[f64],
    in_shape: &[usize],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (ci, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (co, kh, kw) = (weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    assert_eq!(weight.shape()[0], ci);
    let ho = (h - 1) * stride + kh - 2 * padding;
    let wo = (w - 1) * stride + kw - 2 * padding;
    let wd = weight.data();
    let bd = bias.data();
    let mut out = vec![0.0f64; co * ho * wo];
    for oc in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bd[oc] as f64;
                for ic in 0..ci {
                    for ky in 0..kh {
                        let ny = oy as isize + padding as isize - ky as isize;
                        if ny < 0 || ny % stride as isize != 0 {
                            continue;
                        }
                        let iy = (ny / stride as isize) as usize;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let nx = ox as isize + padding as isize - kx as isize;
                            if nx < 0 || nx % stride as isize != 0 {
                                continue;
                            }
                            let ix = (nx / stride as isize) as usize;
                            if ix >= w {
                                continue;
                            }
                            let wv = wd[((ic * co + oc) * kh + ky) * kw + kx] as f64;
                            acc += wv * x[(ic * h + iy) * w + ix];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, vec![co, ho, wo])
}

/// Replays the engine's dropout mask convention: one `f32` draw per element
/// in row-major order, zeroed when the draw falls below `p`, surviving
/// entries scaled by `1/(1-p)`.
pub fn dropout_mask_f64<R: Rng>(len: usize, p: f32, rng: &mut R) -> Vec<f64> {
    let scale = dropout_keep_scale(p) as f64;
    (0..len)
        .map(|_| {
            if rng.gen::<f32>() < p {
                0.0
            } else {
                scale
            }
        })
        .collect()
}

/// Whole-network forward pass in `f64`. In train mode, `rng` must be a clone
/// of the generator handed to the engine so dropout masks replay identically.
pub fn net_forward_f64<R: Rng>(
    net: &Network,
    input: &[f64],
    in_shape: &[usize],
    mode: Mode,
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    let mut cur = input.to_vec();
    let mut shape = in_shape.to_vec();
    let mut rng = rng;
    for layer in net.layers() {
        match layer {
            Layer::FullyConnected { weight, bias } => {
                cur = fc_f64(weight, bias, &cur);
                shape = vec![weight.shape()[0]];
            }
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let (o, s) = conv2d_f64(weight, bias, &cur, &shape, *stride, *padding);
                cur = o;
                shape = s;
            }
            Layer::ConvTranspose2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let (o, s) = conv_transpose2d_f64(weight, bias, &cur, &shape, *stride, *padding);
                cur = o;
                shape = s;
            }
            Layer::Relu => cur = relu_f64(&cur),
            Layer::Reshape { shape: to } => shape = to.clone(),
            Layer::Dropout { p } => {
                if matches!(mode, Mode::Train) {
                    let r = rng
                        .as_deref_mut()
                        .expect("train-mode oracle forward needs the replay rng");
                    let mask = dropout_mask_f64(cur.len(), *p, r);
                    for (v, m) in cur.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                }
            }
        }
    }
    Ok(cur)
}

/// Sum of squared differences, the pixel term of the reconstruction losses.
pub fn sse_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `λ·Σ θ²` over every parameter of the network.
pub fn weight_penalty_f64(net: &Network, lambda: f64) -> f64 {
    let mut acc = 0.0;
    for (_, t) in net.parameters() {
        for &v in t.data() {
            acc += v as f64 * v as f64;
        }
    }
    lambda * acc
}

/// Central difference through a scalar function of one `f32` parameter slot.
///
/// The step is snapped to the actually representable perturbation so the
/// quotient divides by the exact distance between the two probe points.
pub fn central_diff<F: FnMut(f32) -> f64>(mut f: F, x0: f32, h: f64) -> f64 {
    let xp = (x0 as f64 + h) as f32;
    let xm = (x0 as f64 - h) as f32;
    (f(xp) - f(xm)) / (xp as f64 - xm as f64)
}

/// Central difference plus the relative disagreement of the two one-sided
/// quotients around `x0`.
///
/// For a function that is smooth across `[x0−h, x0+h]` the forward and
/// backward quotients agree to O(h); when the interval straddles a relu kink
/// they differ by O(1) and the central quotient estimates nothing. Callers
/// probing nets with relus use the disagreement to recognize and skip such
/// probes instead of mistaking them for gradient bugs.
pub fn central_diff_sided<F: FnMut(f32) -> f64>(mut f: F, x0: f32, h: f64) -> (f64, f64) {
    let xp = (x0 as f64 + h) as f32;
    let xm = (x0 as f64 - h) as f32;
    let (fp, f0, fm) = (f(xp), f(x0), f(xm));
    let dp = (fp - f0) / (xp as f64 - x0 as f64);
    let dm = (f0 - fm) / (x0 as f64 - xm as f64);
    let central = (fp - fm) / (xp as f64 - xm as f64);
    let disagreement = (dp - dm).abs() / dp.abs().max(dm.abs()).max(1e-9);
    (central, disagreement)
}

/// Relative error with a floor: tiny entries are judged against `floor`
/// instead of against themselves, so near-zero gradients do not turn
/// round-off into spurious relative blow-ups.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest floored relative error between an analytic gradient slice and its
/// finite-difference counterpart; the floor is scaled to the gradient's own
/// magnitude so the tolerance reads as "relative to this layer's gradient".
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let gmax = analytic
        .iter()
        .chain(fd.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * gmax).max(1e-9);
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| rel_err(a, b, floor))
        .fold(0.0, f64::max)
}

/// Jacobian assembled the slow way: one backward pass per output row with a
/// one-hot upstream gradient. This is the reference `net_jacobian` must match
/// bit for bit.
pub fn one_hot_jacobian(net: &mut Network, input: &Tensor) -> Result<Tensor> {
    assert!(
        !net.layers().iter().any(|l| matches!(l, Layer::Dropout { .. })),
        "one-hot assembly is defined for deterministic nets"
    );
    let out_shape = net.output_shape(input.shape())?;
    let m: usize = out_shape.iter().product();
    let n = input.len();
    let mut rows = vec![0.0f32; m * n];
    for i in 0..m {
        // Dropout-free nets never touch the rng; any generator will do.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        net.forward_train(input, &mut rng)?;
        let mut seed = Tensor::zeros(out_shape.clone());
        seed.data_mut()[i] = 1.0;
        let (_, input_grad) = net.backward(&seed)?;
        rows[i * n..(i + 1) * n].copy_from_slice(input_grad.data());
    }
    Tensor::new(vec![m, n], rows)
}
