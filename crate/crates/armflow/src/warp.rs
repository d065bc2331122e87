//! Differentiable backward warping with a bilinear kernel.
//!
//! `out(p) = reference(p + flow(p))`, sampled bilinearly with clamp-to-edge
//! semantics: coordinates outside the frame read the nearest border pixel and
//! contribute zero gradient to the flow along the clamped axis. Values are
//! `f32` at the interface with all interior arithmetic in `f64`, matching the
//! network engine's precision convention.
//!
//! Flow tensors are laid out [2, H, W]: channel 0 holds dx (columns), channel
//! 1 holds dy (rows). Images are [C, H, W].

use crate::error::{Error, Result};
use ftnn::Tensor;

/// One bilinear tap: the four corner indices and weights for a sample at
/// (x, y), plus the spatial derivatives of the sampled value's weights.
struct Tap {
    /// (index, weight) for the four corners, weights summing to 1.
    corners: [(usize, f64); 4],
    /// d(sample)/dx as corner-value coefficients, zero when x-clamped.
    dx_coef: [f64; 4],
    dy_coef: [f64; 4],
}

fn tap(h: usize, w: usize, x: f64, y: f64) -> Tap {
    let clamped_x = x < 0.0 || x > (w - 1) as f64;
    let clamped_y = y < 0.0 || y > (h - 1) as f64;
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w - 1);
    let y0 = (yc.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let idx = |yy: usize, xx: usize| yy * w + xx;
    let corners = [
        (idx(y0, x0), (1.0 - fx) * (1.0 - fy)),
        (idx(y0, x1), fx * (1.0 - fy)),
        (idx(y1, x0), (1.0 - fx) * fy),
        (idx(y1, x1), fx * fy),
    ];
    // d value / dx = (1−fy)(v01 − v00) + fy(v11 − v10), expressed per corner.
    let gx = if clamped_x { 0.0 } else { 1.0 };
    let gy = if clamped_y { 0.0 } else { 1.0 };
    let dx_coef = [-(1.0 - fy) * gx, (1.0 - fy) * gx, -fy * gx, fy * gx];
    let dy_coef = [-(1.0 - fx) * gy, -fx * gy, (1.0 - fx) * gy, fx * gy];
    Tap { corners, dx_coef, dy_coef }
}

fn check_pair(reference: &Tensor, flow: &Tensor) -> Result<(usize, usize, usize)> {
    if reference.rank() != 3 {
        return Err(Error::Shape(format!("reference must be [C,H,W], got {:?}", reference.shape())));
    }
    let (c, h, w) = (reference.shape()[0], reference.shape()[1], reference.shape()[2]);
    if flow.shape() != [2, h, w] {
        return Err(Error::Shape(format!(
            "flow must be [2,{h},{w}], got {:?}",
            flow.shape()
        )));
    }
    Ok((c, h, w))
}

/// Backward warp of `reference` by `flow`.
pub fn warp(reference: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_pair(reference, flow)?;
    let rd = reference.data();
    let fd = flow.data();
    let mut out = vec![0.0f32; c * h * w];
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let t = tap(h, w, col as f64 + fd[p] as f64, row as f64 + fd[h * w + p] as f64);
            for ch in 0..c {
                let base = ch * h * w;
                let mut acc = 0.0f64;
                for (i, wt) in t.corners {
                    acc += rd[base + i] as f64 * wt;
                }
                out[base + p] = acc as f32;
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], out).expect("sized"))
}

/// Exact gradients of the bilinear sampler.
///
/// Returns (reference_grad, flow_grad) for upstream `output_grad`; the flow
/// gradient is zero along any axis where the sample was clamped at the
/// border.
pub fn warp_backward(
    reference: &Tensor,
    flow: &Tensor,
    output_grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = check_pair(reference, flow)?;
    if output_grad.shape() != reference.shape() {
        return Err(Error::Shape("output_grad must match the image shape".into()));
    }
    let rd = reference.data();
    let fd = flow.data();
    let gd = output_grad.data();
    let mut ref_grad = vec![0.0f64; c * h * w];
    let mut flow_grad = vec![0.0f64; 2 * h * w];
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let t = tap(h, w, col as f64 + fd[p] as f64, row as f64 + fd[h * w + p] as f64);
            let mut gx = 0.0f64;
            let mut gy = 0.0f64;
            for ch in 0..c {
                let base = ch * h * w;
                let g = gd[base + p] as f64;
                for (k, (i, wt)) in t.corners.iter().enumerate() {
                    ref_grad[base + i] += g * wt;
                    gx += g * t.dx_coef[k] * rd[base + i] as f64;
                    gy += g * t.dy_coef[k] * rd[base + i] as f64;
                }
            }
            flow_grad[p] = gx;
            flow_grad[h * w + p] = gy;
        }
    }
    let ref_grad: Vec<f32> = ref_grad.into_iter().map(|v| v as f32).collect();
    let flow_grad: Vec<f32> = flow_grad.into_iter().map(|v| v as f32).collect();
    Ok((
        Tensor::new(vec![c, h, w], ref_grad).expect("sized"),
        Tensor::new(vec![2, h, w], flow_grad).expect("sized"),
    ))
}

/// Forward warp plus the spatial derivatives of every output value with
/// respect to its own pixel's flow components, in `f64`.
///
/// Both gradient buffers are laid out [C, H, W]: entry (ch, p) is
/// ∂out(ch, p)/∂flow_x(p) (resp. flow_y). Used to assemble full observation
/// Jacobians without re-walking the sampler.
pub fn warp_with_coord_grads(
    reference: &Tensor,
    flow: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (c, h, w) = check_pair(reference, flow)?;
    let rd = reference.data();
    let fd = flow.data();
    let mut out = vec![0.0f32; c * h * w];
    let mut dx = vec![0.0f64; c * h * w];
    let mut dy = vec![0.0f64; c * h * w];
    for row in 0..h {
        for col in 0..w {
            let p = row * w + col;
            let t = tap(h, w, col as f64 + fd[p] as f64, row as f64 + fd[h * w + p] as f64);
            for ch in 0..c {
                let base = ch * h * w;
                let mut acc = 0.0f64;
                let mut gx = 0.0f64;
                let mut gy = 0.0f64;
                for (k, (i, wt)) in t.corners.iter().enumerate() {
                    let v = rd[base + i] as f64;
                    acc += v * wt;
                    gx += v * t.dx_coef[k];
                    gy += v * t.dy_coef[k];
                }
                out[base + p] = acc as f32;
                dx[base + p] = gx;
                dy[base + p] = gy;
            }
        }
    }
    Ok((Tensor::new(vec![c, h, w], out).expect("sized"), dx, dy))
}

// ---------------------------------------------------------------------------
