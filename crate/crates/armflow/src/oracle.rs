//! Slow, independent reference implementations used by the test suites.
//!
//! Everything here trades speed for obviousness: linear scans instead of
//! trees, explicit Gauss–Jordan inversion instead of factorizations, `f64`
//! everywhere. Production code must agree with these within the documented
//! tolerances (exactly, for the k-NN queries). None of this module belongs in
//! a hot path.

use crate::error::{Error, Result};
use ftnn::{Mode, Network};

// ---------------------------------------------------------------------------
// Brute-force nearest neighbors
// ---------------------------------------------------------------------------

/// Squared Euclidean distance, accumulated in ascending dimension order.
///
/// The KD-tree computes candidate distances with this exact function so that
/// tree results and linear-scan results are bit-identical, not merely close.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for d in 0..a.len() {
        let diff = a[d] - b[d];
        acc += diff * diff;
    }
    acc
}

/// Linear-scan k-nearest-neighbors with the same contract as the tree:
/// ascending distance, ties broken by smaller sample id, and (optionally) at
/// most one result per trajectory, chosen greedily by distance. Records with
/// no trajectory id never block each other.
pub fn brute_force_knn(
    keys: &[Vec<f64>],
    ids: &[u32],
    trajs: &[Option<u32>],
    q: &[f64],
    k: usize,
    trajectory_disjoint: bool,
) -> Result<Vec<(u32, f64)>> {
    assert!(keys.len() == ids.len() && keys.len() == trajs.len());
    let mut order: Vec<usize> = (0..keys.len()).collect();
    let d2: Vec<f64> = keys.iter().map(|key| dist2(key, q)).collect();
    order.sort_by(|&a, &b| {
        d2[a]
            .partial_cmp(&d2[b])
            .unwrap()
            .then(ids[a].cmp(&ids[b]))
    });

    let mut picked = Vec::with_capacity(k);
    let mut used_trajs = Vec::new();
    for i in order {
        if trajectory_disjoint {
            if let Some(t) = trajs[i] {
                if used_trajs.contains(&t) {
                    continue;
                }
                used_trajs.push(t);
            }
        }
        picked.push((ids[i], d2[i].sqrt()));
        if picked.len() == k {
            return Ok(picked);
        }
    }
    Err(Error::Dataset(format!(
        "k={} exceeds the {} eligible candidates",
        k,
        picked.len()
    )))
}

// ---------------------------------------------------------------------------
// Dense linear algebra (row-major Vec<f64>)
// ---------------------------------------------------------------------------

/// r×c zero matrix.
pub fn zeros(r: usize, c: usize) -> Vec<f64> {
    vec![0.0; r * c]
}

/// n×n identity.
pub fn eye(n: usize) -> Vec<f64> {
    let mut m = zeros(n, n);
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// (r×k)·(k×c) product.
pub fn mat_mul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    assert_eq!(a.len(), r * k);
    assert_eq!(b.len(), k * c);
    let mut out = zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * c + j];
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// Transpose of an r×c matrix.
pub fn mat_t(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub fn mat_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mat_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Gauss–Jordan inverse with partial pivoting. Returns an error on a pivot
/// smaller than 1e-12, which is plenty for the well-conditioned test systems
/// this oracle exists for.
pub fn gauss_jordan_inv(a: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    let mut aug = vec![0.0; n * 2 * n];
    for i in 0..n {
        for j in 0..n {
            aug[i * 2 * n + j] = a[i * n + j];
        }
        aug[i * 2 * n + n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if aug[row * 2 * n + col].abs() > aug[pivot * 2 * n + col].abs() {
                pivot = row;
            }
        }
        let pv = aug[pivot * 2 * n + col];
        if pv.abs() < 1e-12 {
            return Err(Error::Numerical("singular matrix in oracle inverse".into()));
        }
        if pivot != col {
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, pivot * 2 * n + j);
            }
        }
        let inv_pv = 1.0 / pv;
        for j in 0..2 * n {
            aug[col * 2 * n + j] *= inv_pv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[row * 2 * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                aug[row * 2 * n + j] -= factor * aug[col * 2 * n + j];
            }
        }
    }
    let mut inv = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inv[i * n + j] = aug[i * 2 * n + n + j];
        }
    }
    Ok(inv)
}

// ---------------------------------------------------------------------------
// Textbook Kalman filter
// ---------------------------------------------------------------------------

/// One dense textbook correction: K = ΣHᵀ(HΣHᵀ+R)⁻¹, μ += K(y−Hμ),
/// Σ ← Σ − KHΣ, then re-symmetrized. Dimensions: μ is s, y is m, H is m×s.
pub fn dense_correct(
    mu: &[f64],
    sigma: &[f64],
    h: &[f64],
    r_mat: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = mu.len();
    let m = y.len();
    assert_eq!(h.len(), m * s);
    assert_eq!(r_mat.len(), m * m);
    let ht = mat_t(h, m, s);
    let sigma_ht = mat_mul(sigma, &ht, s, s, m);
    let innov_cov = mat_add(&mat_mul(h, &sigma_ht, m, s, m), r_mat);
    let innov_inv = gauss_jordan_inv(&innov_cov, m)?;
    let gain = mat_mul(&sigma_ht, &innov_inv, s, m, m);

    let pred_y = mat_mul(h, mu, m, s, 1);
    let resid: Vec<f64> = y.iter().zip(&pred_y).map(|(a, b)| a - b).collect();
    let delta = mat_mul(&gain, &resid, s, m, 1);
    let mu_new = mat_add(mu, &delta);

    let kh = mat_mul(&gain, h, s, m, s);
    let khs = mat_mul(&kh, sigma, s, s, s);
    let mut sig_new = mat_sub(sigma, &khs);
    for i in 0..s {
        for j in 0..i {
            let avg = 0.5 * (sig_new[i * s + j] + sig_new[j * s + i]);
            sig_new[i * s + j] = avg;
            sig_new[j * s + i] = avg;
        }
    }
    Ok((mu_new, sig_new))
}

/// Complete dense filter over a linear-Gaussian system, for step-by-step
/// comparison against the production tracker.
pub struct DenseKalman {
    pub f: Vec<f64>,
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dim_state: usize,
    pub dim_obs: usize,
}

impl DenseKalman {
    pub fn predict(&mut self) {
        let s = self.dim_state;
        self.mu = mat_mul(&self.f, &self.mu, s, s, 1);
        let fs = mat_mul(&self.f, &self.sigma, s, s, s);
        let ft = mat_t(&self.f, s, s);
        self.sigma = mat_add(&mat_mul(&fs, &ft, s, s, s), &self.q);
    }

    pub fn correct(&mut self, y: &[f64]) -> Result<()> {
        assert_eq!(y.len(), self.dim_obs);
        let (mu, sigma) = dense_correct(&self.mu, &self.sigma, &self.h, &self.r, y)?;
        self.mu = mu;
        self.sigma = sigma;
        Ok(())
    }

    pub fn step(&mut self, y: &[f64]) -> Result<()> {
        self.predict();
        self.correct(y)
    }
}

/// Augmented first-order transition matrix [[(1+Δt)I, −Δt·I], [I, 0]] over a
/// doubled state [x_t; x_{t−1}], shared by the tracker and its oracle tests.
pub fn augmented_transition(n: usize, dt: f64) -> Vec<f64> {
    let s = 2 * n;
    let mut f = zeros(s, s);
    for i in 0..n {
        f[i * s + i] = 1.0 + dt;
        f[i * s + n + i] = -dt;
        f[(n + i) * s + i] = 1.0;
    }
    f
}

// ---------------------------------------------------------------------------
// f64 image pipeline references
// ---------------------------------------------------------------------------

/// Bilinear sample of channel `ch` at (x, y) with clamp-to-edge semantics,
/// mirroring the production sampler in `f64`. Pixel (col, row) sits at
/// coordinates (col, row) — no half-pixel offset.
pub fn bilinear_f64(img: &[f64], c: usize, h: usize, w: usize, ch: usize, x: f64, y: f64) -> f64 {
    assert_eq!(img.len(), c * h * w);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w - 1);
    let y0 = (yc.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let at = |yy: usize, xx: usize| img[ch * h * w + yy * w + xx];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Backward warp in `f64`: out(p) = bilinear(reference, p + flow(p)).
/// `flow` is laid out [2, h, w] with channel 0 = dx, channel 1 = dy.
pub fn warp_f64(reference: &[f64], flow: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    assert_eq!(flow.len(), 2 * h * w);
    let mut out = vec![0.0; c * h * w];
    for row in 0..h {
        for col in 0..w {
            let dx = flow[row * w + col];
            let dy = flow[h * w + row * w + col];
            let sx = col as f64 + dx;
            let sy = row as f64 + dy;
            for ch in 0..c {
                out[ch * h * w + row * w + col] = bilinear_f64(reference, c, h, w, ch, sx, sy);
            }
        }
    }
    out
}

/// Per-pixel softmax blend of k warped candidates weighted by their
/// confidence logits.
pub fn blend_f64(warped: &[Vec<f64>], conf: &[Vec<f64>], c: usize, h: usize, w: usize) -> Vec<f64> {
    let k = warped.len();
    assert_eq!(conf.len(), k);
    assert!(k >= 1);
    let mut out = vec![0.0; c * h * w];
    for p in 0..h * w {
        let mx = conf.iter().map(|cm| cm[p]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for cm in conf {
            z += (cm[p] - mx).exp();
        }
        for j in 0..k {
            let wgt = (conf[j][p] - mx).exp() / z;
            for ch in 0..c {
                out[ch * h * w + p] += wgt * warped[j][ch * h * w + p];
            }
        }
    }
    out
}

/// Splits a raw 3-channel branch output [3, h, w] into (flow [2,h,w],
/// confidence [h,w]) in `f64`.
pub fn split_branch_output(raw: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(raw.len(), 3 * h * w);
    (raw[..2 * h * w].to_vec(), raw[2 * h * w..].to_vec())
}

/// Full `f64` forward pass of the ensemble prediction: run the shared branch
/// on (x, x_r) for every reference, warp each reference image with its
/// predicted flow, blend with the per-pixel confidence softmax. References
/// are `(state, image)` pairs with images laid out [c, h, w].
pub fn knn_flow_forward_f64(
    branch: &Network,
    x: &[f64],
    refs: &[(Vec<f64>, Vec<f64>)],
    c: usize,
    h: usize,
    w: usize,
) -> Result<Vec<f64>> {
    let mut warped = Vec::with_capacity(refs.len());
    let mut confs = Vec::with_capacity(refs.len());
    for (xr, img) in refs {
        let mut input = x.to_vec();
        input.extend_from_slice(xr);
        let raw = ftnn::oracle::net_forward_f64::<rand::rngs::mock::StepRng>(
            branch,
            &input,
            &[input.len()],
            Mode::Eval,
            None,
        )?;
        let (flow, conf) = split_branch_output(&raw, h, w);
        warped.push(warp_f64(img, &flow, c, h, w));
        confs.push(conf);
    }
    Ok(blend_f64(&warped, &confs, c, h, w))
}

/// Single-reference training loss in `f64`: pixel SSE of the warped
/// reference against the target plus an L2 penalty over every parameter.
pub fn forward_loss_f64(
    branch: &Network,
    x: &[f64],
    ref_state: &[f64],
    ref_image: &[f64],
    target: &[f64],
    lambda: f64,
    c: usize,
    h: usize,
    w: usize,
) -> Result<f64> {
    let mut input = x.to_vec();
    input.extend_from_slice(ref_state);
    let raw = ftnn::oracle::net_forward_f64::<rand::rngs::mock::StepRng>(
        branch,
        &input,
        &[input.len()],
        Mode::Eval,
        None,
    )?;
    let (flow, _conf) = split_branch_output(&raw, h, w);
    let warped = warp_f64(ref_image, &flow, c, h, w);
    let sse = ftnn::oracle::sse_f64(&warped, target);
    Ok(sse + ftnn::oracle::weight_penalty_f64(branch, lambda))
}

// ---------------------------------------------------------------------------
// Subspace comparison
// ---------------------------------------------------------------------------

/// Principal angles (radians, ascending) between the column spans of two
/// column-orthonormal matrices, via the singular values of AᵀB.
pub fn principal_angles(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let prod = a.transpose() * b;
    let svd = prod.svd(false, false);
    let mut angles: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|p, q| p.partial_cmp(q).unwrap());
    angles
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_jordan_inverts_a_known_matrix() {
        let a = vec![4.0, 7.0, 2.0, 6.0];
        let inv = gauss_jordan_inv(&a, 2).unwrap();
        let prod = mat_mul(&a, &inv, 2, 2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 2 + j] - want).abs() < 1e-12);
            }
        }
        assert!(gauss_jordan_inv(&[1.0, 2.0, 2.0, 4.0], 2).is_err());
    }

    #[test]
    fn warp_f64_with_zero_flow_is_identity() {
        let img: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.1).collect();
        let flow = vec![0.0; 2 * 3 * 4];
        assert_eq!(warp_f64(&img, &flow, 2, 3, 4), img);
    }

    #[test]
    fn brute_force_disjoint_takes_one_per_trajectory() {
        let keys = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]];
        let ids = vec![0, 1, 2, 3];
        let trajs = vec![Some(7), Some(7), Some(7), Some(9)];
        let got = brute_force_knn(&keys, &ids, &trajs, &[0.0], 2, true).unwrap();
        assert_eq!(got[0].0, 0);
        assert_eq!(got[1].0, 3);
        // Unconstrained mode keeps all three close ones.
        let got = brute_force_knn(&keys, &ids, &trajs, &[0.0], 3, false).unwrap();
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn principal_angles_of_identical_spans_are_zero() {
        let a = nalgebra::DMatrix::from_columns(&[
            nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0]),
            nalgebra::DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ]);
        let angles = principal_angles(&a, &a);
        assert!(angles.iter().all(|&t| t.abs() < 1e-12));
    }
}
