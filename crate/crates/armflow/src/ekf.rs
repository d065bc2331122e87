//! Recursive state tracking with an extended Kalman filter.
//!
//! The filter runs on an augmented state [x_t; x_{t−1}] so a constant-velocity
//! transition stays linear, and corrects against whole images through a
//! learned forward model. Full image covariances are far too large to carry,
//! so sensor noise lives in a low-rank model: an orthonormal basis U of
//! dominant residual directions plus the noise variance along each. Every
//! innovation is projected through Uᵀ before touching the filter, which keeps
//! all dense algebra at rank r instead of the pixel count.

use crate::error::{Error, Result};
use crate::forward::{blend, blend_weights, split_flow_conf, BranchEval, KnnFlowModel};
use crate::sim::JointConfig;
use crate::warp;
use ftnn::{Mode, Network, Tensor};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

// ---------------------------------------------------------------------------
// Beliefs and dynamics
// ---------------------------------------------------------------------------

/// Gaussian belief over the augmented state [x_t; x_{t−1}].
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Prior centered on a (possibly offset) initial guess, duplicated into
    /// the history slot, with isotropic standard deviation `sigma` per angle.
    pub fn from_prior(x0: &[f64], sigma: f64) -> GaussianBelief {
        let n = x0.len();
        let mut mean = DVector::zeros(2 * n);
        for i in 0..n {
            mean[i] = x0[i];
            mean[n + i] = x0[i];
        }
        GaussianBelief { mean, cov: DMatrix::identity(2 * n, 2 * n) * sigma * sigma }
    }

    /// The current-state block x_t.
    pub fn current(&self) -> JointConfig {
        let n = self.mean.len() / 2;
        (0..n).map(|i| self.mean[i]).collect()
    }

    /// Per-angle variances of the current-state block.
    pub fn current_variances(&self) -> Vec<f64> {
        let n = self.mean.len() / 2;
        (0..n).map(|i| self.cov[(i, i)]).collect()
    }

    fn symmetrize(&mut self) {
        let t = self.cov.transpose();
        self.cov = (&self.cov + t) * 0.5;
    }
}

/// Constant-velocity dynamics on the augmented state:
/// x_{t+1} = x_t + Δt (x_t − x_{t−1}) plus isotropic process noise γ.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    pub dof: usize,
    pub dt: f64,
    pub gamma: f64,
}

impl TransitionModel {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dof;
        let mut f = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            f[(i, i)] = 1.0 + self.dt;
            f[(i, n + i)] = -self.dt;
            f[(n + i, i)] = 1.0;
        }
        f
    }

    pub fn process_noise(&self) -> DMatrix<f64> {
        DMatrix::identity(2 * self.dof, 2 * self.dof) * self.gamma
    }
}

/// Time-update: push the belief through the linear dynamics.
pub fn ekf_predict(belief: &GaussianBelief, trans: &TransitionModel) -> GaussianBelief {
    let f = trans.matrix();
    let mean = &f * &belief.mean;
    let cov = &f * &belief.cov * f.transpose() + trans.process_noise();
    let mut out = GaussianBelief { mean, cov };
    out.symmetrize();
    out
}

// ---------------------------------------------------------------------------
// Low-rank sensor noise
// ---------------------------------------------------------------------------

/// Low-rank sensor noise: an m×r orthonormal basis of residual directions
/// and the per-direction noise variances. Innovations are projected through
/// `basis`ᵀ, so the filter never forms an m×m covariance.
#[derive(Debug, Clone)]
pub struct SensorNoiseModel {
    pub basis: DMatrix<f64>,
    pub variances: DVector<f64>,
}

impl SensorNoiseModel {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Plain-text artifact: `m r` header, then one line per direction with
    /// its variance followed by the m basis entries. f64 values roundtrip
    /// exactly through the shortest-decimal formatting.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (m, r) = (self.obs_dim(), self.rank());
        let mut out = format!("{m} {r}\n");
        for j in 0..r {
            out.push_str(&format!("{}", self.variances[j]));
            for i in 0..m {
                out.push_str(&format!(" {}", self.basis[(i, j)]));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SensorNoiseModel> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingArtifact(format!("noise model {}", path.display())))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Dataset("empty noise model".into()))?;
        let mut it = header.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Dataset("bad noise model header".into()))
        };
        let m = parse(it.next())?;
        let r = parse(it.next())?;
        let mut basis = DMatrix::zeros(m, r);
        let mut variances = DVector::zeros(r);
        for j in 0..r {
            let line = lines
                .next()
                .ok_or_else(|| Error::Dataset(format!("noise model truncated at row {j}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset(format!("bad noise model value: {e}")))?;
            if vals.len() != m + 1 {
                return Err(Error::Dataset(format!(
                    "noise model row {j} has {} values, want {}",
                    vals.len(),
                    m + 1
                )));
            }
            variances[j] = vals[0];
            for i in 0..m {
                basis[(i, j)] = vals[i + 1];
            }
        }
        Ok(SensorNoiseModel { basis, variances })
    }
}

/// Estimates a rank-r noise model from raw model residuals o_i − g(x_i).
///
/// Works through the N×N Gram matrix DᵀD instead of the m×m outer product,
/// so the cost scales with the sample count, not the pixel count. The
/// directions are the top singular vectors of the residual matrix; the
/// variance along each is λ_j/(N−1). Residuals are taken as-is (no mean
/// removal): a bias in the forward model is sensor noise from the filter's
/// point of view.
pub fn estimate_sensor_noise(residuals: &[Vec<f64>], rank: usize) -> Result<SensorNoiseModel> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::Dataset("need at least two residuals".into()));
    }
    let m = residuals[0].len();
    if residuals.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("residuals differ in length".into()));
    }
    if rank == 0 || rank > n.min(m) {
        return Err(Error::Config(format!(
            "rank {rank} out of range for {n} residuals of dimension {m}"
        )));
    }
    let d = DMatrix::from_fn(m, n, |i, j| residuals[j][i]);
    let gram = d.transpose() * &d;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = eig.eigenvalues[order[0]].max(1.0);
    let mut basis = DMatrix::zeros(m, rank);
    let mut variances = DVector::zeros(rank);
    for (j, &oi) in order.iter().take(rank).enumerate() {
        let lambda = eig.eigenvalues[oi];
        if lambda <= 1e-12 * scale {
            return Err(Error::Numerical(format!(
                "residuals have numerical rank < {rank}: eigenvalue {j} is {lambda:.3e}"
            )));
        }
        let sigma = lambda.sqrt();
        let u = (&d * eig.eigenvectors.column(oi)) / sigma;
        basis.set_column(j, &u);
        variances[j] = lambda / (n as f64 - 1.0);
    }
    Ok(SensorNoiseModel { basis, variances })
}

// ---------------------------------------------------------------------------
// Observation models
// ---------------------------------------------------------------------------

/// First-order expansion of an observation model at a state: the predicted
/// observation and the Jacobian with respect to the *current* joint angles
/// (the history block never enters the observation).
pub struct ObservationLinearization {
    pub predicted: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Anything the filter can correct against: predicts an observation vector
/// from the current joint angles and linearizes around them.
pub trait ObservationModel {
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn linearize(&self, x: &[f64]) -> Result<ObservationLinearization>;
}

/// Measurement update with the innovation projected into the noise basis.
///
/// A = [Uᵀ J | 0] maps the augmented state to the r projected observation
/// coordinates; the gain solve is r×r. The covariance update is the plain
/// (I − KA) form, re-symmetrized against drift.
pub fn ekf_correct(
    belief: &GaussianBelief,
    lin: &ObservationLinearization,
    noise: &SensorNoiseModel,
    observation: &DVector<f64>,
) -> Result<GaussianBelief> {
    let two_n = belief.mean.len();
    let n = two_n / 2;
    let m = noise.obs_dim();
    let r = noise.rank();
    if lin.predicted.len() != m || observation.len() != m {
        return Err(Error::Shape(format!(
            "observation dimension mismatch: model {m}, predicted {}, observed {}",
            lin.predicted.len(),
            observation.len()
        )));
    }
    if lin.jacobian.nrows() != m || lin.jacobian.ncols() != n {
        return Err(Error::Shape(format!(
            "jacobian is {}×{}, want {m}×{n}",
            lin.jacobian.nrows(),
            lin.jacobian.ncols()
        )));
    }

    // Projected innovation and projected Jacobian over the augmented state.
    let innovation = noise.basis.transpose() * (observation - &lin.predicted);
    let hj = noise.basis.transpose() * &lin.jacobian; // r×n
    let mut a = DMatrix::zeros(r, two_n);
    a.view_mut((0, 0), (r, n)).copy_from(&hj);

    let s = &a * &belief.cov * a.transpose() + DMatrix::from_diagonal(&noise.variances);
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let gain = &belief.cov * a.transpose() * s_inv; // 2n×r

    let mean = &belief.mean + &gain * innovation;
    let cov = &belief.cov - &gain * a * &belief.cov;
    let mut out = GaussianBelief { mean, cov };
    out.symmetrize();
    Ok(out)
}

/// Linear observation y = Wx + b over the current state, evaluated and
/// linearized entirely in f64.
pub struct LinearObservation {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearObservation {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>) -> Result<LinearObservation> {
        if w.nrows() != b.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has {} entries",
                w.nrows(),
                b.len()
            )));
        }
        Ok(LinearObservation { w, b })
    }

    /// Extracts the exact weights of a single-fully-connected-layer network.
    /// Every f32 parameter converts to f64 losslessly, so this model and the
    /// source network describe the same affine map.
    pub fn from_network(net: &Network) -> Result<LinearObservation> {
        let params = net.parameters();
        if params.len() != 2 || !params[0].0.ends_with("weight") || params[0].1.rank() != 2 {
            return Err(Error::Config(
                "expected a network with exactly one fully-connected layer".into(),
            ));
        }
        let (rows, cols) = (params[0].1.shape()[0], params[0].1.shape()[1]);
        let w = DMatrix::from_fn(rows, cols, |i, j| params[0].1.data()[i * cols + j] as f64);
        let b = DVector::from_fn(rows, |i, _| params[1].1.data()[i] as f64);
        LinearObservation::new(w, b)
    }
}

impl ObservationModel for LinearObservation {
    fn obs_dim(&self) -> usize {
        self.w.nrows()
    }

    fn state_dim(&self) -> usize {
        self.w.ncols()
    }

    fn linearize(&self, x: &[f64]) -> Result<ObservationLinearization> {
        if x.len() != self.state_dim() {
            return Err(Error::Shape(format!(
                "state has {} entries, want {}",
                x.len(),
                self.state_dim()
            )));
        }
        let xv = DVector::from_column_slice(x);
        Ok(ObservationLinearization {
            predicted: &self.w * xv + &self.b,
            jacobian: self.w.clone(),
        })
    }
}

/// The learned forward model as an EKF observation: predicts the blended
/// warped image at x and assembles its Jacobian from the branch network
/// Jacobians, the warp's flow sensitivities, and the softmax blend.
///
/// References are selected fresh at each linearization point and frozen for
/// that correction — the nearest-reference switch is a discrete event the
/// linearization deliberately ignores.
pub struct KnnFlowObservation<'a> {
    pub model: &'a KnnFlowModel,
}

impl KnnFlowObservation<'_> {
    fn assemble(&self, x: &[f64]) -> Result<ObservationLinearization> {
        let model = self.model;
        let dof = model.branch.dof;
        let size = model.branch.image_size;
        let hw = size * size;
        let m = 3 * hw;

        let refs = model.select_references(x)?;
        let mut evals = Vec::with_capacity(refs.len());
        let mut dxs = Vec::with_capacity(refs.len());
        let mut dys = Vec::with_capacity(refs.len());
        let mut jbs = Vec::with_capacity(refs.len());
        for r in &refs {
            let input = model.branch.input_tensor(x, &r.angles)?;
            let raw = model.branch.net.forward(&input)?;
            let (flow, conf) = split_flow_conf(&raw);
            let (warped, dx, dy) = warp::warp_with_coord_grads(&r.image, &flow)?;
            let jb = model.branch.net.jacobian(&input, Mode::Eval)?;
            evals.push(BranchEval { ref_id: r.sample_id, flow, conf, warped });
            dxs.push(dx);
            dys.push(dy);
            jbs.push(jb);
        }
        let weights = blend_weights(&evals);
        let out = blend(&evals);
        let predicted = DVector::from_fn(m, |i, _| out.data()[i] as f64);

        // ∂out(c,p)/∂x_i = Σ_j s_j(p)·[dx_j(c,p)·∂fx_j(p) + dy_j(c,p)·∂fy_j(p)
        //                              + (warped_j(c,p) − out(c,p))·∂conf_j(p)]
        // with ∂· the branch-network Jacobian entries for input slot i.
        let cols = 2 * dof;
        let mut jac = DMatrix::zeros(m, dof);
        for c in 0..3 {
            for p in 0..hw {
                let row = c * hw + p;
                for i in 0..dof {
                    let mut acc = 0.0f64;
                    for j in 0..evals.len() {
                        let s = weights[j][p];
                        if s == 0.0 {
                            continue;
                        }
                        let jb = jbs[j].data();
                        let d_fx = jb[p * cols + i] as f64;
                        let d_fy = jb[(hw + p) * cols + i] as f64;
                        let d_cf = jb[(2 * hw + p) * cols + i] as f64;
                        let wj = evals[j].warped.data()[row] as f64;
                        let o = out.data()[row] as f64;
                        acc += s * (dxs[j][row] * d_fx + dys[j][row] * d_fy + (wj - o) * d_cf);
                    }
                    jac[(row, i)] = acc;
                }
            }
        }
        Ok(ObservationLinearization { predicted, jacobian: jac })
    }
}

impl ObservationModel for KnnFlowObservation<'_> {
    fn obs_dim(&self) -> usize {
        3 * self.model.branch.image_size * self.model.branch.image_size
    }

    fn state_dim(&self) -> usize {
        self.model.branch.dof
    }

    fn linearize(&self, x: &[f64]) -> Result<ObservationLinearization> {
        self.assemble(x)
    }
}

// ---------------------------------------------------------------------------
// Tracking loop
// ---------------------------------------------------------------------------

/// Flattens an image tensor into an observation vector.
pub fn image_to_obs(image: &Tensor) -> DVector<f64> {
    DVector::from_fn(image.len(), |i, _| image.data()[i] as f64)
}

/// Runs the filter over a frame sequence. The first frame corrects the prior
/// directly; every later frame is predict-then-correct. References (for the
/// learned observation) are re-selected at each frame's linearization point.
/// Returns one posterior belief per frame.
pub fn track_ekf(
    obs: &dyn ObservationModel,
    trans: &TransitionModel,
    noise: &SensorNoiseModel,
    frames: &[DVector<f64>],
    prior: &GaussianBelief,
) -> Result<Vec<GaussianBelief>> {
    if noise.obs_dim() != obs.obs_dim() {
        return Err(Error::Shape(format!(
            "noise model dimension {} does not match observation dimension {}",
            noise.obs_dim(),
            obs.obs_dim()
        )));
    }
    let mut belief = prior.clone();
    let mut out = Vec::with_capacity(frames.len());
    for (t, y) in frames.iter().enumerate() {
        if t > 0 {
            belief = ekf_predict(&belief, trans);
        }
        let lin = obs.linearize(&belief.current())?;
        belief = ekf_correct(&belief, &lin, noise, y)?;
        out.push(belief.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::FlowBranch;
    use crate::oracle;
    use crate::sim;
    use ftnn::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_rank_noise(r_diag: &[f64]) -> SensorNoiseModel {
        let m = r_diag.len();
        SensorNoiseModel {
            basis: DMatrix::identity(m, m),
            variances: DVector::from_column_slice(r_diag),
        }
    }

    #[test]
    fn transition_extrapolates_at_constant_velocity() {
        let trans = TransitionModel { dof: 3, dt: 1.0, gamma: 1e-6 };
        let f = trans.matrix();
        let x = DVector::from_column_slice(&[1.0, 2.0, 3.0, 0.5, 1.5, 2.5]);
        let y = &f * &x;
        for i in 0..3 {
            assert!((y[i] - (x[i] + (x[i] - x[3 + i]))).abs() < 1e-15);
            assert!((y[3 + i] - x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_matches_a_dense_kalman_filter_over_100_steps() {
        // dof 2 → augmented state dimension 4, observation dimension 8.
        // With a full-rank identity basis the projected filter must agree
        // with a textbook dense implementation to near machine precision.
        let dof = 2;
        let m = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let net = Network::new(vec![Layer::fully_connected(dof, m, &mut rng)]);
        let lin_obs = LinearObservation::from_network(&net).unwrap();
        let trans = TransitionModel { dof, dt: 1.0, gamma: 1e-6 };
        let r_diag: Vec<f64> = (0..m).map(|i| 0.01 + 0.002 * i as f64).collect();
        let noise = full_rank_noise(&r_diag);

        // Dense oracle over the same augmented system.
        let f = oracle::augmented_transition(dof, 1.0);
        let q = {
            let mut q = oracle::zeros(2 * dof, 2 * dof);
            for i in 0..2 * dof {
                q[i * 2 * dof + i] = 1e-6;
            }
            q
        };
        let mut h = oracle::zeros(m, 2 * dof);
        for i in 0..m {
            for j in 0..dof {
                h[i * 2 * dof + j] = lin_obs.w[(i, j)];
            }
        }
        let r_mat = {
            let mut r = oracle::zeros(m, m);
            for i in 0..m {
                r[i * m + i] = r_diag[i];
            }
            r
        };
        let x0 = vec![0.3, -0.2];
        let prior = GaussianBelief::from_prior(&x0, 0.5);
        let mut dense = oracle::DenseKalman {
            f,
            q,
            h,
            r: r_mat,
            mu: prior.mean.iter().cloned().collect(),
            sigma: {
                let mut s = oracle::zeros(2 * dof, 2 * dof);
                for i in 0..2 * dof {
                    s[i * 2 * dof + i] = 0.25;
                }
                s
            },
            dim_state: 2 * dof,
            dim_obs: m,
        };

        let mut belief = prior;
        let mut obs_rng = ChaCha8Rng::seed_from_u64(42);
        for step in 0..100 {
            // Observations of nothing in particular: the equivalence is
            // algebraic and holds for any measurement sequence. Note b ≠ 0:
            // the dense oracle observes y − b with the same H.
            let y_raw: Vec<f64> = (0..m).map(|_| obs_rng.gen_range(-1.0..1.0)).collect();
            let y = DVector::from_column_slice(&y_raw);

            if step > 0 {
                belief = ekf_predict(&belief, &trans);
                dense.predict();
            }
            let lin = lin_obs.linearize(&belief.current()).unwrap();
            belief = ekf_correct(&belief, &lin, &noise, &y).unwrap();
            let y_centered: Vec<f64> =
                (0..m).map(|i| y_raw[i] - lin_obs.b[i]).collect();
            dense.correct(&y_centered).unwrap();

            for i in 0..2 * dof {
                assert!(
                    (belief.mean[i] - dense.mu[i]).abs() < 1e-8,
                    "mean diverged at step {step}, slot {i}: {} vs {}",
                    belief.mean[i],
                    dense.mu[i]
                );
                for j in 0..2 * dof {
                    assert!(
                        (belief.cov[(i, j)] - dense.sigma[i * 2 * dof + j]).abs() < 1e-8,
                        "covariance diverged at step {step} ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn rotated_full_rank_basis_matches_dense_correction() {
        // A correction through any orthonormal full-rank basis U with
        // variances s equals a dense correction with R = U diag(s) Uᵀ.
        let (n_aug, m) = (6, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let u = raw.qr().q();
        let s: Vec<f64> = (0..m).map(|i| 0.05 + 0.01 * i as f64).collect();
        let noise = SensorNoiseModel {
            basis: u.clone(),
            variances: DVector::from_column_slice(&s),
        };

        let jac = DMatrix::from_fn(m, n_aug / 2, |_, _| rng.gen_range(-1.0..1.0));
        let half = DMatrix::from_fn(n_aug, n_aug, |_, _| rng.gen_range(-0.5..0.5));
        let cov = &half * half.transpose() + DMatrix::identity(n_aug, n_aug) * 0.1;
        let mean = DVector::from_fn(n_aug, |i, _| 0.1 * i as f64);
        let belief = GaussianBelief { mean: mean.clone(), cov: cov.clone() };

        let predicted = DVector::from_fn(m, |i, _| (i as f64).sin());
        let y = DVector::from_fn(m, |i, _| (i as f64).sin() + 0.05 * (i as f64 + 1.0));
        let lin = ObservationLinearization { predicted: predicted.clone(), jacobian: jac.clone() };
        let got = ekf_correct(&belief, &lin, &noise, &y).unwrap();

        // Dense reference on the raw (unprojected) observation.
        let r_full = &u * DMatrix::from_diagonal(&noise.variances) * u.transpose();
        let mut h_full = oracle::zeros(m, n_aug);
        for i in 0..m {
            for j in 0..n_aug / 2 {
                h_full[i * n_aug + j] = jac[(i, j)];
            }
        }
        // The dense oracle is linear (it subtracts Hμ itself); our filter
        // subtracts the general predicted observation. Feeding it
        // y − g(μ) + Hμ makes the two innovations identical.
        let h_mu = {
            let mut v = vec![0.0f64; m];
            for i in 0..m {
                for j in 0..n_aug {
                    v[i] += h_full[i * n_aug + j] * mean[j];
                }
            }
            v
        };
        let innovation: Vec<f64> = (0..m).map(|i| y[i] - predicted[i] + h_mu[i]).collect();
        let sigma_flat: Vec<f64> = (0..n_aug)
            .flat_map(|i| (0..n_aug).map(move |j| (i, j)))
            .map(|(i, j)| cov[(i, j)])
            .collect();
        let r_flat: Vec<f64> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| r_full[(i, j)])
            .collect();
        let (mu_d, sigma_d) = oracle::dense_correct(
            &mean.iter().cloned().collect::<Vec<f64>>(),
            &sigma_flat,
            &h_full,
            &r_flat,
            &innovation,
        )
        .unwrap();
        for i in 0..n_aug {
            assert!((got.mean[i] - mu_d[i]).abs() < 1e-6, "mean slot {i}");
            for j in 0..n_aug {
                assert!((got.cov[(i, j)] - sigma_d[i * n_aug + j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noise_estimation_recovers_a_planted_subspace() {
        let (m, n) = (40, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Two orthonormal directions via QR of a random m×2 matrix.
        let raw = DMatrix::from_fn(m, 2, |_, _| rng.gen_range(-1.0..1.0));
        let qr = raw.qr();
        let u_true = qr.q().columns(0, 2).into_owned();
        let (s1, s2) = (0.8, 0.3);
        let residuals: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // Standard normal pair via Box–Muller.
                let z1: f64 = rng.sample(rand::distributions::Standard);
                let z2: f64 = rng.sample(rand::distributions::Standard);
                let radius = (-2.0 * (1.0 - z1).max(1e-12).ln()).sqrt();
                let g1 = radius * (2.0 * std::f64::consts::PI * z2).cos();
                let g2 = radius * (2.0 * std::f64::consts::PI * z2).sin();
                (0..m)
                    .map(|i| s1 * u_true[(i, 0)] * g1 + s2 * u_true[(i, 1)] * g2)
                    .collect()
            })
            .collect();

        let noise = estimate_sensor_noise(&residuals, 2).unwrap();
        assert_eq!(noise.basis.shape(), (m, 2));

        // Orthonormal basis.
        let gram = noise.basis.transpose() * &noise.basis;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-10);
            }
        }
        // Same span as the planted directions.
        let angles = oracle::principal_angles(&u_true, &noise.basis);
        assert!(angles.iter().all(|&a| a < 1e-3), "principal angles {angles:?}");
        // Variances near the planted σ² (statistical tolerance).
        assert!((noise.variances[0] - s1 * s1).abs() / (s1 * s1) < 0.25);
        assert!((noise.variances[1] - s2 * s2).abs() / (s2 * s2) < 0.25);
        // Rank deficiency is an error, not a silent near-zero direction.
        assert!(estimate_sensor_noise(&residuals, 3).is_err());
    }

    #[test]
    fn zero_innovation_fixes_the_mean_and_never_grows_the_covariance() {
        let dof = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let net = Network::new(vec![Layer::fully_connected(dof, 12, &mut rng)]);
        let obs = LinearObservation::from_network(&net).unwrap();
        let noise = full_rank_noise(&vec![0.02; 12]);
        let belief = GaussianBelief::from_prior(&[0.4, -0.1, 0.7], 0.3);

        let lin = obs.linearize(&belief.current()).unwrap();
        let y = lin.predicted.clone();
        let post = ekf_correct(&belief, &lin, &noise, &y).unwrap();
        for i in 0..2 * dof {
            assert!((post.mean[i] - belief.mean[i]).abs() < 1e-12);
        }
        assert!(post.cov.trace() <= belief.cov.trace() + 1e-12);
        // Symmetry of the posterior covariance.
        for i in 0..2 * dof {
            for j in 0..2 * dof {
                assert_eq!(post.cov[(i, j)], post.cov[(j, i)]);
            }
        }
    }

    #[test]
    fn learned_observation_jacobian_matches_f64_finite_differences() {
        const SIZE: usize = 16;
        let arm =
            sim::ArmModel::new(SIZE, &[0.18, 0.15, 0.12], &[0.1, 0.09, 0.08], (0.5, 0.5), 2.6)
                .unwrap();
        let refs = sim::generate_uniform_dataset(&arm, 25, 31, None).unwrap();
        let mut branch = FlowBranch::new(3, SIZE, 33).unwrap();
        // Generic head (see the forward-model loss test): keeps the warp off
        // its interpolation-lattice kinks.
        let mut head_rng = ChaCha8Rng::seed_from_u64(34);
        let n_params = branch.net.parameters().len();
        for pi in [n_params - 2, n_params - 1] {
            for v in branch.net.parameters_mut()[pi].1.data_mut() {
                *v = head_rng.gen_range(-0.05..0.05);
            }
        }
        let model = KnnFlowModel::new(branch, refs, 2).unwrap();
        let obs = KnnFlowObservation { model: &model };

        let x = vec![0.35, -0.4, 0.65];
        let lin = obs.linearize(&x).unwrap();
        assert_eq!(lin.jacobian.shape(), (3 * SIZE * SIZE, 3));

        // Predicted observation agrees with the all-f64 oracle pipeline.
        let frozen = model.select_references(&x).unwrap();
        let ref_views: Vec<(Vec<f64>, Vec<f64>)> = frozen
            .iter()
            .map(|r| {
                (r.angles.clone(), r.image.data().iter().map(|&v| v as f64).collect())
            })
            .collect();
        let oracle_pred = |q: &[f64]| -> Vec<f64> {
            oracle::knn_flow_forward_f64(&model.branch.net, q, &ref_views, 3, SIZE, SIZE).unwrap()
        };
        let base = oracle_pred(&x);
        for (i, &b) in base.iter().enumerate() {
            assert!((lin.predicted[i] - b).abs() < 1e-4, "prediction drifted at {i}");
        }

        // FD columns against the oracle, probing a spread of output rows.
        let h = 1e-5;
        for col in 0..3 {
            let mut xp = x.clone();
            xp[col] += h;
            let mut xm = x.clone();
            xm[col] -= h;
            let fp = oracle_pred(&xp);
            let fm = oracle_pred(&xm);
            let mut checked = 0usize;
            let mut skipped = 0usize;
            for row in (0..3 * SIZE * SIZE).step_by(37) {
                let central = (fp[row] - fm[row]) / (2.0 * h);
                let a = lin.jacobian[(row, col)];
                // One-sided agreement guard against interpolation kinks.
                let right = (fp[row] - base[row]) / h;
                let left = (base[row] - fm[row]) / h;
                let denom = right.abs().max(left.abs()).max(1e-6);
                if (right - left).abs() / denom > 2e-3 {
                    skipped += 1;
                    continue;
                }
                let scale = a.abs().max(central.abs()).max(1e-4);
                assert!(
                    (a - central).abs() / scale < 2e-3,
                    "jacobian ({row},{col}): analytic {a:.6e} vs fd {central:.6e}"
                );
                checked += 1;
            }
            assert!(checked >= 2 * skipped.max(1), "col {col}: {checked} vs {skipped} skipped");
        }
    }

    #[test]
    fn noise_model_roundtrips_through_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let raw = DMatrix::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let noise = SensorNoiseModel {
            basis: raw.qr().q().columns(0, 3).into_owned(),
            variances: DVector::from_column_slice(&[0.5, 0.25, 0.125]),
        };
        let dir = std::env::temp_dir().join("armflow_noise_model");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("noise.txt");
        noise.save(&path).unwrap();
        let back = SensorNoiseModel::load(&path).unwrap();
        assert_eq!(back.basis, noise.basis);
        assert_eq!(back.variances, noise.variances);
        assert!(SensorNoiseModel::load(&dir.join("absent.txt")).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn tracking_a_linear_system_converges_from_an_offset_prior() {
        let dof = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let net = Network::new(vec![Layer::fully_connected(dof, 10, &mut rng)]);
        let obs = LinearObservation::from_network(&net).unwrap();
        let trans = TransitionModel { dof, dt: 1.0, gamma: 1e-6 };
        let noise = full_rank_noise(&vec![1e-4; 10]);

        // True state follows the constant-velocity model exactly.
        let truth: Vec<Vec<f64>> = (0..40)
            .map(|t| vec![0.3 + 0.01 * t as f64, -0.5 + 0.005 * t as f64])
            .collect();
        let frames: Vec<DVector<f64>> = truth
            .iter()
            .map(|q| obs.linearize(q).unwrap().predicted)
            .collect();
        let offset_prior = GaussianBelief::from_prior(&[0.45, -0.35], 0.2);
        let beliefs = track_ekf(&obs, &trans, &noise, &frames, &offset_prior).unwrap();
        let last = beliefs.last().unwrap().current();
        let err: f64 = last
            .iter()
            .zip(&truth[39])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "final tracking error {err}");
        // Variance collapses well below the prior.
        assert!(beliefs.last().unwrap().current_variances()[0] < 0.04 * 0.2 * 0.2);
    }
}
