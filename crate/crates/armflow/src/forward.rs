//! Forward observation models: state → image.
//!
//! The main model predicts a per-pixel flow field from a (query state,
//! reference state) pair, warps the reference image with it, and blends the k
//! nearest references with per-pixel softmax confidence weights. Since the
//! flow head starts at zero, an untrained model reproduces its nearest
//! reference exactly — training can only improve on nearest-neighbor lookup.
//!
//! Also here: the deconvolutional baseline that regresses pixels directly
//! from the state, and the trivial nearest-neighbor baseline.

use crate::error::{Error, Result};
use crate::knn::ReferenceStore;
use crate::sim::{Dataset, DatasetRecord, JointConfig};
use crate::warp;
use ftnn::{AdamState, Layer, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub fn config_to_f32(q: &[f64]) -> Vec<f32> {
    q.iter().map(|&a| a as f32).collect()
}

// ---------------------------------------------------------------------------
// Shared trunk
// ---------------------------------------------------------------------------

/// Fully-connected trunk, reshape to a 4×4 feature map, then stride-2
/// transpose convolutions up to `image_size`, a 3×3 conv, and a 3-channel
/// head. `zero_head` controls whether the head starts at zero (flow models)
/// or at a random init (direct pixel regression).
fn decoder_layers(
    in_dim: usize,
    image_size: usize,
    zero_head: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Layer>> {
    let mut doublings = 0usize;
    let mut side = 4usize;
    while side < image_size {
        side *= 2;
        doublings += 1;
    }
    if side != image_size || doublings == 0 {
        return Err(Error::Config(format!(
            "image size must be 4·2^d for d ≥ 1, got {image_size}"
        )));
    }
    let widths = [in_dim, 64, 128, 256, 256, 512, 64 * 16];
    let mut layers = Vec::new();
    for win in widths.windows(2) {
        layers.push(Layer::fully_connected(win[0], win[1], rng));
        layers.push(Layer::relu());
    }
    layers.push(Layer::reshape(vec![64, 4, 4]));
    let mut ch = 64usize;
    for _ in 0..doublings {
        let next = (ch / 2).max(8);
        layers.push(Layer::conv_transpose2d(ch, next, 4, 2, 1, rng));
        layers.push(Layer::relu());
        ch = next;
    }
    layers.push(Layer::conv2d(ch, ch, 3, 1, 1, rng));
    layers.push(Layer::relu());
    if zero_head {
        layers.push(Layer::conv2d_zeroed(ch, 3, 3, 1, 1));
    } else {
        layers.push(Layer::conv2d(ch, 3, 3, 1, 1, rng));
    }
    Ok(layers)
}

// ---------------------------------------------------------------------------
// Flow branch
// ---------------------------------------------------------------------------

/// The shared parametric branch: (x_query, x_reference) ↦ (flow, confidence).
///
/// Output channels: 0 = dx, 1 = dy (pixels), 2 = unnormalized confidence
/// logits. All ensemble members evaluate this single parameter set.
pub struct FlowBranch {
    pub net: Network,
    pub dof: usize,
    pub image_size: usize,
}

impl FlowBranch {
    pub fn new(dof: usize, image_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(decoder_layers(2 * dof, image_size, true, &mut rng)?);
        Ok(FlowBranch { net, dof, image_size })
    }

    /// Concatenated (x_i, x_r) network input.
    pub fn input_tensor(&self, x_i: &[f64], x_r: &[f64]) -> Result<Tensor> {
        if x_i.len() != self.dof || x_r.len() != self.dof {
            return Err(Error::Shape(format!(
                "states must have {} angles, got {} and {}",
                self.dof,
                x_i.len(),
                x_r.len()
            )));
        }
        let mut v = config_to_f32(x_i);
        v.extend(config_to_f32(x_r));
        Ok(Tensor::new(vec![2 * self.dof], v).expect("sized"))
    }

    /// Deterministic eval-mode pass returning ([2,H,W] flow, [H,W] logits).
    pub fn forward(&self, x_i: &[f64], x_r: &[f64]) -> Result<(Tensor, Tensor)> {
        let raw = self.net.forward(&self.input_tensor(x_i, x_r)?)?;
        Ok(split_flow_conf(&raw))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ftnn::save_checkpoint(&self.net, path)?;
        Ok(())
    }

    /// Rebuilds the architecture and restores parameters from a checkpoint.
    pub fn load(path: &Path, dof: usize, image_size: usize) -> Result<Self> {
        let mut branch = FlowBranch::new(dof, image_size, 0)?;
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("checkpoint {}", path.display())));
        }
        ftnn::load_checkpoint(&mut branch.net, path)?;
        Ok(branch)
    }
}

/// Splits a raw [3,H,W] branch output into flow [2,H,W] and logits [H,W].
pub fn split_flow_conf(raw: &Tensor) -> (Tensor, Tensor) {
    let (h, w) = (raw.shape()[1], raw.shape()[2]);
    let flow = Tensor::new(vec![2, h, w], raw.data()[..2 * h * w].to_vec()).expect("sized");
    let conf = Tensor::new(vec![h, w], raw.data()[2 * h * w..].to_vec()).expect("sized");
    (flow, conf)
}

// ---------------------------------------------------------------------------
// Ensemble model
// ---------------------------------------------------------------------------

/// One evaluated ensemble member: its reference, predicted flow, confidence
/// logits, and the warped candidate image.
pub struct BranchEval {
    pub ref_id: u32,
    pub flow: Tensor,
    pub conf: Tensor,
    pub warped: Tensor,
}

/// k-nearest-reference flow model: shared branch + reference store + the
/// reference dataset the store indexes.
pub struct KnnFlowModel {
    pub branch: FlowBranch,
    pub store: ReferenceStore,
    pub refs: Dataset,
    pub k: usize,
}

impl KnnFlowModel {
    pub fn new(branch: FlowBranch, refs: Dataset, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let store = ReferenceStore::build(&refs)?;
        Ok(KnnFlowModel { branch, store, refs, k })
    }

    /// The k trajectory-disjoint nearest reference records for a query state.
    pub fn select_references(&self, x: &[f64]) -> Result<Vec<&DatasetRecord>> {
        let nn = self.store.query_knn(x, self.k, true)?;
        nn.iter()
            .map(|&(id, _)| {
                self.refs
                    .by_id(id)
                    .ok_or_else(|| Error::Dataset(format!("reference id {id} not in dataset")))
            })
            .collect()
    }

    /// Runs the shared branch against each given reference.
    pub fn eval_branches(&self, x: &[f64], refs: &[&DatasetRecord]) -> Result<Vec<BranchEval>> {
        refs.iter()
            .map(|r| {
                let (flow, conf) = self.branch.forward(x, &r.angles)?;
                let warped = warp::warp(&r.image, &flow)?;
                Ok(BranchEval { ref_id: r.sample_id, flow, conf, warped })
            })
            .collect()
    }

    /// Predicted image for a state: per-pixel softmax blend of the warped
    /// candidates. With k = 1 this is exactly the single warped reference.
    pub fn predict(&self, x: &[f64]) -> Result<Tensor> {
        let refs = self.select_references(x)?;
        let evals = self.eval_branches(x, &refs)?;
        Ok(blend(&evals))
    }

    /// Per-frame prediction over an arbitrary state sequence.
    pub fn predict_sequence(&self, states: &[JointConfig]) -> Result<Vec<Tensor>> {
        states.iter().map(|q| self.predict(q)).collect()
    }
}

/// Per-pixel softmax blend across ensemble members. Weights are computed in
/// `f64` with the usual max-shift for stability; every output pixel is a
/// convex combination of the members' values there.
pub fn blend(evals: &[BranchEval]) -> Tensor {
    assert!(!evals.is_empty());
    let shape = evals[0].warped.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = vec![0.0f32; c * h * w];
    let mut weights = vec![0.0f64; evals.len()];
    for p in 0..h * w {
        let mx = evals
            .iter()
            .map(|e| e.conf.data()[p] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, e) in evals.iter().enumerate() {
            let wgt = ((e.conf.data()[p] as f64) - mx).exp();
            weights[j] = wgt;
            z += wgt;
        }
        for ch in 0..c {
            let mut acc = 0.0f64;
            for (j, e) in evals.iter().enumerate() {
                acc += weights[j] / z * e.warped.data()[ch * h * w + p] as f64;
            }
            out[ch * h * w + p] = acc as f32;
        }
    }
    Tensor::new(shape, out).expect("sized")
}

/// The per-pixel softmax weights themselves, [k][H·W] — shared with the
/// tracker's Jacobian assembly.
pub fn blend_weights(evals: &[BranchEval]) -> Vec<Vec<f64>> {
    let (h, w) = (evals[0].conf.shape()[0], evals[0].conf.shape()[1]);
    let mut out = vec![vec![0.0f64; h * w]; evals.len()];
    for p in 0..h * w {
        let mx = evals
            .iter()
            .map(|e| e.conf.data()[p] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for e in evals.iter() {
            z += ((e.conf.data()[p] as f64) - mx).exp();
        }
        for (j, e) in evals.iter().enumerate() {
            out[j][p] = ((e.conf.data()[p] as f64) - mx).exp() / z;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Hyperparameters for the gradient-trained models.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 16, lr: 1e-3, lambda: 1e-5, seed: 0 }
    }
}

/// Single-sample training loss for the flow branch: draw one of the query's
/// ten nearest references, predict the flow, warp, and take the pixel SSE
/// against the observed image plus an L2 penalty on all parameters.
///
/// Returns the loss and the parameter gradients (confidence logits receive
/// none — only the blending path touches them, and the per-sample loss warps
/// a single reference).
pub fn forward_loss<R: Rng>(
    branch: &mut FlowBranch,
    store: &ReferenceStore,
    refs: &Dataset,
    x_i: &[f64],
    o_i: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>)> {
    let ref_id = store.sample_training_neighbor(x_i, rng)?;
    let rec = refs
        .by_id(ref_id)
        .ok_or_else(|| Error::Dataset(format!("reference id {ref_id} not in dataset")))?;
    forward_loss_with_reference(branch, rec, x_i, o_i, lambda, rng)
}

/// Same loss with the reference fixed by the caller (used by tests to pin
/// the stochastic choice).
pub fn forward_loss_with_reference<R: Rng>(
    branch: &mut FlowBranch,
    rec: &DatasetRecord,
    x_i: &[f64],
    o_i: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>)> {
    let input = branch.input_tensor(x_i, &rec.angles)?;
    let raw = branch.net.forward_train(&input, rng)?;
    let (flow, _conf) = split_flow_conf(&raw);
    let warped = warp::warp(&rec.image, &flow)?;

    let mut loss = 0.0f64;
    let mut d_warped = vec![0.0f32; warped.len()];
    for (i, (&p, &t)) in warped.data().iter().zip(o_i.data()).enumerate() {
        let diff = p as f64 - t as f64;
        loss += diff * diff;
        d_warped[i] = (2.0 * diff) as f32;
    }
    let d_warped = Tensor::new(warped.shape().to_vec(), d_warped).expect("sized");
    let (_ref_grad, flow_grad) = warp::warp_backward(&rec.image, &flow, &d_warped)?;

    // Upstream gradient for the raw [3,H,W] head output: flow channels from
    // the warp, zero for the confidence channel.
    let (h, w) = (flow.shape()[1], flow.shape()[2]);
    let mut raw_grad = vec![0.0f32; 3 * h * w];
    raw_grad[..2 * h * w].copy_from_slice(flow_grad.data());
    let raw_grad = Tensor::new(vec![3, h, w], raw_grad).expect("sized");
    let (mut grads, _input_grad) = branch.net.backward(&raw_grad)?;

    // L2 penalty on every parameter.
    for (gi, (_, p)) in grads.iter_mut().zip(branch.net.parameters()) {
        let mut acc = 0.0f64;
        let gd = gi.data_mut();
        for (g, &wv) in gd.iter_mut().zip(p.data()) {
            acc += wv as f64 * wv as f64;
            *g = (*g as f64 + 2.0 * lambda * wv as f64) as f32;
        }
        loss += lambda * acc;
    }
    Ok((loss, grads))
}

pub(crate) fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (ai, gi) in a.iter_mut().zip(&grads) {
                let sum: Vec<f32> = ai
                    .data()
                    .iter()
                    .zip(gi.data())
                    .map(|(&x, &y)| ((x as f64) + (y as f64)) as f32)
                    .collect();
                *ai = Tensor::new(ai.shape().to_vec(), sum).expect("sized");
            }
        }
    }
}

pub(crate) fn scale_grads(grads: &mut [Tensor], s: f64) {
    for g in grads {
        for v in g.data_mut() {
            *v = (*v as f64 * s) as f32;
        }
    }
}

/// Per-epoch sample order and minibatch RNG: each epoch reseeds from
/// (seed, epoch) so runs are reproducible regardless of earlier epochs'
/// consumption.
pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

/// End-to-end training of the flow branch against a trajectory training set,
/// with references drawn from a separate store. Returns per-epoch mean
/// losses; `on_epoch` runs after each epoch (checkpointing hook).
pub fn train_forward(
    branch: &mut FlowBranch,
    train: &Dataset,
    store: &ReferenceStore,
    refs: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &Network) -> Result<()>,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut adam = AdamState::new(&branch.net, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let order = shuffled(train.len(), &mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &idx in chunk {
                let rec = &train.records[idx];
                let (loss, grads) =
                    forward_loss(branch, store, refs, &rec.angles, &rec.image, cfg.lambda, &mut rng)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at epoch {epoch}, sample {idx}"
                    )));
                }
                epoch_loss += loss;
                accumulate(&mut acc, grads);
            }
            let mut grads = acc.expect("non-empty batch");
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(&mut branch.net, &grads)?;
        }
        let mean = epoch_loss / train.len() as f64;
        log.push(mean);
        on_epoch(epoch, mean, &branch.net)?;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Deconvolutional baseline
// ---------------------------------------------------------------------------

/// Direct state → RGB regression with the same decoder trunk and no
/// reference machinery.
pub struct DeconvBaseline {
    pub net: Network,
    pub dof: usize,
    pub image_size: usize,
}

impl DeconvBaseline {
    pub fn new(dof: usize, image_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(decoder_layers(dof, image_size, false, &mut rng)?);
        Ok(DeconvBaseline { net, dof, image_size })
    }

    /// Predicts an image for a state, clamped to [0, 1].
    pub fn predict(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.dof {
            return Err(Error::Shape(format!("state must have {} angles", self.dof)));
        }
        let input = Tensor::new(vec![self.dof], config_to_f32(x)).expect("sized");
        let raw = self.net.forward(&input)?;
        let clamped: Vec<f32> = raw.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Tensor::new(raw.shape().to_vec(), clamped).expect("sized"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ftnn::save_checkpoint(&self.net, path)?;
        Ok(())
    }

    pub fn load(path: &Path, dof: usize, image_size: usize) -> Result<Self> {
        let mut model = DeconvBaseline::new(dof, image_size, 0)?;
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("checkpoint {}", path.display())));
        }
        ftnn::load_checkpoint(&mut model.net, path)?;
        Ok(model)
    }
}

/// Trains the deconvolutional baseline with the plain pixel SSE + L2 loss.
pub fn train_deconv(
    model: &mut DeconvBaseline,
    train: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &Network) -> Result<()>,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut adam = AdamState::new(&model.net, cfg.lr);
    let dof = model.dof;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let order = shuffled(train.len(), &mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &idx in chunk {
                let rec = &train.records[idx];
                let input = Tensor::new(vec![dof], config_to_f32(&rec.angles)).expect("sized");
                let raw = model.net.forward_train(&input, &mut rng)?;
                let mut loss = 0.0f64;
                let mut grad = vec![0.0f32; raw.len()];
                for (i, (&p, &t)) in raw.data().iter().zip(rec.image.data()).enumerate() {
                    let diff = p as f64 - t as f64;
                    loss += diff * diff;
                    grad[i] = (2.0 * diff) as f32;
                }
                let grad = Tensor::new(raw.shape().to_vec(), grad).expect("sized");
                let (mut grads, _) = model.net.backward(&grad)?;
                for (gi, (_, p)) in grads.iter_mut().zip(model.net.parameters()) {
                    let gd = gi.data_mut();
                    for (g, &wv) in gd.iter_mut().zip(p.data()) {
                        loss += cfg.lambda * wv as f64 * wv as f64;
                        *g = (*g as f64 + 2.0 * cfg.lambda * wv as f64) as f32;
                    }
                }
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at epoch {epoch}, sample {idx}"
                    )));
                }
                epoch_loss += loss;
                accumulate(&mut acc, grads);
            }
            let mut grads = acc.expect("non-empty batch");
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(&mut model.net, &grads)?;
        }
        let mean = epoch_loss / train.len() as f64;
        log.push(mean);
        on_epoch(epoch, mean, &model.net)?;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Nearest-neighbor baseline
// ---------------------------------------------------------------------------

/// The stored image of the single nearest reference, unmodified. Ties go to
/// the smaller sample id via the store's ordering.
pub fn nn_baseline_predict<'d>(
    store: &ReferenceStore,
    refs: &'d Dataset,
    x: &[f64],
) -> Result<&'d Tensor> {
    let nn = store.query_knn(x, 1, false)?;
    refs.by_id(nn[0].0)
        .map(|r| &r.image)
        .ok_or_else(|| Error::Dataset(format!("reference id {} not in dataset", nn[0].0)))
}

// ---------------------------------------------------------------------------
