//! Inverse observation model: image → state.
//!
//! A small convolutional regressor maps a rendered frame directly to joint
//! angles. Tracking with it is stateless — each frame is mapped
//! independently, with no temporal smoothing — which makes it a useful
//! contrast to the recursive tracker: immune to drift, blind to dynamics.

use crate::error::{Error, Result};
use crate::forward::TrainConfig;
use crate::sim::{Dataset, JointConfig};
use ftnn::{AdamState, Layer, Network, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Convolutional image-to-angles regressor. Five stride-2 convolutions
/// shrink the frame 32×, then three fully-connected layers (the first two
/// with dropout) regress the joint vector.
pub struct InverseCnn {
    pub net: Network,
    pub dof: usize,
    pub image_size: usize,
}

impl InverseCnn {
    pub fn new(dof: usize, image_size: usize, seed: u64) -> Result<Self> {
        if image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image size must be a multiple of 32, got {image_size}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans = [3usize, 16, 32, 64, 64, 64];
        let mut layers = Vec::new();
        for win in chans.windows(2) {
            layers.push(Layer::conv2d(win[0], win[1], 3, 2, 1, &mut rng));
            layers.push(Layer::relu());
        }
        let side = image_size / 32;
        let flat = 64 * side * side;
        layers.push(Layer::reshape(vec![flat]));
        layers.push(Layer::fully_connected(flat, 512, &mut rng));
        layers.push(Layer::relu());
        layers.push(Layer::dropout(0.5));
        layers.push(Layer::fully_connected(512, 128, &mut rng));
        layers.push(Layer::relu());
        layers.push(Layer::dropout(0.5));
        layers.push(Layer::fully_connected(128, 64, &mut rng));
        layers.push(Layer::relu());
        layers.push(Layer::fully_connected(64, dof, &mut rng));
        Ok(InverseCnn { net: Network::new(layers), dof, image_size })
    }

    /// Joint angles for one frame (deterministic eval pass: dropout off).
    pub fn infer_state(&self, image: &Tensor) -> Result<JointConfig> {
        let want = [3, self.image_size, self.image_size];
        if image.shape() != want {
            return Err(Error::Shape(format!(
                "expected image shape {:?}, got {:?}",
                want,
                image.shape()
            )));
        }
        let out = self.net.forward(image)?;
        Ok(out.data().iter().map(|&v| v as f64).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ftnn::save_checkpoint(&self.net, path)?;
        Ok(())
    }

    pub fn load(path: &Path, dof: usize, image_size: usize) -> Result<Self> {
        let mut model = InverseCnn::new(dof, image_size, 0)?;
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("checkpoint {}", path.display())));
        }
        ftnn::load_checkpoint(&mut model.net, path)?;
        Ok(model)
    }
}

/// Trains the regressor with squared-error loss on the angles plus the same
/// L2 parameter penalty as the forward models. Dropout is active during
/// training passes and disabled everywhere else.
pub fn train_inverse(
    model: &mut InverseCnn,
    train: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &Network) -> Result<()>,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut adam = AdamState::new(&model.net, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = crate::forward::epoch_rng(cfg.seed, epoch);
        let order = crate::forward::shuffled(train.len(), &mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &idx in chunk {
                let rec = &train.records[idx];
                let out = model.net.forward_train(&rec.image, &mut rng)?;
                let mut loss = 0.0f64;
                let mut grad = vec![0.0f32; out.len()];
                for (i, (&p, &t)) in out.data().iter().zip(rec.angles.iter()).enumerate() {
                    let diff = p as f64 - t;
                    loss += diff * diff;
                    grad[i] = (2.0 * diff) as f32;
                }
                let grad = Tensor::new(out.shape().to_vec(), grad).expect("sized");
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
                crate::forward::accumulate(&mut acc, grads);
            }
            let mut grads = acc.expect("non-empty batch");
            crate::forward::scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(&mut model.net, &grads)?;
        }
        let mean = epoch_loss / train.len() as f64;
        log.push(mean);
        on_epoch(epoch, mean, &model.net)?;
    }
    Ok(log)
}

/// Frame-by-frame tracking: maps each observed frame to a state estimate
/// independently. No state is carried between frames.
pub fn track_by_inverse(model: &InverseCnn, frames: &[Tensor]) -> Result<Vec<JointConfig>> {
    frames.iter().map(|f| model.infer_state(f)).collect()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim;

    const TEST_SIZE: usize = 32;

    fn test_arm() -> sim::ArmModel {
        sim::ArmModel::new(TEST_SIZE, &[0.18, 0.15, 0.12], &[0.08, 0.07, 0.06], (0.5, 0.5), 2.6)
            .unwrap()
    }

    #[test]
    fn output_is_one_angle_per_joint_and_shape_checked() {
        let model = InverseCnn::new(3, TEST_SIZE, 1).unwrap();
        let arm = test_arm();
        let img = sim::render(&arm, &[0.3, -0.2, 0.5], None).unwrap();
        let q = model.infer_state(&img).unwrap();
        assert_eq!(q.len(), 3);
        assert!(q.iter().all(|v| v.is_finite()));
        let bad = Tensor::zeros(vec![3, 16, 16]);
        assert!(model.infer_state(&bad).is_err());
        assert!(InverseCnn::new(3, 48, 1).is_err());
    }

    #[test]
    fn tracking_is_stateless_frame_order_cannot_matter() {
        let model = InverseCnn::new(3, TEST_SIZE, 2).unwrap();
        let arm = test_arm();
        let a = sim::render(&arm, &[0.4, 0.1, -0.3], None).unwrap();
        let b = sim::render(&arm, &[-0.6, 0.8, 0.2], None).unwrap();
        let ab = track_by_inverse(&model, &[a.clone(), b.clone()]).unwrap();
        let ba = track_by_inverse(&model, &[b, a.clone()]).unwrap();
        assert_eq!(ab[0], ba[1]);
        assert_eq!(ab[1], ba[0]);
        // And repeated frames give bit-identical estimates.
        assert_eq!(ab[0], model.infer_state(&a).unwrap());
    }

    #[test]
    fn dropout_is_train_only_eval_is_deterministic() {
        let model = InverseCnn::new(3, TEST_SIZE, 3).unwrap();
        assert!(model.net.has_dropout());
        let arm = test_arm();
        let img = sim::render(&arm, &[0.2, 0.2, 0.2], None).unwrap();
        let q1 = model.infer_state(&img).unwrap();
        let q2 = model.infer_state(&img).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn training_reduces_loss_and_reproduces_exactly() {
        let arm = test_arm();
        let train = sim::generate_uniform_dataset(&arm, 24, 5, None).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, lr: 1e-3, lambda: 1e-5, seed: 4 };

        let mut m1 = InverseCnn::new(3, TEST_SIZE, 6).unwrap();
        let log1 = train_inverse(&mut m1, &train, &cfg, |_, _, _| Ok(())).unwrap();
        assert!(log1.last().unwrap() < &log1[0], "loss log {log1:?}");

        let mut m2 = InverseCnn::new(3, TEST_SIZE, 6).unwrap();
        let log2 = train_inverse(&mut m2, &train, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(log1, log2);
    }

    #[test]
    fn checkpoints_roundtrip_through_disk() {
        let model = InverseCnn::new(3, TEST_SIZE, 9).unwrap();
        let dir = std::env::temp_dir().join("armflow_inv_ckpt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("inverse.ftnn");
        model.save(&path).unwrap();
        let back = InverseCnn::load(&path, 3, TEST_SIZE).unwrap();
        for ((_, a), (_, b)) in model.net.parameters().iter().zip(back.net.parameters()) {
            assert_eq!(**a, *b);
        }
        assert!(InverseCnn::load(&dir.join("absent.ftnn"), 3, TEST_SIZE).is_err());
        std::fs::remove_file(&path).ok();
    }
}
