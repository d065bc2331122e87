//! Tracks joint angles through a rendered trajectory with the extended
//! Kalman filter, using the trained flow model as its observation function.
//!
//! The filter starts from a deliberately wrong prior (every joint offset
//! from truth), observes only images, and pulls the state estimate onto the
//! true trajectory. Sensor noise is estimated from forward-model residuals
//! and kept as a low-rank basis plus per-direction variances, so each
//! correction works in a small subspace instead of all pixels at once.
//!
//! Two things matter for a stable track and are easy to get wrong:
//! the reference set must be dense enough that the nearest reference is
//! never far from the true pose (model bias grows quickly with reference
//! distance), and the transition time-step should sit below 1 so velocity
//! estimation errors decay geometrically instead of persisting.
//!
//! ```text
//! cargo run --release --example track_with_ekf
//! ```

use armflow::ekf::{
    estimate_sensor_noise, image_to_obs, track_ekf, GaussianBelief, KnnFlowObservation,
    TransitionModel,
};
use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::metrics::{deg_to_rad, mean_abs_error, rad_to_deg};
use armflow::sim::{self, ArmModel, Dataset};
use armflow::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A slow linear trajectory: random start, endpoint at most `max_step`
/// radians away per joint, interpolated over `steps` frames.
fn slow_trajectory(arm: &ArmModel, steps: usize, max_step: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = arm.sample_config(&mut rng);
    let b: Vec<f64> = a
        .iter()
        .map(|&q| {
            (q + rng.gen_range(-max_step..max_step)).clamp(-arm.joint_limit, arm.joint_limit)
        })
        .collect();
    let mut records = Vec::new();
    for step in 0..steps {
        let t = step as f64 / (steps - 1) as f64;
        let q: Vec<f64> = a.iter().zip(&b).map(|(&ai, &bi)| ai + (bi - ai) * t).collect();
        records.push(sim::DatasetRecord {
            sample_id: step as u32,
            trajectory_id: Some(0),
            angles: q.clone(),
            image: sim::render(arm, &q, None)?,
        });
    }
    Ok(Dataset { records })
}

fn main() -> Result<()> {
    let size = 32;
    let arm = ArmModel::new(size, &[0.24, 0.20], &[0.12, 0.10], (0.5, 0.5), 2.6)?;
    let train = sim::generate_trajectory_dataset(&arm, 80, 12, 21, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 600, 22, None)?;
    let store = ReferenceStore::build(&refs)?;

    let mut branch = FlowBranch::new(arm.dof, size, 23)?;
    let cfg = TrainConfig { epochs: 12, batch_size: 16, ..TrainConfig::default() };
    train_forward(&mut branch, &train, &store, &refs, &cfg, |e, loss, _| {
        if e % 3 == 0 || e + 1 == 12 {
            println!("epoch {e:2}: loss {loss:.3}");
        }
        Ok(())
    })?;
    let model = KnnFlowModel::new(branch, refs, 2)?;

    // Low-rank sensor noise from residuals on the training poses.
    let residuals: Vec<Vec<f64>> = train
        .records
        .iter()
        .step_by(2)
        .map(|rec| {
            let pred = model.predict(&rec.angles)?;
            Ok(rec
                .image
                .data()
                .iter()
                .zip(pred.data())
                .map(|(&t, &p)| t as f64 - p as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let noise = estimate_sensor_noise(&residuals, 8)?;
    println!(
        "sensor noise: rank {} over {} pixels, largest variance {:.2e}",
        noise.rank(),
        noise.obs_dim(),
        noise.variances[0]
    );

    // Held-out slow trajectory to track.
    let test = slow_trajectory(&arm, 40, 0.3, 24)?;
    let truth = test.keys();
    let frames: Vec<DVector<f64>> = test.records.iter().map(|r| image_to_obs(&r.image)).collect();

    // Prior: 10 degrees off on every joint, alternating direction.
    let offset = deg_to_rad(10.0);
    let x0: Vec<f64> = truth[0]
        .iter()
        .enumerate()
        .map(|(j, &q)| q + if j % 2 == 0 { offset } else { -offset })
        .collect();
    let prior = GaussianBelief::from_prior(&x0, offset);

    let obs = KnnFlowObservation { model: &model };
    let trans = TransitionModel { dof: arm.dof, dt: 0.5, gamma: 1e-6 };
    let beliefs = track_ekf(&obs, &trans, &noise, &frames, &prior)?;

    println!("frame | mean abs joint error (deg)");
    for (t, b) in beliefs.iter().enumerate().step_by(2) {
        let err = rad_to_deg(mean_abs_error(&b.current(), &truth[t]));
        println!("{t:5} | {err:8.3}");
    }
    let first = rad_to_deg(mean_abs_error(&beliefs[0].current(), &truth[0]));
    let last = rad_to_deg(mean_abs_error(
        &beliefs.last().unwrap().current(),
        truth.last().unwrap(),
    ));
    let settled = beliefs
        .iter()
        .zip(&truth)
        .position(|(b, t)| rad_to_deg(mean_abs_error(&b.current(), t)) < 2.0);
    match settled {
        Some(f) => println!(
            "error shrank from {first:.2} deg to {last:.2} deg; first below 2 deg at frame {f}"
        ),
        None => println!("error shrank from {first:.2} deg to {last:.2} deg"),
    }
    Ok(())
}
