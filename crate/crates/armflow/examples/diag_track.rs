//! Temporary tracking calibration harness (not public). Persists datasets and
//! checkpoints under /root/scratch-calib so EKF scans don't retrain.
//!
//!   cargo run --example diag_track -- train <epochs>
//!   cargo run --example diag_track -- scan

use armflow::ekf::{
    estimate_sensor_noise, image_to_obs, track_ekf, GaussianBelief, KnnFlowObservation,
    ObservationModel, TransitionModel,
};
use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::metrics::{deg_to_rad, mean_abs_error, rad_to_deg};
use armflow::sim::{self, ArmModel, Dataset};
use armflow::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::Instant;

const DIR: &str = "/root/scratch-calib";
const SIZE: usize = 64;

fn arm() -> Result<ArmModel> {
    // Wide links, and a long last link so the tip joint moves enough pixels
    // per degree to be observable. Joint limits tighter than the CLI default:
    // the same reference budget covers the reachable set far more densely.
    ArmModel::new(SIZE, &[0.14, 0.13, 0.15], &[0.10, 0.085, 0.075], (0.5, 0.5), 1.6)
}

/// Slow held-out linear trajectory: random start, endpoints at most
/// max_step radians apart per joint.
fn slow_trajectory(arm: &ArmModel, steps: usize, seed: u64, max_step: f64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = arm.sample_config(&mut rng);
    let b: Vec<f64> = a
        .iter()
        .map(|&q| {
            let d = rng.gen_range(-max_step..max_step);
            (q + d).clamp(-arm.joint_limit, arm.joint_limit)
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
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("scan");
    let arm = arm()?;
    let dir = Path::new(DIR);

    if mode == "train" {
        let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
        let train = sim::generate_trajectory_dataset(&arm, 100, 20, 7, None)?;
        let refs = sim::generate_uniform_dataset(&arm, 8000, 8, None)?;
        sim::save_dataset(&dir.join("train"), &train, &arm, 7)?;
        sim::save_dataset(&dir.join("refs"), &refs, &arm, 8)?;
        let store = ReferenceStore::build(&refs)?;
        // Resume from an existing checkpoint if present so depth can be
        // added incrementally across invocations.
        let ckpt = dir.join("branch.ftnn");
        let mut branch = if ckpt.is_file() {
            println!("resuming from {}", ckpt.display());
            FlowBranch::load(&ckpt, 3, SIZE)?
        } else {
            FlowBranch::new(3, SIZE, 7)?
        };
        let tc = TrainConfig { epochs, batch_size: 16, lr: 1e-3, lambda: 1e-5, seed: 7 };
        let mut last = Instant::now();
        train_forward(&mut branch, &train, &store, &refs, &tc, |e, loss, net| {
            println!("epoch {e}: loss {loss:.3} wall {:.0}s", last.elapsed().as_secs_f64());
            last = Instant::now();
            ftnn::save_checkpoint(net, &ckpt)?;
            Ok(())
        })?;
        branch.save(&ckpt)?;
        println!("saved {}", ckpt.display());
        return Ok(());
    }

    // ---- scan / dense modes ----
    let train = sim::load_dataset(&dir.join("train"))?;
    let refs = if mode == "dense" {
        let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4000);
        println!("dense reference set: {n} samples");
        sim::generate_uniform_dataset(&arm, n, 8, None)?
    } else {
        sim::load_dataset(&dir.join("refs"))?
    };

    let trajectories: Vec<(String, Dataset)> = {
        let mut v = Vec::new();
        for ms in [0.25, 0.5] {
            v.push((format!("ms{ms}"), slow_trajectory(&arm, 50, 99, ms)?));
        }
        v.push(("fast".into(), sim::generate_trajectory_dataset(&arm, 1, 50, 9, None)?));
        v
    };
    let slow = &trajectories[0].1;

    // Held-out ordering sanity: flow vs nearest-reference on a few frames.
    {
        let model = KnnFlowModel::new(
            FlowBranch::load(&dir.join("branch.ftnn"), 3, SIZE)?,
            refs.clone(),
            1,
        )?;
        let held = sim::generate_trajectory_dataset(&arm, 4, 10, 33, None)?;
        let (mut flow_l1, mut nn_l1, mut n) = (0.0f64, 0.0f64, 0usize);
        for rec in &held.records {
            let pred = model.predict(&rec.angles)?;
            let near = armflow::forward::nn_baseline_predict(&model.store, &model.refs, &rec.angles)?;
            for ((&p, &b), &t) in pred.data().iter().zip(near.data()).zip(rec.image.data()) {
                flow_l1 += (p as f64 - t as f64).abs();
                nn_l1 += (b as f64 - t as f64).abs();
                n += 1;
            }
        }
        println!(
            "held-out 40 frames: flow k=1 L1 {:.6} vs 1-NN {:.6}",
            flow_l1 / n as f64,
            nn_l1 / n as f64
        );
    }

    for k in [1usize, 2] {
        let model = KnnFlowModel::new(
            FlowBranch::load(&dir.join("branch.ftnn"), 3, SIZE)?,
            refs.clone(),
            k,
        )?;
        // Signal vs model error along the slow trajectory.
        let obs = KnnFlowObservation { model: &model };
        for probe in [0usize, 25, 49] {
            let xs = &slow.records[probe].angles;
            let ys = image_to_obs(&slow.records[probe].image);
            let lin = obs.linearize(xs)?;
            print!("k={k} t={probe}: |y-g| = {:.3}, 2deg signals", (&ys - &lin.predicted).norm());
            for j in 0..3 {
                let mut xp = xs.clone();
                xp[j] += deg_to_rad(2.0);
                let lp = obs.linearize(&xp)?;
                print!(" {:.3}", (&lp.predicted - &lin.predicted).norm());
            }
            println!();
        }

        let t0 = Instant::now();
        let residuals: Vec<Vec<f64>> = train
            .records
            .iter()
            .step_by(4)
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
        println!("  residuals in {:.0}s", t0.elapsed().as_secs_f64());

        for rank in [8usize, 16, 32] {
            let noise = estimate_sensor_noise(&residuals, rank)?;
            for dt in [0.5f64, 0.25] {
            for (name, ds) in trajectories.iter().map(|(n, d)| (n.as_str(), d)) {
                let truth: Vec<Vec<f64>> = ds.records.iter().map(|r| r.angles.clone()).collect();
                let frames: Vec<DVector<f64>> =
                    ds.records.iter().map(|r| image_to_obs(&r.image)).collect();
                let trans = TransitionModel { dof: 3, dt, gamma: 1e-6 };
                for offset_deg in [10.0, 20.0] {
                    let off = deg_to_rad(offset_deg);
                    let x0: Vec<f64> = truth[0]
                        .iter()
                        .enumerate()
                        .map(|(j, &q)| (q + if j % 2 == 0 { off } else { -off }).clamp(-2.6, 2.6))
                        .collect();
                    let prior = GaussianBelief::from_prior(&x0, off);
                    let beliefs = track_ekf(&obs, &trans, &noise, &frames, &prior)?;
                    let errs: Vec<f64> = beliefs
                        .iter()
                        .zip(&truth)
                        .map(|(b, t)| rad_to_deg(mean_abs_error(&b.current(), t)))
                        .collect();
                    let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
                    println!(
                        "  k={k} rank={rank} dt={dt} {name} off={offset_deg}: first {:.2} last {:.2} min {:.2} | {}",
                        errs[0],
                        errs[errs.len() - 1],
                        min,
                        errs.iter()
                            .step_by(5)
                            .map(|e| format!("{e:.0}"))
                            .collect::<Vec<_>>()
                            .join(" ")
                    );
                }
            }
            }
        }
    }
    Ok(())
}
