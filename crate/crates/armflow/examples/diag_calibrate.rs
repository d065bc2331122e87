//! Temporary full-scale calibration for the acceptance budget (not public).

use armflow::config::RunConfig;
use armflow::ekf::{
    estimate_sensor_noise, image_to_obs, track_ekf, GaussianBelief, KnnFlowObservation,
    ObservationModel, TransitionModel,
};
use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::metrics::{deg_to_rad, mean_abs_error, rad_to_deg};
use armflow::sim;
use armflow::Result;
use nalgebra::DVector;
use std::time::Instant;

fn main() -> Result<()> {
    let cfg = RunConfig::default();
    let arm = cfg.arm()?;
    let t0 = Instant::now();
    let train = sim::generate_trajectory_dataset(&arm, 100, 20, 7, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 500, 8, None)?;
    let test = sim::generate_trajectory_dataset(&arm, 3, 50, 9, None)?;
    println!("rendered 2000 train + 500 refs + 150 test in {:.1}s", t0.elapsed().as_secs_f64());

    let store = ReferenceStore::build(&refs)?;
    let mut branch = FlowBranch::new(cfg.dof, cfg.image_size, 7)?;

    // 1-NN baseline on the test split.
    let base = KnnFlowModel::new(branch, refs.clone(), 1)?;
    let t0 = Instant::now();
    let l1_nn = held_out_l1(&base, &test)?;
    println!("1-NN baseline: mean L1 {l1_nn:.6} ({:.1}s for 150 frames)", t0.elapsed().as_secs_f64());
    let KnnFlowModel { branch: b, .. } = base;
    branch = b;

    let tc = TrainConfig { epochs: 10, batch_size: 16, lr: 1e-3, lambda: 1e-5, seed: 7 };
    let mut epoch_times = Vec::new();
    let mut last = Instant::now();
    train_forward(&mut branch, &train, &store, &refs, &tc, |e, loss, _| {
        let dt = last.elapsed().as_secs_f64();
        last = Instant::now();
        epoch_times.push(dt);
        println!("epoch {e}: loss {loss:.3} wall {dt:.1}s");
        Ok(())
    })?;

    let model = KnnFlowModel::new(branch, refs, 1)?;
    let t0 = Instant::now();
    let l1_flow = held_out_l1(&model, &test)?;
    println!(
        "1-NN-FLOW k=1: mean L1 {l1_flow:.6} vs 1-NN {l1_nn:.6} -> {}",
        t0.elapsed().as_secs_f64().max(0.0) as i64
    );
    println!("ordering flow<nn: {}", l1_flow < l1_nn);

    // Observation signal-to-noise at a test state.
    let t_state = &test.records[0].angles;
    let y0 = image_to_obs(&test.records[0].image);
    let obs = KnnFlowObservation { model: &model };
    let lin = obs.linearize(t_state)?;
    println!("|y - g(x_true)| = {:.3}", (&y0 - &lin.predicted).norm());
    for j in 0..cfg.dof {
        let d = deg_to_rad(2.0);
        let mut xp = t_state.clone();
        xp[j] += d;
        let lp = obs.linearize(&xp)?;
        println!(
            "joint {j} +2deg: |dg| {:.4}",
            (&lp.predicted - &lin.predicted).norm()
        );
    }

    // Sensor noise from strided train residuals, then EKF at 10 and 20 deg.
    let t0 = Instant::now();
    let residuals: Vec<Vec<f64>> = train
        .records
        .iter()
        .step_by(4)
        .map(|rec| {
            let pred = model.predict(&rec.angles)?;
            Ok(rec.image.data().iter().zip(pred.data()).map(|(&t, &p)| t as f64 - p as f64).collect())
        })
        .collect::<Result<_>>()?;
    let noise = estimate_sensor_noise(&residuals, cfg.rank)?;
    println!(
        "noise: rank {} from {} residuals in {:.1}s, top var {:.2e}, bottom {:.2e}",
        noise.rank(),
        residuals.len(),
        t0.elapsed().as_secs_f64(),
        noise.variances[0],
        noise.variances[noise.rank() - 1]
    );

    let truth: Vec<Vec<f64>> = test
        .records
        .iter()
        .filter(|r| r.trajectory_id == Some(0))
        .map(|r| r.angles.clone())
        .collect();
    let frames: Vec<DVector<f64>> = test
        .records
        .iter()
        .filter(|r| r.trajectory_id == Some(0))
        .map(|r| image_to_obs(&r.image))
        .collect();
    let trans = TransitionModel { dof: cfg.dof, dt: cfg.dt, gamma: cfg.gamma };
    for offset_deg in [10.0, 20.0] {
        let off = deg_to_rad(offset_deg);
        let x0: Vec<f64> = truth[0]
            .iter()
            .enumerate()
            .map(|(j, &q)| (q + if j % 2 == 0 { off } else { -off }).clamp(-2.6, 2.6))
            .collect();
        let prior = GaussianBelief::from_prior(&x0, off);
        let t0 = Instant::now();
        let beliefs = track_ekf(&obs, &trans, &noise, &frames, &prior)?;
        let errs: Vec<f64> = beliefs
            .iter()
            .zip(&truth)
            .map(|(b, t)| rad_to_deg(mean_abs_error(&b.current(), t)))
            .collect();
        println!(
            "EKF offset {offset_deg} deg ({:.0}s): first {:.2} mid {:.2} last {:.2}",
            t0.elapsed().as_secs_f64(),
            errs[0],
            errs[errs.len() / 2],
            errs[errs.len() - 1]
        );
        let tail: Vec<String> = errs.iter().rev().take(10).map(|e| format!("{e:.1}")).collect();
        println!("  last 10 frames: {}", tail.join(" "));
    }
    println!("epoch wall times: {:?}", epoch_times);
    Ok(())
}

fn held_out_l1(model: &KnnFlowModel, test: &sim::Dataset) -> Result<f64> {
    let mut abs = 0.0f64;
    let mut n = 0usize;
    for rec in &test.records {
        let pred = model.predict(&rec.angles)?;
        for (&p, &t) in pred.data().iter().zip(rec.image.data()) {
            abs += (p as f64 - t as f64).abs();
            n += 1;
        }
    }
    Ok(abs / n as f64)
}
