//! Temporary diagnostic for the EKF example (not part of the public set).

use armflow::ekf::{
    ekf_correct, estimate_sensor_noise, image_to_obs, GaussianBelief, KnnFlowObservation,
    ObservationModel,
};
use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::metrics::{deg_to_rad, mean_abs_error, rad_to_deg};
use armflow::sim::{self, ArmModel};
use armflow::Result;

fn main() -> Result<()> {
    let size = 16;
    let arm = ArmModel::new(size, &[0.22, 0.18], &[0.14, 0.11], (0.5, 0.5), 2.6)?;
    let train = sim::generate_trajectory_dataset(&arm, 25, 4, 21, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 25, 22, None)?;
    let store = ReferenceStore::build(&refs)?;
    let mut branch = FlowBranch::new(arm.dof, size, 23)?;
    let cfg = TrainConfig { epochs: 30, batch_size: 8, ..TrainConfig::default() };
    train_forward(&mut branch, &train, &store, &refs, &cfg, |_, _, _| Ok(()))?;
    let model = KnnFlowModel::new(branch, refs, 1)?;

    let residuals: Vec<Vec<f64>> = train
        .records
        .iter()
        .step_by(2)
        .map(|rec| {
            let pred = model.predict(&rec.angles)?;
            Ok(rec.image.data().iter().zip(pred.data()).map(|(&t, &p)| t as f64 - p as f64).collect())
        })
        .collect::<Result<_>>()?;
    let noise = estimate_sensor_noise(&residuals, 8)?;
    println!("variances: {:?}", noise.variances.as_slice());

    let test = sim::generate_trajectory_dataset(&arm, 1, 20, 24, None)?;
    let truth = test.keys();
    let x_true = &truth[0];
    let y0 = image_to_obs(&test.records[0].image);

    let obs = KnnFlowObservation { model: &model };

    // (a) Linearization quality: finite state steps vs Jacobian prediction.
    let lin = obs.linearize(x_true)?;
    let model_gap = (&y0 - &lin.predicted).norm();
    println!("|y - g(x_true)| = {model_gap:.3}  (pure model error at truth)");
    for j in 0..arm.dof {
        for deg in [2.0, 15.0] {
            let d = deg_to_rad(deg);
            let mut xp = x_true.clone();
            xp[j] += d;
            let lp = obs.linearize(&xp)?;
            let dg_true = &lp.predicted - &lin.predicted;
            let dg_lin = &lin.jacobian * nalgebra::DVector::from_fn(arm.dof, |i, _| if i == j { d } else { 0.0 });
            let cos = dg_true.dot(&dg_lin) / (dg_true.norm() * dg_lin.norm()).max(1e-12);
            println!(
                "joint {j} +{deg:4.1}deg: |dg_true| {:8.4} |J d| {:8.4} cosine {cos:6.3}",
                dg_true.norm(),
                dg_lin.norm()
            );
        }
    }

    // (b) One correction from an offset prior: does the mean move home?
    for offset_deg in [5.0, 15.0] {
        let off = deg_to_rad(offset_deg);
        let x0: Vec<f64> = x_true.iter().enumerate().map(|(j, &q)| q + if j % 2 == 0 { off } else { -off }).collect();
        let prior = GaussianBelief::from_prior(&x0, off);
        let lin0 = obs.linearize(&prior.current())?;
        let innov = &y0 - &lin0.predicted;
        let projected = noise.basis.transpose() * &innov;
        println!(
            "offset {offset_deg:4.1}deg: |innov| {:8.3} |proj| {:8.3} ({}d of {}d)",
            innov.norm(),
            projected.norm(),
            noise.rank(),
            innov.len()
        );
        let post = ekf_correct(&prior, &lin0, &noise, &y0)?;
        let before = rad_to_deg(mean_abs_error(&prior.current(), x_true));
        let after = rad_to_deg(mean_abs_error(&post.current(), x_true));
        println!("  one correction: mean abs err {before:.2} -> {after:.2} deg");
    }
    Ok(())
}
