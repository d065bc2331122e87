//! Tracks joint angles by running the inverse model (image in, state out) on
//! every frame independently — no filter, no motion model, no prior.
//!
//! This is the memoryless counterpart to `track_with_ekf`: each estimate
//! depends only on its own frame, so there is nothing to converge and
//! nothing to drift. The trade-off is that every frame carries the full
//! regression error of the network.
//!
//! ```text
//! cargo run --example track_with_inverse
//! ```

use armflow::inverse::{track_by_inverse, train_inverse, InverseCnn};
use armflow::forward::TrainConfig;
use armflow::metrics::{per_joint_rmse, rad_to_deg};
use armflow::sim::{self, ArmModel};
use armflow::Result;

fn main() -> Result<()> {
    // The inverse net halves resolution five times, so 32 px is the
    // smallest image size it accepts.
    let size = 32;
    let arm = ArmModel::new(size, &[0.24, 0.20], &[0.12, 0.10], (0.5, 0.5), 2.6)?;
    let train = sim::generate_trajectory_dataset(&arm, 40, 6, 31, None)?;

    let mut model = InverseCnn::new(arm.dof, size, 33)?;
    let cfg = TrainConfig {
        epochs: 24,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train_inverse(&mut model, &train, &cfg, |e, loss, _| {
        if e % 4 == 0 || e + 1 == 24 {
            println!("epoch {e:2}: train loss {loss:.5}");
        }
        Ok(())
    })?;

    let test = sim::generate_trajectory_dataset(&arm, 1, 15, 34, None)?;
    let truth = test.keys();
    let frames: Vec<_> = test.records.iter().map(|r| r.image.clone()).collect();
    let estimates = track_by_inverse(&model, &frames)?;

    println!("frame | per-joint error (deg)");
    for (t, (est, tru)) in estimates.iter().zip(&truth).enumerate() {
        let errs: Vec<String> = est
            .iter()
            .zip(tru)
            .map(|(e, t)| format!("{:6.2}", rad_to_deg((e - t).abs())))
            .collect();
        println!("{t:5} | {}", errs.join(" "));
    }
    let rmse = per_joint_rmse(&estimates, &truth)?;
    for (j, r) in rmse.iter().enumerate() {
        println!("joint {j}: rmse {:.2} deg", rad_to_deg(*r));
    }
    Ok(())
}
