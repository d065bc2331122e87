//! Predicts a held-out trajectory frame by frame with the flow model and
//! writes both the predictions and the ground-truth renders as PPM files, so
//! the two sequences can be flipped through side by side.
//!
//! ```text
//! cargo run --example predict_sequence
//! ls out/example-predict
//! ```

use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::sim::{self, ArmModel};
use armflow::Result;
use std::path::Path;

fn main() -> Result<()> {
    let size = 16;
    let arm = ArmModel::new(size, &[0.22, 0.18], &[0.09, 0.07], (0.5, 0.5), 2.6)?;
    let train = sim::generate_trajectory_dataset(&arm, 10, 4, 11, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 30, 12, None)?;
    let store = ReferenceStore::build(&refs)?;

    let mut branch = FlowBranch::new(arm.dof, size, 13)?;
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train_forward(&mut branch, &train, &store, &refs, &cfg, |_, _, _| Ok(()))?;

    // Blend two references per frame; the confidence head arbitrates.
    let model = KnnFlowModel::new(branch, refs, 2)?;

    let test = sim::generate_trajectory_dataset(&arm, 1, 10, 14, None)?;
    let states = test.keys();
    let preds = model.predict_sequence(&states)?;

    let out = Path::new("out/example-predict");
    std::fs::create_dir_all(out)?;
    for (i, (pred, rec)) in preds.iter().zip(&test.records).enumerate() {
        sim::write_ppm(&out.join(format!("pred-{i:03}.ppm")), pred)?;
        sim::write_ppm(&out.join(format!("true-{i:03}.ppm")), &rec.image)?;
        let l1: f64 = pred
            .data()
            .iter()
            .zip(rec.image.data())
            .map(|(&p, &t)| (p as f64 - t as f64).abs())
            .sum::<f64>()
            / pred.len() as f64;
        println!("frame {i:2}: mean L1 {l1:.5}");
    }
    println!("wrote {} frame pairs to {}", preds.len(), out.display());
    Ok(())
}
