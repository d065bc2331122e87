//! Trains the flow-warping forward model on a small world and shows why the
//! architecture is safe to train: the zero-initialised flow head makes the
//! untrained model predict exactly its nearest reference image, so learning
//! starts from the nearest-neighbour baseline and can only refine it.
//!
//! ```text
//! cargo run --example train_forward_model
//! ```

use armflow::forward::{train_forward, FlowBranch, KnnFlowModel, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::metrics::compute_metrics;
use armflow::sim::{self, ArmModel};
use armflow::Result;

fn main() -> Result<()> {
    let size = 16;
    let arm = ArmModel::new(size, &[0.22, 0.18], &[0.09, 0.07], (0.5, 0.5), 2.6)?;

    // Deliberately sparse reference set: with only a couple dozen stored
    // poses the nearest neighbour is usually visibly wrong, which is exactly
    // the regime the flow model is for.
    let train = sim::generate_trajectory_dataset(&arm, 25, 4, 1, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 25, 2, None)?;
    let test = sim::generate_trajectory_dataset(&arm, 3, 4, 3, None)?;
    let store = ReferenceStore::build(&refs)?;

    let mut branch = FlowBranch::new(arm.dof, size, 5)?;

    // Baseline quality before any training: identical to 1-NN lookup.
    let untrained = KnnFlowModel::new(branch, refs.clone(), 1)?;
    let (l1_before, _) = score(&untrained, &test)?;
    println!("untrained (== nearest neighbour): mean L1 {l1_before:.5}");
    let KnnFlowModel { branch: b, refs, .. } = untrained;
    branch = b;

    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        lr: 1e-3,
        lambda: 1e-5,
        seed: 5,
    };
    let losses = train_forward(&mut branch, &train, &store, &refs, &cfg, |e, loss, _| {
        if e % 5 == 0 || e == 29 {
            println!("epoch {e}: train loss {loss:.5}");
        }
        Ok(())
    })?;
    assert_eq!(losses.len(), cfg.epochs);

    let trained = KnnFlowModel::new(branch, refs, 1)?;
    let (l1_after, rms_after) = score(&trained, &test)?;
    println!("trained: mean L1 {l1_after:.5}, rms {rms_after:.5}");
    println!(
        "improvement over nearest neighbour: {:.1}%",
        100.0 * (l1_before - l1_after) / l1_before
    );
    Ok(())
}

/// Held-out image error of a model over a dataset.
fn score(model: &KnnFlowModel, test: &sim::Dataset) -> Result<(f64, f64)> {
    let preds = model.predict_sequence(&test.keys())?;
    let truth: Vec<_> = test.records.iter().map(|r| r.image.clone()).collect();
    compute_metrics(&preds, &truth)
}
