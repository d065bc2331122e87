//! Detects occluded arm pixels with the flow-symmetry test.
//!
//! The idea: compute optical flow forward (pose A to pose B) and backward
//! (B to A) with the trained model. Where both flows see the arm, following
//! the forward flow and then sampling the backward flow at the landing point
//! returns (approximately) to the start. Where the arm disappears behind an
//! occluder, the backward flow has nothing to lock onto and the round trip
//! breaks down, so large round-trip residuals over the arm silhouette flag
//! occluded pixels.
//!
//! The transition matters: it has to be small enough to stay within the flow
//! magnitudes the model saw in training, while still pushing part of the arm
//! behind the block. A short geometric search below picks one.
//!
//! ```text
//! cargo run --release --example detect_occlusion
//! ```

use armflow::forward::{train_forward, FlowBranch, TrainConfig};
use armflow::knn::ReferenceStore;
use armflow::occlusion::{bidirectional_flow, evaluate_occlusion, symmetry_check, symmetry_residual};
use armflow::sim::{self, ArmModel, Occluder, OccluderShape};
use armflow::Result;
use std::path::Path;

/// Transition with a fully visible start pose that moves the most arm
/// pixels behind the occluder, from a coarse grid of starts and steps.
fn pick_transition(arm: &ArmModel, occ: &Occluder) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut best: Option<(Vec<f64>, Vec<f64>, usize)> = None;
    let deltas: [[f64; 2]; 3] = [[0.30, -0.25], [-0.30, 0.25], [0.28, 0.28]];
    for i in 0..15 {
        let q0 = -0.2 + 0.1 * i as f64;
        for j1 in [-0.5, -0.25, 0.0, 0.25, 0.5] {
            let q1 = vec![q0, j1];
            let (now, _) = sim::transition_occlusion_truth(arm, &q1, &q1, Some(occ))?;
            if now.iter().any(|&b| b) {
                continue; // part of the arm already starts hidden
            }
            for d in &deltas {
                let q2: Vec<f64> = q1.iter().zip(d).map(|(&a, &b)| a + b).collect();
                if q2.iter().any(|&v| v.abs() > arm.joint_limit) {
                    continue;
                }
                let (truth, _) = sim::transition_occlusion_truth(arm, &q1, &q2, Some(occ))?;
                let t = truth.iter().filter(|&&b| b).count();
                if best.as_ref().map_or(true, |b| t > b.2) {
                    best = Some((q1.clone(), q2, t));
                }
            }
        }
    }
    best.ok_or_else(|| armflow::Error::Config("no occluding transition found".into()))
}

fn main() -> Result<()> {
    let size = 32;
    let arm = ArmModel::new(size, &[0.24, 0.20], &[0.12, 0.10], (0.5, 0.5), 2.6)?;
    // A block parked up-right of the base, present in every rendered frame.
    let occluder = Occluder::new(
        OccluderShape::Rect { x: 19.0, y: 17.0, w: 7.0, h: 9.0 },
        [0.82, 0.78, 0.72],
        size,
    )?;

    // Train the flow model on scenes that contain the occluder, so its flows
    // are credible in this world.
    let train = sim::generate_trajectory_dataset(&arm, 50, 10, 41, Some(&occluder))?;
    let refs = sim::generate_uniform_dataset(&arm, 300, 42, Some(&occluder))?;
    let store = ReferenceStore::build(&refs)?;
    let mut branch = FlowBranch::new(arm.dof, size, 43)?;
    let cfg = TrainConfig { epochs: 10, batch_size: 16, ..TrainConfig::default() };
    train_forward(&mut branch, &train, &store, &refs, &cfg, |e, loss, _| {
        if e % 3 == 0 || e + 1 == 10 {
            println!("epoch {e}: loss {loss:.3}");
        }
        Ok(())
    })?;

    let (q1, q2, expected) = pick_transition(&arm, &occluder)?;
    println!(
        "transition [{:.2} {:.2}] -> [{:.2} {:.2}] should hide {expected} arm pixels",
        q1[0], q1[1], q2[0], q2[1]
    );
    let (flow_fwd, flow_bwd) = bidirectional_flow(&branch, &q1, &q2)?;

    let arm_mask = sim::silhouette(&arm, &q1)?;
    let residual = symmetry_residual(&flow_fwd, &flow_bwd)?;
    let on_arm: Vec<f64> = residual
        .iter()
        .zip(&arm_mask)
        .filter(|(_, &m)| m)
        .map(|(&r, _)| r)
        .collect();
    println!(
        "round-trip residual over {} arm pixels: min {:.2}, max {:.2} px",
        on_arm.len(),
        on_arm.iter().cloned().fold(f64::INFINITY, f64::min),
        on_arm.iter().cloned().fold(0.0, f64::max),
    );

    let epsilon = 1.5;
    let mask = symmetry_check(&flow_fwd, &flow_bwd, &arm_mask, epsilon)?;
    let (truth, _) = sim::transition_occlusion_truth(&arm, &q1, &q2, Some(&occluder))?;
    let (precision, recall) = evaluate_occlusion(&mask, &truth)?;
    println!(
        "flagged {} px (truth {} px) at epsilon {epsilon} px: precision {precision:.3}, recall {recall:.3}",
        mask.iter().filter(|&&b| b).count(),
        truth.iter().filter(|&&b| b).count(),
    );

    let out = Path::new("out/example-occlusion");
    std::fs::create_dir_all(out)?;
    sim::write_ppm(&out.join("pose-a.ppm"), &sim::render(&arm, &q1, Some(&occluder))?)?;
    sim::write_ppm(&out.join("pose-b.ppm"), &sim::render(&arm, &q2, Some(&occluder))?)?;
    sim::write_pgm(&out.join("detected.pgm"), &mask, size, size)?;
    sim::write_pgm(&out.join("truth.pgm"), &truth, size, size)?;
    println!("wrote poses and masks to {}", out.display());
    Ok(())
}
