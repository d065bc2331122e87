//! Occlusion detection from forward/backward flow symmetry.
//!
//! For a point visible in both frames, following the forward flow and then
//! the backward flow returns to the start: flow_fwd(p) + flow_bwd(p + flow_fwd(p)) ≈ 0.
//! Where that round trip breaks down, the point had nothing consistent to
//! correspond to — it is occluded in the second frame.

use crate::error::{Error, Result};
use crate::forward::FlowBranch;
use crate::warp;
use ftnn::Tensor;

/// Both flow directions for a state transition, from the shared branch.
///
/// `flow_fwd` lives on the first image's pixel grid: p + flow_fwd(p) is the
/// position in the second image showing the same material point (it is the
/// field that warps o₂ into a prediction of o₁). `flow_bwd` is the same
/// field with the states swapped, on the second image's grid.
pub fn bidirectional_flow(
    branch: &FlowBranch,
    x_1: &[f64],
    x_2: &[f64],
) -> Result<(Tensor, Tensor)> {
    let (flow_fwd, _) = branch.forward(x_1, x_2)?;
    let (flow_bwd, _) = branch.forward(x_2, x_1)?;
    Ok((flow_fwd, flow_bwd))
}

/// Per-pixel L2 round-trip residual ‖flow_fwd(p) + flow_bwd(p + flow_fwd(p))‖.
///
/// The backward flow is sampled bilinearly at the non-integer landing point,
/// with the same border clamping as the warping layer.
pub fn symmetry_residual(flow_fwd: &Tensor, flow_bwd: &Tensor) -> Result<Vec<f64>> {
    if flow_fwd.shape() != flow_bwd.shape() {
        return Err(Error::Shape(format!(
            "flow shapes differ: {:?} vs {:?}",
            flow_fwd.shape(),
            flow_bwd.shape()
        )));
    }
    // Sampling the backward flow at p + flow_fwd(p) is itself a warp with
    // the backward flow field in the reference slot.
    let bwd_at_landing = warp::warp(flow_bwd, flow_fwd)?;
    let hw = flow_fwd.shape()[1] * flow_fwd.shape()[2];
    let mut out = Vec::with_capacity(hw);
    for p in 0..hw {
        let rx = flow_fwd.data()[p] as f64 + bwd_at_landing.data()[p] as f64;
        let ry = flow_fwd.data()[hw + p] as f64 + bwd_at_landing.data()[hw + p] as f64;
        out.push((rx * rx + ry * ry).sqrt());
    }
    Ok(out)
}

/// Predicted occlusion mask: arm pixels of the first image whose round-trip
/// residual exceeds `epsilon` pixels. Always a subset of `arm_mask`.
pub fn symmetry_check(
    flow_fwd: &Tensor,
    flow_bwd: &Tensor,
    arm_mask: &[bool],
    epsilon: f64,
) -> Result<Vec<bool>> {
    if epsilon <= 0.0 {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let residual = symmetry_residual(flow_fwd, flow_bwd)?;
    if arm_mask.len() != residual.len() {
        return Err(Error::Shape(format!(
            "arm mask has {} entries, flows have {} pixels",
            arm_mask.len(),
            residual.len()
        )));
    }
    Ok(residual
        .iter()
        .zip(arm_mask)
        .map(|(&r, &a)| a && r > epsilon)
        .collect())
}

/// Binary precision and recall of a predicted occlusion mask against ground
/// truth. Vacuous cases resolve to 1: no predicted positives → precision 1,
/// no true positives → recall 1 (so identical empty masks score (1, 1)).
pub fn evaluate_occlusion(predicted: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "mask lengths differ: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 1.0 } else { tp as f64 / (tp + fne) as f64 };
    Ok((precision, recall))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_flow(h: usize, w: usize, dx: f32, dy: f32) -> Tensor {
        let mut data = vec![dx; h * w];
        data.extend(vec![dy; h * w]);
        Tensor::new(vec![2, h, w], data).unwrap()
    }

    #[test]
    fn exactly_antisymmetric_flows_yield_the_empty_mask() {
        let (h, w) = (12, 12);
        let fwd = constant_flow(h, w, 1.7, -2.3);
        let bwd = constant_flow(h, w, -1.7, 2.3);
        let arm = vec![true; h * w];
        for eps in [0.1, 1.5, 10.0] {
            let mask = symmetry_check(&fwd, &bwd, &arm, eps).unwrap();
            assert!(mask.iter().all(|&m| !m), "eps {eps}");
        }
    }

    #[test]
    fn constructed_violation_flags_every_arm_pixel() {
        let (h, w) = (10, 8);
        let eps = 1.5;
        let fwd = constant_flow(h, w, 0.0, 0.0);
        let bwd = constant_flow(h, w, (2.0 * eps) as f32, 0.0);
        let arm: Vec<bool> = (0..h * w).map(|i| i % 3 != 0).collect();
        let mask = symmetry_check(&fwd, &bwd, &arm, eps).unwrap();
        assert_eq!(mask, arm);
        // Threshold limit: a huge epsilon clears everything.
        let mask = symmetry_check(&fwd, &bwd, &arm, 1e6).unwrap();
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn masks_shrink_monotonically_in_epsilon_and_respect_support() {
        let (h, w) = (16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| {
            Tensor::new(
                vec![2, h, w],
                (0..2 * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap()
        };
        let fwd = mk(&mut rng);
        let bwd = mk(&mut rng);
        let arm: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.6)).collect();
        let mut previous: Option<Vec<bool>> = None;
        for eps in [0.2, 0.5, 1.0, 2.0, 4.0] {
            let mask = symmetry_check(&fwd, &bwd, &arm, eps).unwrap();
            for (m, a) in mask.iter().zip(&arm) {
                assert!(!m || *a, "mask must stay inside the arm support");
            }
            if let Some(prev) = &previous {
                for (now, before) in mask.iter().zip(prev) {
                    assert!(!now || *before, "larger epsilon grew the mask");
                }
            }
            previous = Some(mask);
        }
    }

    #[test]
    fn residual_matches_a_hand_composed_round_trip() {
        // 1×4 row, forward flow +1 px in x, backward flow −1 everywhere:
        // perfect round trip. Then poison the backward value at the landing
        // point of pixel 1 and only that pixel's residual moves.
        let (h, w) = (1, 4);
        let fwd = constant_flow(h, w, 1.0, 0.0);
        let mut bwd = constant_flow(h, w, -1.0, 0.0);
        let r0 = symmetry_residual(&fwd, &bwd).unwrap();
        assert!(r0.iter().all(|&r| r < 1e-12));
        bwd.data_mut()[2] = 3.0; // x-component at pixel (0,2) = landing of pixel 1
        let r1 = symmetry_residual(&fwd, &bwd).unwrap();
        assert!((r1[1] - 4.0).abs() < 1e-6, "pixel 1 residual {}", r1[1]);
        assert!(r1[0] < 1e-6);
        // Pixel 2 lands on pixel 3 (untouched); pixel 3 clamps to itself.
        assert!(r1[2] < 1e-6 && r1[3] < 1e-6);
    }

    #[test]
    fn precision_recall_counting_and_vacuous_conventions() {
        let t = true;
        let f = false;
        // Identical non-empty masks.
        assert_eq!(evaluate_occlusion(&[t, f, t], &[t, f, t]).unwrap(), (1.0, 1.0));
        // Both empty.
        assert_eq!(evaluate_occlusion(&[f, f], &[f, f]).unwrap(), (1.0, 1.0));
        // Prediction empty, truth not: vacuous precision, zero recall.
        assert_eq!(evaluate_occlusion(&[f, f], &[t, f]).unwrap(), (1.0, 0.0));
        // Prediction covers truth plus half again as many extras.
        let truth = [t, t, t, t, f, f, f, f, f, f];
        let pred = [t, t, t, t, t, t, f, f, f, f];
        let (p, r) = evaluate_occlusion(&pred, &truth).unwrap();
        assert!((p - 4.0 / 6.0).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
        // Length mismatch is an error.
        assert!(evaluate_occlusion(&[t], &[t, f]).is_err());
        // Non-positive epsilon is rejected.
        let flow = constant_flow(2, 2, 0.0, 0.0);
        assert!(symmetry_check(&flow, &flow, &[f; 4], 0.0).is_err());
    }

    #[test]
    fn bidirectional_flows_are_deterministic_and_coincide_for_equal_states() {
        let branch = FlowBranch::new(3, 16, 5).unwrap();
        let x1 = vec![0.4, -0.2, 0.6];
        let x2 = vec![-0.1, 0.5, 0.3];
        let (f1, b1) = bidirectional_flow(&branch, &x1, &x2).unwrap();
        let (f2, b2) = bidirectional_flow(&branch, &x1, &x2).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(b1, b2);
        assert_eq!(f1.shape(), &[2, 16, 16]);
        // Same state both sides → identical branch input → identical flows,
        // and with the zero-initialized head they are exactly zero.
        let (ff, bb) = bidirectional_flow(&branch, &x1, &x1).unwrap();
        assert_eq!(ff, bb);
        let mean_mag: f64 = ff.data().iter().map(|&v| v.abs() as f64).sum::<f64>()
            / ff.len() as f64;
        assert!(mean_mag < 0.5);
    }
}
