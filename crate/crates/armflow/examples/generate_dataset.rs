//! Renders a small dataset for a 3-link arm and saves it to disk.
//!
//! Shows the simulator surface: arm geometry, uniform and trajectory
//! sampling, occluders, and the on-disk dataset layout (a manifest CSV plus
//! one binary PPM per sample).
//!
//! ```text
//! cargo run --example generate_dataset
//! ```

use armflow::sim::{self, ArmModel, Occluder, OccluderShape};
use armflow::Result;
use std::path::Path;

fn main() -> Result<()> {
    let size = 64;
    let arm = ArmModel::new(
        size,
        &[0.18, 0.15, 0.12], // link lengths as fractions of the image edge
        &[0.07, 0.055, 0.04],
        (0.5, 0.5), // shoulder pinned at the image centre
        2.6,        // joint limit, radians
    )?;

    // A box sitting in the upper-right workspace, drawn over the arm.
    let occluder = Occluder::new(
        OccluderShape::Rect {
            x: 35.0,
            y: 35.0,
            w: 13.0,
            h: 16.0,
        },
        [0.82, 0.78, 0.72],
        size,
    )?;

    let out = Path::new("out/example-datasets");

    // Independent uniform poses: the raw material for reference sets.
    let refs = sim::generate_uniform_dataset(&arm, 50, 7, None)?;
    sim::save_dataset(&out.join("reference"), &refs, &arm, 7)?;
    println!("reference: {} uniform poses -> {}", refs.len(), out.join("reference").display());

    // Linear joint-space trajectories: what the tracking tasks consume.
    let train = sim::generate_trajectory_dataset(&arm, 5, 8, 8, None)?;
    sim::save_dataset(&out.join("train"), &train, &arm, 8)?;
    println!(
        "train: {} trajectories x {} steps -> {}",
        5,
        8,
        out.join("train").display()
    );

    // Same world with the occluder in every frame.
    let occluded = sim::generate_trajectory_dataset(&arm, 2, 6, 9, Some(&occluder))?;
    sim::save_dataset(&out.join("occluded"), &occluded, &arm, 9)?;
    println!("occluded: {} frames -> {}", occluded.len(), out.join("occluded").display());

    // Round-trip check: images are stored as 8-bit PPM, so the loader
    // reproduces the rendered tensors up to one quantisation step.
    let back = sim::load_dataset(&out.join("train"))?;
    assert_eq!(back.len(), train.len());
    let max_err = back.records[0]
        .image
        .data()
        .iter()
        .zip(train.records[0].image.data())
        .map(|(&a, &b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_err <= 0.5 / 255.0 + 1e-6, "round trip drifted: {max_err}");
    let r = &back.records[0];
    println!(
        "first record: id {}, trajectory {:?}, angles {:?}",
        r.sample_id, r.trajectory_id, r.angles
    );
    Ok(())
}
