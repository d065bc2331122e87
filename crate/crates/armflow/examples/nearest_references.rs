//! Exercises the KD-tree reference selector directly: exact k-nearest
//! neighbours in joint space, with and without the trajectory-disjoint
//! constraint used during training.
//!
//! Disjoint mode keeps at most one neighbour per trajectory, so a query
//! near one trajectory cannot fill all k slots with consecutive frames of
//! that same motion — the extra slots go to other trajectories or to
//! standalone reference poses. Queries here show how that changes results.
//!
//! ```text
//! cargo run --example nearest_references
//! ```

use armflow::knn::ReferenceStore;
use armflow::sim::{self, ArmModel};
use armflow::Result;

fn main() -> Result<()> {
    let arm = ArmModel::new(32, &[0.22, 0.18], &[0.09, 0.07], (0.5, 0.5), 2.6)?;

    // Two pools in one store: trajectory samples (ids tagged with their
    // trajectory) and i.i.d. reference poses (no trajectory).
    let mut ds = sim::generate_trajectory_dataset(&arm, 3, 5, 51, None)?;
    let refs = sim::generate_uniform_dataset(&arm, 20, 52, None)?;
    let base = ds.len() as u32;
    for mut r in refs.records {
        r.sample_id += base;
        ds.records.push(r);
    }
    let store = ReferenceStore::build(&ds)?;
    println!(
        "store: {} samples, tree depth {}",
        store.len(),
        store.depth()
    );

    // Query at the first sample of trajectory 0. Unconstrained search finds
    // the sample itself (distance zero) and its trajectory neighbours.
    let query = ds.records[0].angles.clone();
    let free = store.query_knn(&query, 4, false)?;
    println!("\nunconstrained 4-NN of trajectory sample 0:");
    for (id, d) in &free {
        let rec = ds.by_id(*id).unwrap();
        println!(
            "  id {id:3} trajectory {:?} distance {d:.4}",
            rec.trajectory_id
        );
    }

    // Disjoint search keeps at most one result per trajectory.
    let disjoint = store.query_knn(&query, 4, true)?;
    println!("\ntrajectory-disjoint 4-NN of the same query:");
    let mut seen = Vec::new();
    for (id, d) in &disjoint {
        let rec = ds.by_id(*id).unwrap();
        if let Some(t) = rec.trajectory_id {
            assert!(!seen.contains(&t), "trajectory {t} appeared twice");
            seen.push(t);
        }
        println!(
            "  id {id:3} trajectory {:?} distance {d:.4}",
            rec.trajectory_id
        );
    }
    Ok(())
}
