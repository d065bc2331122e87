//! KD-tree over joint configurations for reference selection.
//!
//! The store must return *exactly* what a brute-force linear scan returns —
//! same ids, same distances, bit for bit — because downstream behavior (which
//! reference image gets warped) switches on the result. Distances are plain
//! Euclidean on raw radians: joint limits keep angles far from ±π, so no
//! wrap-around metric is needed.
//!
//! Queries run as a lazy best-first traversal over a heap of subtrees and
//! points, ordered by (squared distance, sample id). That yields stored
//! points in globally ascending order, which is what makes the greedy
//! trajectory-disjoint filter equivalent to filtering a fully sorted scan.

use crate::error::{Error, Result};
use crate::sim::Dataset;
use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Squared Euclidean distance accumulated in ascending dimension order — the
/// same arithmetic, in the same order, as the linear-scan reference, so both
/// produce identical bits.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for d in 0..a.len() {
        let diff = a[d] - b[d];
        acc += diff * diff;
    }
    acc
}

struct Node {
    /// Record index stored at this node.
    point: usize,
    /// Child node indices into `ReferenceStore::nodes`.
    left: Option<usize>,
    right: Option<usize>,
    /// Axis-aligned bounding box of every point in this subtree, used for
    /// exact lower bounds during best-first traversal.
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Immutable k-NN index over a dataset's joint configurations.
pub struct ReferenceStore {
    keys: Vec<Vec<f64>>,
    ids: Vec<u32>,
    trajs: Vec<Option<u32>>,
    nodes: Vec<Node>,
    root: usize,
    dims: usize,
}

/// Heap entry: either a whole subtree (keyed by its best possible distance)
/// or a concrete point (keyed by its true distance). Ties break toward
/// smaller sample id; subtrees sort before equal-keyed points so points come
/// out only once nothing closer can still be hiding in a box.
enum Entry {
    Subtree { bound: f64, node: usize },
    Point { d2: f64, rec: usize, id: u32 },
}

impl Entry {
    fn key(&self) -> (f64, u32, u32) {
        match *self {
            Entry::Subtree { bound, .. } => (bound, 0, 0),
            Entry::Point { d2, id, .. } => (d2, 1, id),
        }
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap and we want the smallest key.
        let (a, b) = (self.key(), other.key());
        b.0.partial_cmp(&a.0)
            .expect("finite distances")
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
    }
}

impl ReferenceStore {
    /// Indexes every record of the dataset with balanced median splits.
    pub fn build(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Dataset("cannot index an empty dataset".into()));
        }
        let keys: Vec<Vec<f64>> = dataset.records.iter().map(|r| r.angles.clone()).collect();
        let ids: Vec<u32> = dataset.records.iter().map(|r| r.sample_id).collect();
        let trajs: Vec<Option<u32>> = dataset.records.iter().map(|r| r.trajectory_id).collect();
        let dims = keys[0].len();
        if keys.iter().any(|k| k.len() != dims) {
            return Err(Error::Shape("records disagree on state dimension".into()));
        }
        let mut store = ReferenceStore {
            keys,
            ids,
            trajs,
            nodes: Vec::new(),
            root: 0,
            dims,
        };
        let mut order: Vec<usize> = (0..store.keys.len()).collect();
        store.root = store.build_rec(&mut order, 0).expect("non-empty");
        Ok(store)
    }

    fn build_rec(&mut self, slots: &mut [usize], depth: usize) -> Option<usize> {
        if slots.is_empty() {
            return None;
        }
        let dim = depth % self.dims;
        slots.sort_by(|&a, &b| {
            self.keys[a][dim]
                .partial_cmp(&self.keys[b][dim])
                .expect("finite keys")
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        let mid = slots.len() / 2;
        let point = slots[mid];

        let mut lo = vec![f64::INFINITY; self.dims];
        let mut hi = vec![f64::NEG_INFINITY; self.dims];
        for &s in slots.iter() {
            for d in 0..self.dims {
                lo[d] = lo[d].min(self.keys[s][d]);
                hi[d] = hi[d].max(self.keys[s][d]);
            }
        }

        // Recurse on copies of the two halves; `slots` borrows self immutably
        // through keys, so split first.
        let (mut lhs, mut rhs): (Vec<usize>, Vec<usize>) =
            (slots[..mid].to_vec(), slots[mid + 1..].to_vec());
        let left = self.build_rec(&mut lhs, depth + 1);
        let right = self.build_rec(&mut rhs, depth + 1);
        self.nodes.push(Node { point, left, right, lo, hi });
        Some(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Depth of the tree: 0 for a single record.
    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], n: usize) -> usize {
            let node = &nodes[n];
            let l = node.left.map(|c| 1 + rec(nodes, c)).unwrap_or(0);
            let r = node.right.map(|c| 1 + rec(nodes, c)).unwrap_or(0);
            l.max(r)
        }
        rec(&self.nodes, self.root)
    }

    /// Smallest possible squared distance from `q` to any point in the box.
    fn box_bound(&self, node: usize, q: &[f64]) -> f64 {
        let n = &self.nodes[node];
        let mut acc = 0.0;
        for d in 0..self.dims {
            let gap = if q[d] < n.lo[d] {
                n.lo[d] - q[d]
            } else if q[d] > n.hi[d] {
                q[d] - n.hi[d]
            } else {
                0.0
            };
            acc += gap * gap;
        }
        acc
    }

    /// Visits stored records in ascending (distance, sample id) order,
    /// stopping when `take` returns false.
    fn enumerate_ascending<F: FnMut(usize, f64) -> bool>(&self, q: &[f64], mut take: F) {
        let mut heap = BinaryHeap::new();
        heap.push(Entry::Subtree { bound: self.box_bound(self.root, q), node: self.root });
        while let Some(entry) = heap.pop() {
            match entry {
                Entry::Subtree { node, .. } => {
                    let n = &self.nodes[node];
                    heap.push(Entry::Point {
                        d2: dist2(&self.keys[n.point], q),
                        rec: n.point,
                        id: self.ids[n.point],
                    });
                    for child in [n.left, n.right].into_iter().flatten() {
                        heap.push(Entry::Subtree { bound: self.box_bound(child, q), node: child });
                    }
                }
                Entry::Point { d2, rec, .. } => {
                    if !take(rec, d2) {
                        return;
                    }
                }
            }
        }
    }

    /// The k nearest records, ascending by distance, ties broken by smaller
    /// sample id. With `trajectory_disjoint`, at most one result per
    /// trajectory id is kept (greedily by distance); records without a
    /// trajectory id never exclude each other.
    pub fn query_knn(
        &self,
        q: &[f64],
        k: usize,
        trajectory_disjoint: bool,
    ) -> Result<Vec<(u32, f64)>> {
        if k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if q.len() != self.dims {
            return Err(Error::Shape(format!(
                "query has {} dims, store has {}",
                q.len(),
                self.dims
            )));
        }
        let mut picked: Vec<(u32, f64)> = Vec::with_capacity(k);
        let mut used_trajs: Vec<u32> = Vec::new();
        self.enumerate_ascending(q, |rec, d2| {
            if trajectory_disjoint {
                if let Some(t) = self.trajs[rec] {
                    if used_trajs.contains(&t) {
                        return true;
                    }
                    used_trajs.push(t);
                }
            }
            picked.push((self.ids[rec], d2.sqrt()));
            picked.len() < k
        });
        if picked.len() < k {
            return Err(Error::Dataset(format!(
                "k={} exceeds the {} eligible candidates",
                k,
                picked.len()
            )));
        }
        Ok(picked)
    }

    /// Uniform draw among the 10 nearest (trajectory-unconstrained)
    /// neighbors — the reference-selection rule used during training.
    pub fn sample_training_neighbor<R: Rng>(&self, q: &[f64], rng: &mut R) -> Result<u32> {
        let nn = self.query_knn(q, 10, false)?;
        Ok(nn[rng.gen_range(0..nn.len())].0)
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::sim::{Dataset, DatasetRecord};
    use ftnn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A dataset of bare keys (1×1×1 dummy images) with a mix of trajectory
    /// and standalone records.
    fn key_dataset(n: usize, dims: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| DatasetRecord {
                sample_id: i as u32,
                trajectory_id: if i % 2 == 0 { Some((i / 8) as u32) } else { None },
                angles: (0..dims).map(|_| rng.gen_range(-2.6..2.6)).collect(),
                image: Tensor::zeros(vec![1, 1, 1]),
            })
            .collect();
        Dataset { records }
    }

    #[test]
    fn single_record_store_has_depth_zero_and_finds_itself() {
        let ds = key_dataset(1, 3, 1);
        let store = ReferenceStore::build(&ds).unwrap();
        assert_eq!(store.depth(), 0);
        let got = store.query_knn(&ds.records[0].angles, 1, false).unwrap();
        assert_eq!(got, vec![(0, 0.0)]);
        assert!(ReferenceStore::build(&Dataset::default()).is_err());
    }

    #[test]
    fn every_stored_key_is_its_own_nearest_neighbor() {
        let ds = key_dataset(64, 3, 2);
        let store = ReferenceStore::build(&ds).unwrap();
        for r in &ds.records {
            let got = store.query_knn(&r.angles, 1, false).unwrap();
            assert_eq!(got[0], (r.sample_id, 0.0));
        }
    }

    #[test]
    fn tree_matches_linear_scan_exactly() {
        let ds = key_dataset(500, 3, 3);
        let keys = ds.keys();
        let ids: Vec<u32> = ds.records.iter().map(|r| r.sample_id).collect();
        let trajs: Vec<Option<u32>> = ds.records.iter().map(|r| r.trajectory_id).collect();
        let store = ReferenceStore::build(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.6..2.6)).collect();
            for k in [1usize, 2, 5] {
                for disjoint in [false, true] {
                    let got = store.query_knn(&q, k, disjoint).unwrap();
                    let want =
                        oracle::brute_force_knn(&keys, &ids, &trajs, &q, k, disjoint).unwrap();
                    assert_eq!(got, want, "k={k} disjoint={disjoint}");
                }
            }
        }
    }

    #[test]
    fn disjoint_distances_dominate_unconstrained_ones() {
        let ds = key_dataset(300, 3, 4);
        let store = ReferenceStore::build(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.6..2.6)).collect();
            let free = store.query_knn(&q, 5, false).unwrap();
            let disj = store.query_knn(&q, 5, true).unwrap();
            for (f, d) in free.iter().zip(&disj) {
                assert!(d.1 >= f.1);
            }
        }
    }

    #[test]
    fn one_result_per_trajectory_when_disjoint() {
        // Three nearest points share trajectory 0; one distant point is on
        // trajectory 1.
        let mk = |id: u32, t: u32, x: f64| DatasetRecord {
            sample_id: id,
            trajectory_id: Some(t),
            angles: vec![x, 0.0],
            image: Tensor::zeros(vec![1, 1, 1]),
        };
        let ds = Dataset { records: vec![mk(0, 0, 0.0), mk(1, 0, 0.1), mk(2, 0, 0.2), mk(3, 1, 2.0)] };
        let store = ReferenceStore::build(&ds).unwrap();
        let got = store.query_knn(&[0.0, 0.0], 2, true).unwrap();
        assert_eq!(got[0].0, 0);
        assert_eq!(got[1].0, 3);
        // Asking for more distinct trajectories than exist is an error.
        assert!(store.query_knn(&[0.0, 0.0], 3, true).is_err());
    }

    #[test]
    fn training_neighbor_draws_uniformly_from_the_ten_nearest() {
        let ds = key_dataset(10, 3, 6);
        let store = ReferenceStore::build(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u32; 10];
        for _ in 0..10_000 {
            let id = store.sample_training_neighbor(&[0.0, 0.0, 0.0], &mut rng).unwrap();
            counts[id as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() < 0.02, "frequency {freq}");
        }
        // Determinism under a fixed seed.
        let mut a = ChaCha8Rng::seed_from_u64(8);
        let mut b = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            assert_eq!(
                store.sample_training_neighbor(&[0.1, 0.2, 0.3], &mut a).unwrap(),
                store.sample_training_neighbor(&[0.1, 0.2, 0.3], &mut b).unwrap()
            );
        }
    }

    #[test]
    fn membership_of_sampled_neighbor_in_the_ten_nearest() {
        let ds = key_dataset(200, 3, 9);
        let store = ReferenceStore::build(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.6..2.6)).collect();
            let ten: Vec<u32> = store.query_knn(&q, 10, false).unwrap().iter().map(|p| p.0).collect();
            let id = store.sample_training_neighbor(&q, &mut rng).unwrap();
            assert!(ten.contains(&id));
        }
    }
}
