//! Brute-force distances from one query to every live centroid.
//!
//! Distances use the unit-norm identity `‖u − v‖ = √(2 − 2·u·v)`. Each row is
//! evaluated with the same fixed-order arithmetic whether it runs on the
//! calling thread or on a rayon worker, so results never depend on the
//! degree of parallelism.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{OgmcError, Result};
use crate::model::{Cluster, ClusterDatabase, ClusterId};

const LANES: usize = 8;
/// Rows handed to one rayon task.
const ROWS_PER_TASK: usize = 1024;
/// Below this many multiply-adds the scan stays on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 18;

/// Dot product with eight independent accumulators, combined in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Euclidean distance between two unit vectors via their dot product.
#[inline]
pub fn unit_distance(a: &[f32], b: &[f32]) -> f64 {
    let d = f64::from(dot(a, b));
    (2.0 - 2.0 * d).max(0.0).sqrt()
}

fn check_dim(query: &[f32], db: &ClusterDatabase) -> Result<()> {
    if query.len() != db.dim() {
        return Err(OgmcError::DimensionMismatch {
            expected: db.dim(),
            actual: query.len(),
        });
    }
    Ok(())
}

fn fill_rows(query: &[f32], rows: &[f32], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(rows.chunks_exact(query.len())) {
        *o = unit_distance(query, row);
    }
}

/// Distance from `query` to every live centroid, in database row order.
pub fn distances_to_all(query: &[f32], db: &ClusterDatabase) -> Result<Vec<f64>> {
    check_dim(query, db)?;
    let dim = db.dim();
    let matrix = db.centroid_matrix();
    let mut out = vec![0.0f64; db.len()];
    if out.len() * dim < PARALLEL_MIN_WORK {
        fill_rows(query, matrix, &mut out);
    } else {
        out.par_chunks_mut(ROWS_PER_TASK)
            .zip(matrix.par_chunks(ROWS_PER_TASK * dim))
            .for_each(|(o, rows)| fill_rows(query, rows, o));
    }
    Ok(out)
}

/// A candidate cluster and its centroid distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    pub cluster_id: ClusterId,
    pub distance: f64,
}

impl NeighborHit {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.cluster_id.cmp(&other.cluster_id))
    }
}

impl Eq for NeighborHit {}

impl PartialOrd for NeighborHit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NeighborHit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

/// Closest live cluster not listed in `exclude`. Ties go to the smaller id.
pub fn nearest(
    query: &[f32],
    db: &ClusterDatabase,
    exclude: &[ClusterId],
) -> Result<Option<NeighborHit>> {
    let distances = distances_to_all(query, db)?;
    let best = distances
        .iter()
        .zip(db.clusters())
        .filter(|(_, c)| !exclude.contains(&c.id()))
        .map(|(&distance, c)| NeighborHit {
            cluster_id: c.id(),
            distance,
        })
        .min();
    Ok(best)
}

/// Live clusters in ascending `(distance, id)` order, as of creation time.
#[derive(Debug, Clone)]
pub struct NeighborIter {
    heap: BinaryHeap<Reverse<NeighborHit>>,
}

impl NeighborIter {
    pub fn new(query: &[f32], db: &ClusterDatabase) -> Result<Self> {
        Self::within(query, db, f64::INFINITY)
    }

    /// Only clusters at distance `<= radius` are yielded.
    pub fn within(query: &[f32], db: &ClusterDatabase, radius: f64) -> Result<Self> {
        Self::filtered(query, db, |_, d| d <= radius)
    }

    /// Only clusters for which `keep(cluster, distance)` holds are yielded.
    pub fn filtered(
        query: &[f32],
        db: &ClusterDatabase,
        keep: impl Fn(&Cluster, f64) -> bool,
    ) -> Result<Self> {
        let distances = distances_to_all(query, db)?;
        let hits: Vec<Reverse<NeighborHit>> = distances
            .iter()
            .zip(db.clusters())
            .filter(|(&d, c)| keep(c, d))
            .map(|(&distance, c)| {
                Reverse(NeighborHit {
                    cluster_id: c.id(),
                    distance,
                })
            })
            .collect();
        Ok(Self {
            heap: BinaryHeap::from(hits),
        })
    }

    pub fn remaining(&self) -> usize {
        self.heap.len()
    }
}

impl Iterator for NeighborIter {
    type Item = NeighborHit;

    fn next(&mut self) -> Option<NeighborHit> {
        self.heap.pop().map(|Reverse(hit)| hit)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.heap.len(), Some(self.heap.len()))
    }
}
