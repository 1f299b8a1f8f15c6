//! Domain types: samples, clusters, parameters and the cluster database.
//!
//! A cluster stores its running feature sum in `f64` and a unit centroid in
//! `f32`. The database keeps every live centroid in a dense row-major matrix
//! so the distance kernel can scan it in one pass; row `k` of the matrix is
//! always a bit copy of `clusters[k].centroid`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OgmcError, Result};

pub type SampleId = u64;

/// Stable identifier of a cluster. Never reused within one database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

const MIN_NORM: f64 = 1e-12;

/// Scales `vector` to unit L2 norm. Computed in `f64`.
pub fn normalize(vector: &[f32]) -> Result<Vec<f32>> {
    let norm = vector
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if !(norm > MIN_NORM) {
        return Err(OgmcError::ZeroVector);
    }
    Ok(vector.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

fn normalize_sum(sum: &[f64]) -> Result<Vec<f32>> {
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > MIN_NORM) {
        return Err(OgmcError::ZeroVector);
    }
    Ok(sum.iter().map(|x| (x / norm) as f32).collect())
}

/// Explicit `‖u − v‖₂`, evaluated in `f64`.
pub fn euclidean_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(OgmcError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity of two vectors, in `f64`.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(OgmcError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// One incoming embedding. The vector is unit-normalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    vector: Vec<f32>,
}

impl Sample {
    pub fn new(id: SampleId, raw: &[f32]) -> Result<Self> {
        Ok(Self {
            id,
            vector: normalize(raw)?,
        })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// The five tunable values of the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Fusion threshold.
    pub thr_f: f64,
    /// Weak-connection threshold (robust to non-robust).
    pub thr_wc: f64,
    /// Strong-connection threshold (robust to robust).
    pub thr_sc: f64,
    /// Minimum member count of a robust cluster.
    pub ns_r: usize,
    /// Maximum connection count of a robust cluster.
    pub nc_r: usize,
}

impl Params {
    pub fn new(thr_f: f64, thr_wc: f64, thr_sc: f64, ns_r: usize, nc_r: usize) -> Result<Self> {
        let params = Self {
            thr_f,
            thr_wc,
            thr_sc,
            ns_r,
            nc_r,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("thr_f", self.thr_f),
            ("thr_wc", self.thr_wc),
            ("thr_sc", self.thr_sc),
        ] {
            if !(0.0..=2.0).contains(&value) {
                return Err(OgmcError::InvalidParams(format!(
                    "{name} = {value} is outside [0, 2]"
                )));
            }
        }
        if !(self.thr_sc <= self.thr_f && self.thr_f <= self.thr_wc) {
            return Err(OgmcError::InvalidParams(format!(
                "thresholds must satisfy thr_sc <= thr_f <= thr_wc, got {} / {} / {}",
                self.thr_sc, self.thr_f, self.thr_wc
            )));
        }
        if self.ns_r < 1 || self.nc_r < 1 {
            return Err(OgmcError::InvalidParams(
                "ns_r and nc_r must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for Params {
    /// Defaults suited to 512-d face embeddings.
    fn default() -> Self {
        Self {
            thr_f: 1.01,
            thr_wc: 1.12,
            thr_sc: 0.99,
            ns_r: 5,
            nc_r: 5,
        }
    }
}

/// An edge to another cluster with the centroid distance last measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub peer: ClusterId,
    pub distance: f64,
}

/// One gaussian mode of an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    id: ClusterId,
    centroid: Vec<f32>,
    feature_sum: Vec<f64>,
    members: BTreeSet<SampleId>,
    pub(crate) connections: Vec<Connection>,
}

impl Cluster {
    pub fn from_sample(id: ClusterId, sample: &Sample) -> Self {
        Self {
            id,
            centroid: sample.vector.clone(),
            feature_sum: sample.vector.iter().map(|&x| f64::from(x)).collect(),
            members: BTreeSet::from([sample.id]),
            connections: Vec::new(),
        }
    }

    /// Rebuilds a cluster from persisted state; the centroid is recomputed.
    pub fn from_parts(
        id: ClusterId,
        feature_sum: Vec<f64>,
        members: BTreeSet<SampleId>,
        connections: Vec<Connection>,
    ) -> Result<Self> {
        let centroid = normalize_sum(&feature_sum)?;
        Ok(Self {
            id,
            centroid,
            feature_sum,
            members,
            connections,
        })
    }

    pub fn id(&self) -> ClusterId {
        self.id
    }

    pub fn centroid(&self) -> &[f32] {
        &self.centroid
    }

    pub fn feature_sum(&self) -> &[f64] {
        &self.feature_sum
    }

    pub fn members(&self) -> &BTreeSet<SampleId> {
        &self.members
    }

    pub fn n_samples(&self) -> usize {
        self.members.len()
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn is_robust(&self, ns_r: usize) -> bool {
        self.members.len() >= ns_r
    }

    pub fn is_connected_to(&self, peer: ClusterId) -> bool {
        self.connections.iter().any(|c| c.peer == peer)
    }

    /// Adds one sample: the feature sum grows and the centroid is recomputed.
    /// Connections are left untouched.
    pub fn add_sample(&mut self, sample: &Sample) -> Result<()> {
        if sample.dim() != self.centroid.len() {
            return Err(OgmcError::DimensionMismatch {
                expected: self.centroid.len(),
                actual: sample.dim(),
            });
        }
        if self.members.contains(&sample.id) {
            return Err(OgmcError::DuplicateSample(sample.id));
        }
        let mut sum = self.feature_sum.clone();
        for (s, &x) in sum.iter_mut().zip(&sample.vector) {
            *s += f64::from(x);
        }
        self.centroid = normalize_sum(&sum)?;
        self.feature_sum = sum;
        self.members.insert(sample.id);
        Ok(())
    }

    /// Fuses two clusters into one carrying the smaller id.
    ///
    /// Connection lists are unioned, the mutual link (if any) is dropped and a
    /// peer present on both sides is kept once with the smaller stored
    /// distance. Rule pruning is left to the engine.
    pub fn merge(a: Cluster, b: Cluster, ns_r: usize) -> Result<Cluster> {
        if a.id == b.id {
            return Err(OgmcError::SelfMerge(a.id));
        }
        if a.is_robust(ns_r) && b.is_robust(ns_r) {
            return Err(OgmcError::RobustPairFusion(a.id, b.id));
        }
        if a.centroid.len() != b.centroid.len() {
            return Err(OgmcError::DimensionMismatch {
                expected: a.centroid.len(),
                actual: b.centroid.len(),
            });
        }
        if !a.members.is_disjoint(&b.members) {
            return Err(OgmcError::DuplicateMembership(a.id, b.id));
        }
        let (mut survivor, absorbed) = if a.id < b.id { (a, b) } else { (b, a) };
        let sum: Vec<f64> = survivor
            .feature_sum
            .iter()
            .zip(&absorbed.feature_sum)
            .map(|(x, y)| x + y)
            .collect();
        survivor.centroid = normalize_sum(&sum)?;
        survivor.feature_sum = sum;

        let mut absorbed_members = absorbed.members;
        survivor.members.append(&mut absorbed_members);

        let (sid, aid) = (survivor.id, absorbed.id);
        survivor.connections.retain(|c| c.peer != aid);
        for conn in absorbed.connections {
            if conn.peer == sid {
                continue;
            }
            match survivor.connections.iter_mut().find(|c| c.peer == conn.peer) {
                Some(existing) => existing.distance = existing.distance.min(conn.distance),
                None => survivor.connections.push(conn),
            }
        }
        Ok(survivor)
    }
}

const NO_ROW: usize = usize::MAX;

/// The evolving set of clusters plus the dense centroid matrix.
#[derive(Debug, Clone)]
pub struct ClusterDatabase {
    dim: usize,
    params: Params,
    clusters: Vec<Cluster>,
    matrix: Vec<f32>,
    /// Row of every live cluster, indexed by id; `NO_ROW` marks dead ids.
    rows: Vec<usize>,
    next_id: u64,
    ingested: BTreeSet<SampleId>,
}

impl ClusterDatabase {
    pub fn new(dim: usize, params: Params) -> Result<Self> {
        if dim == 0 {
            return Err(OgmcError::InvalidParams("dimension must be at least 1".into()));
        }
        params.validate()?;
        Ok(Self {
            dim,
            params,
            clusters: Vec::new(),
            matrix: Vec::new(),
            rows: Vec::new(),
            next_id: 0,
            ingested: BTreeSet::new(),
        })
    }

    /// Rebuilds a database from clusters listed in row order.
    pub fn from_parts(
        dim: usize,
        params: Params,
        next_id: u64,
        clusters: Vec<Cluster>,
    ) -> Result<Self> {
        let mut db = Self::new(dim, params)?;
        db.next_id = next_id;
        for cluster in clusters {
            if cluster.centroid.len() != dim {
                return Err(OgmcError::DimensionMismatch {
                    expected: dim,
                    actual: cluster.centroid.len(),
                });
            }
            if cluster.id.0 >= next_id || db.row_of(cluster.id).is_some() {
                return Err(OgmcError::UnknownCluster(cluster.id));
            }
            for &m in &cluster.members {
                if !db.ingested.insert(m) {
                    return Err(OgmcError::DuplicateSample(m));
                }
            }
            db.push_row(cluster);
        }
        Ok(db)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Number of live clusters.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.ingested.len()
    }

    pub fn contains_sample(&self, id: SampleId) -> bool {
        self.ingested.contains(&id)
    }

    /// Live clusters in matrix row order.
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Row-major `len() × dim()` centroid matrix.
    pub fn centroid_matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row_of(&self, id: ClusterId) -> Option<usize> {
        usize::try_from(id.0)
            .ok()
            .and_then(|i| self.rows.get(i).copied())
            .filter(|&r| r != NO_ROW)
    }

    pub fn cluster(&self, id: ClusterId) -> Result<&Cluster> {
        self.row_of(id)
            .map(|r| &self.clusters[r])
            .ok_or(OgmcError::UnknownCluster(id))
    }

    pub fn is_robust(&self, id: ClusterId) -> Result<bool> {
        Ok(self.cluster(id)?.is_robust(self.params.ns_r))
    }

    pub fn robust_count(&self) -> usize {
        self.clusters
            .iter()
            .filter(|c| c.is_robust(self.params.ns_r))
            .count()
    }

    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.dim() != self.dim {
            return Err(OgmcError::DimensionMismatch {
                expected: self.dim,
                actual: sample.dim(),
            });
        }
        if self.ingested.contains(&sample.id) {
            return Err(OgmcError::DuplicateSample(sample.id));
        }
        Ok(())
    }

    fn push_row(&mut self, cluster: Cluster) {
        let slot = cluster.id.0 as usize;
        if self.rows.len() <= slot {
            self.rows.resize(slot + 1, NO_ROW);
        }
        self.rows[slot] = self.clusters.len();
        self.matrix.extend_from_slice(&cluster.centroid);
        self.clusters.push(cluster);
    }

    fn sync_row(&mut self, row: usize) {
        let d = self.dim;
        self.matrix[row * d..(row + 1) * d].copy_from_slice(&self.clusters[row].centroid);
    }

    fn swap_remove_row(&mut self, row: usize) -> Cluster {
        let d = self.dim;
        let last = self.clusters.len() - 1;
        if row != last {
            self.matrix.copy_within(last * d..(last + 1) * d, row * d);
        }
        self.matrix.truncate(last * d);
        let removed = self.clusters.swap_remove(row);
        self.rows[removed.id.0 as usize] = NO_ROW;
        if row != last {
            self.rows[self.clusters[row].id.0 as usize] = row;
        }
        removed
    }

    pub fn create_cluster(&mut self, sample: &Sample) -> Result<ClusterId> {
        self.check_sample(sample)?;
        let id = ClusterId(self.next_id);
        self.next_id += 1;
        self.ingested.insert(sample.id);
        self.push_row(Cluster::from_sample(id, sample));
        Ok(id)
    }

    pub fn add_sample(&mut self, id: ClusterId, sample: &Sample) -> Result<()> {
        self.check_sample(sample)?;
        let row = self.row_of(id).ok_or(OgmcError::UnknownCluster(id))?;
        self.clusters[row].add_sample(sample)?;
        self.ingested.insert(sample.id);
        self.sync_row(row);
        Ok(())
    }

    /// Fuses two clusters and returns the surviving (smaller) id. Peers of the
    /// absorbed cluster are re-pointed at the survivor.
    pub fn merge(&mut self, a: ClusterId, b: ClusterId) -> Result<ClusterId> {
        if a == b {
            return Err(OgmcError::SelfMerge(a));
        }
        let (ca, cb) = (self.cluster(a)?, self.cluster(b)?);
        let ns_r = self.params.ns_r;
        if ca.is_robust(ns_r) && cb.is_robust(ns_r) {
            return Err(OgmcError::RobustPairFusion(a, b));
        }
        if !ca.members.is_disjoint(&cb.members) {
            return Err(OgmcError::DuplicateMembership(a, b));
        }
        let (keep, gone) = if a < b { (a, b) } else { (b, a) };

        let gone_row = self.row_of(gone).ok_or(OgmcError::UnknownCluster(gone))?;
        let absorbed = self.swap_remove_row(gone_row);
        let keep_row = self.row_of(keep).ok_or(OgmcError::UnknownCluster(keep))?;
        let placeholder = Cluster {
            id: keep,
            centroid: Vec::new(),
            feature_sum: Vec::new(),
            members: BTreeSet::new(),
            connections: Vec::new(),
        };
        let survivor = std::mem::replace(&mut self.clusters[keep_row], placeholder);
        let absorbed_peers: Vec<ClusterId> = absorbed
            .connections
            .iter()
            .map(|c| c.peer)
            .filter(|&p| p != keep)
            .collect();
        let merged = Cluster::merge(survivor, absorbed, ns_r)?;
        self.clusters[keep_row] = merged;
        self.sync_row(keep_row);

        for peer in absorbed_peers {
            let row = self.row_of(peer).ok_or(OgmcError::UnknownCluster(peer))?;
            let conns = &mut self.clusters[row].connections;
            let had_keep = conns.iter().any(|c| c.peer == keep);
            if had_keep {
                let d_gone = conns.iter().find(|c| c.peer == gone).map(|c| c.distance);
                conns.retain(|c| c.peer != gone);
                if let (Some(dg), Some(k)) = (d_gone, conns.iter_mut().find(|c| c.peer == keep)) {
                    k.distance = k.distance.min(dg);
                }
            } else if let Some(c) = conns.iter_mut().find(|c| c.peer == gone) {
                c.peer = keep;
            }
        }
        Ok(keep)
    }

    /// Adds a symmetric link. Returns false if the pair was already linked.
    pub fn connect(&mut self, a: ClusterId, b: ClusterId, distance: f64) -> Result<bool> {
        if a == b {
            return Err(OgmcError::SelfMerge(a));
        }
        let ra = self.row_of(a).ok_or(OgmcError::UnknownCluster(a))?;
        let rb = self.row_of(b).ok_or(OgmcError::UnknownCluster(b))?;
        if self.clusters[ra].is_connected_to(b) {
            return Ok(false);
        }
        self.clusters[ra].connections.push(Connection { peer: b, distance });
        self.clusters[rb].connections.push(Connection { peer: a, distance });
        Ok(true)
    }

    /// Removes a symmetric link. Returns false if none existed.
    pub fn disconnect(&mut self, a: ClusterId, b: ClusterId) -> Result<bool> {
        let ra = self.row_of(a).ok_or(OgmcError::UnknownCluster(a))?;
        let rb = self.row_of(b).ok_or(OgmcError::UnknownCluster(b))?;
        let before = self.clusters[ra].connections.len();
        self.clusters[ra].connections.retain(|c| c.peer != b);
        self.clusters[rb].connections.retain(|c| c.peer != a);
        Ok(self.clusters[ra].connections.len() != before)
    }

    pub(crate) fn set_link_distance(&mut self, a: ClusterId, b: ClusterId, distance: f64) {
        for (x, y) in [(a, b), (b, a)] {
            if let Some(row) = self.row_of(x) {
                if let Some(c) = self.clusters[row].connections.iter_mut().find(|c| c.peer == y) {
                    c.distance = distance;
                }
            }
        }
    }

    /// Checks the structural invariants and returns every violation found.
    pub fn audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.dim;
        let ns_r = self.params.ns_r;
        let mut seen: Vec<SampleId> = Vec::with_capacity(self.ingested.len());
        if self.matrix.len() != self.clusters.len() * d {
            out.push(format!(
                "matrix has {} values for {} clusters",
                self.matrix.len(),
                self.clusters.len()
            ));
            return out;
        }
        let indexed = self.rows.iter().filter(|&&r| r != NO_ROW).count();
        if indexed != self.clusters.len() {
            out.push(format!("row table lists {indexed} clusters, {} are live", self.clusters.len()));
        }
        for (row, c) in self.clusters.iter().enumerate() {
            if self.row_of(c.id) != Some(row) {
                out.push(format!("{}: row index table out of sync", c.id));
            }
            let stored = &self.matrix[row * d..(row + 1) * d];
            if stored.iter().zip(&c.centroid).any(|(a, b)| a.to_bits() != b.to_bits()) {
                out.push(format!("{}: matrix row differs from centroid", c.id));
            }
            let norm = c.centroid.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                out.push(format!("{}: centroid norm {norm}", c.id));
            }
            let sum_norm = c.feature_sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            let drift = c
                .feature_sum
                .iter()
                .zip(&c.centroid)
                .map(|(s, &x)| (s / sum_norm - f64::from(x)).abs())
                .fold(0.0, f64::max);
            if drift > 1e-5 {
                out.push(format!("{}: centroid off normalized sum by {drift}", c.id));
            }
            if c.members.is_empty() {
                out.push(format!("{}: empty cluster", c.id));
            }
            seen.extend(&c.members);
            let robust = c.is_robust(ns_r);
            let cap = if robust { self.params.nc_r } else { 1 };
            if c.connections.len() > cap {
                out.push(format!(
                    "{}: {} connections exceed cap {cap}",
                    c.id,
                    c.connections.len()
                ));
            }
            let mut peers = BTreeSet::new();
            for conn in &c.connections {
                if conn.peer == c.id {
                    out.push(format!("{}: self loop", c.id));
                }
                if !peers.insert(conn.peer) {
                    out.push(format!("{}: duplicate peer {}", c.id, conn.peer));
                }
                match self.cluster(conn.peer) {
                    Err(_) => out.push(format!("{}: dangling peer {}", c.id, conn.peer)),
                    Ok(p) => {
                        if !robust && !p.is_robust(ns_r) {
                            out.push(format!(
                                "{}: non-robust cluster linked to non-robust {}",
                                c.id, p.id
                            ));
                        }
                        match p.connections.iter().find(|x| x.peer == c.id) {
                            None => out.push(format!("{}-{}: asymmetric link", c.id, p.id)),
                            Some(back) if back.distance != conn.distance => out.push(format!(
                                "{}-{}: stored distances differ",
                                c.id, p.id
                            )),
                            Some(_) => {}
                        }
                    }
                }
            }
        }
        seen.sort_unstable();
        for w in seen.windows(2) {
            if w[0] == w[1] {
                out.push(format!("sample {} belongs to more than one cluster", w[0]));
            }
        }
        seen.dedup();
        if !seen.iter().eq(self.ingested.iter()) {
            out.push(format!(
                "members cover {} samples but {} were ingested",
                seen.len(),
                self.ingested.len()
            ));
        }
        out
    }
}
