//! The two-stage clustering engine.
//!
//! Stage one places the incoming sample: it joins the nearest cluster when
//! that centroid lies closer than `thr_f`, otherwise it seeds a new cluster
//! which may be linked to the nearest cluster if that one is robust.
//!
//! Stage two (reclustering) runs on a cluster whose centroid just moved. It
//! walks the other clusters in ascending distance, fusing whenever the
//! fusion rule allows and linking whenever a connection rule allows, and
//! restarts the walk after every fusion. The walk ends once candidates are
//! farther than `thr_wc`, since every threshold is at most `thr_wc`.
//!
//! Connection rules:
//! - a non-robust cluster has at most one link, and only to a robust cluster;
//! - two robust clusters are never fused;
//! - a robust cluster has at most `nc_r` links, the weakest (largest
//!   distance) are dropped first.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{self, NeighborIter};
use crate::model::{ClusterDatabase, ClusterId, Params, Sample, SampleId};

/// Slack on inclusive connection comparisons to absorb rounding.
pub const LINK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    FusedIntoExisting,
    CreatedNew,
    CreatedNewConnected,
}

/// Which stages run for each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    #[default]
    Full,
    /// Reclustering is skipped; connections of the updated cluster are still
    /// revalidated.
    SampleOnly,
}

/// One cluster-cluster fusion, with robustness captured before the merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRecord {
    pub survivor: ClusterId,
    pub absorbed: ClusterId,
    pub left_robust: bool,
    pub right_robust: bool,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineEventReport {
    pub sample_id: SampleId,
    pub action: EventAction,
    pub touched_cluster_ids: Vec<ClusterId>,
    /// Cluster-cluster fusions performed by reclustering.
    pub fusions_performed: usize,
    pub connections_added: usize,
    pub connections_removed: usize,
    pub fusions: Vec<FusionRecord>,
    pub elapsed: Duration,
}

impl EngineEventReport {
    pub fn elapsed_us(&self) -> f64 {
        self.elapsed.as_secs_f64() * 1e6
    }
}

/// What one reclustering pass did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReclusterReport {
    /// Id of the updated cluster after all fusions.
    pub cluster_id: Option<ClusterId>,
    pub touched_cluster_ids: Vec<ClusterId>,
    pub fusions: Vec<FusionRecord>,
    pub connections_added: usize,
    pub connections_removed: usize,
}

/// Single-writer clustering engine owning its database.
#[derive(Debug, Clone)]
pub struct Engine {
    db: ClusterDatabase,
    stages: Stages,
}

impl Engine {
    pub fn new(dim: usize, params: Params) -> Result<Self> {
        Ok(Self::from_database(ClusterDatabase::new(dim, params)?))
    }

    pub fn from_database(db: ClusterDatabase) -> Self {
        Self {
            db,
            stages: Stages::Full,
        }
    }

    pub fn with_stages(mut self, stages: Stages) -> Self {
        self.stages = stages;
        self
    }

    pub fn stages(&self) -> Stages {
        self.stages
    }

    pub fn database(&self) -> &ClusterDatabase {
        &self.db
    }

    pub fn into_database(self) -> ClusterDatabase {
        self.db
    }

    pub fn params(&self) -> &Params {
        self.db.params()
    }

    /// Processes one sample with the configured stages.
    pub fn process(&mut self, sample: &Sample) -> Result<EngineEventReport> {
        match self.stages {
            Stages::Full => self.process_sample(sample),
            Stages::SampleOnly => self.process_sample_stage1_only(sample),
        }
    }

    pub fn process_sample(&mut self, sample: &Sample) -> Result<EngineEventReport> {
        self.process_with(sample, Stages::Full)
    }

    pub fn process_sample_stage1_only(&mut self, sample: &Sample) -> Result<EngineEventReport> {
        self.process_with(sample, Stages::SampleOnly)
    }

    fn process_with(&mut self, sample: &Sample, stages: Stages) -> Result<EngineEventReport> {
        let start = Instant::now();
        self.db.check_sample(sample)?;
        let params = *self.db.params();
        let nearest = kernel::nearest(sample.vector(), &self.db, &[])?;

        let mut report = EngineEventReport {
            sample_id: sample.id,
            action: EventAction::CreatedNew,
            touched_cluster_ids: Vec::new(),
            fusions_performed: 0,
            connections_added: 0,
            connections_removed: 0,
            fusions: Vec::new(),
            elapsed: Duration::ZERO,
        };

        match nearest {
            Some(hit) if hit.distance < params.thr_f => {
                self.db.add_sample(hit.cluster_id, sample)?;
                report.action = EventAction::FusedIntoExisting;
                report.touched_cluster_ids.push(hit.cluster_id);
                match stages {
                    Stages::Full => {
                        let r = self.recluster(hit.cluster_id)?;
                        report.fusions_performed = r.fusions.len();
                        report.fusions = r.fusions;
                        report.connections_added = r.connections_added;
                        report.connections_removed = r.connections_removed;
                        for id in r.touched_cluster_ids {
                            if !report.touched_cluster_ids.contains(&id) {
                                report.touched_cluster_ids.push(id);
                            }
                        }
                    }
                    Stages::SampleOnly => {
                        report.connections_removed = self.check_connections(hit.cluster_id)?;
                    }
                }
            }
            _ => {
                let id = self.db.create_cluster(sample)?;
                report.touched_cluster_ids.push(id);
                if let Some(hit) = nearest {
                    let peer_robust = self.db.is_robust(hit.cluster_id)?;
                    let new_robust = self.db.is_robust(id)?;
                    if peer_robust && self.link_allowed(hit.distance, new_robust, peer_robust) {
                        self.db.connect(id, hit.cluster_id, hit.distance)?;
                        report.action = EventAction::CreatedNewConnected;
                        report.connections_added = 1;
                        report.touched_cluster_ids.push(hit.cluster_id);
                        report.connections_removed = self.check_connections(hit.cluster_id)?;
                    }
                }
            }
        }
        report.elapsed = start.elapsed();
        Ok(report)
    }

    fn link_threshold(&self, a_robust: bool, b_robust: bool) -> Option<f64> {
        let p = self.db.params();
        match (a_robust, b_robust) {
            (true, true) => Some(p.thr_sc),
            (true, false) | (false, true) => Some(p.thr_wc),
            (false, false) => None,
        }
    }

    fn link_allowed(&self, distance: f64, a_robust: bool, b_robust: bool) -> bool {
        self.link_threshold(a_robust, b_robust)
            .is_some_and(|t| distance <= t + LINK_EPS)
    }

    fn centroid_distance(&self, a: ClusterId, b: ClusterId) -> Result<f64> {
        let (ca, cb) = (self.db.cluster(a)?, self.db.cluster(b)?);
        Ok(kernel::unit_distance(ca.centroid(), cb.centroid()))
    }

    /// Iterative fuse-or-connect pass for a cluster whose centroid changed.
    pub fn recluster(&mut self, cluster_id: ClusterId) -> Result<ReclusterReport> {
        let params = *self.db.params();
        let ns_r = params.ns_r;
        let radius = params.thr_wc + LINK_EPS;
        let mut current = cluster_id;
        let mut rep = ReclusterReport::default();
        self.db.cluster(current)?;

        'restart: loop {
            // fresh stored distances let the walk skip links the cap would drop
            rep.connections_removed += self.check_connections(current)?;
            let cur = self.db.cluster(current)?;
            let query = cur.centroid().to_vec();
            let cur_robust = cur.is_robust(ns_r);
            // drop candidates that can neither fuse nor link with `current`
            let candidates = NeighborIter::filtered(&query, &self.db, |c, d| {
                if d > radius || c.id() == current {
                    return false;
                }
                let robust = c.is_robust(ns_r);
                if d < params.thr_f && !(cur_robust && robust) {
                    return true;
                }
                match (cur_robust, robust) {
                    (true, true) => d <= params.thr_sc + LINK_EPS,
                    (true, false) => c.connections().is_empty(),
                    (false, true) => true,
                    (false, false) => false,
                }
            })?;
            for hit in candidates {
                let other = hit.cluster_id;
                if other == current {
                    continue;
                }
                let cur = self.db.cluster(current)?;
                let cur_robust = cur.is_robust(ns_r);
                let cur_linked = !cur.connections().is_empty();
                let already = cur.is_connected_to(other);
                let cand = self.db.cluster(other)?;
                let cand_robust = cand.is_robust(ns_r);
                let cand_linked = !cand.connections().is_empty();

                if hit.distance < params.thr_f && !(cur_robust && cand_robust) {
                    let survivor = self.db.merge(current, other)?;
                    let absorbed = if survivor == current { other } else { current };
                    rep.fusions.push(FusionRecord {
                        survivor,
                        absorbed,
                        left_robust: cur_robust,
                        right_robust: cand_robust,
                        distance: hit.distance,
                    });
                    rep.touched_cluster_ids.retain(|&t| t != absorbed);
                    push_unique(&mut rep.touched_cluster_ids, survivor);
                    current = survivor;
                    continue 'restart;
                }
                if already {
                    continue;
                }
                if !cur_robust && cur_linked {
                    // past thr_f only links remain possible, and this cluster
                    // has used its single one
                    if hit.distance >= params.thr_f {
                        break;
                    }
                    continue;
                }
                if !cand_robust && cand_linked {
                    continue;
                }
                if cur_robust && !self.within_cap(current, hit.distance, other, params.nc_r)? {
                    if hit.distance >= params.thr_f {
                        break;
                    }
                    continue;
                }
                if self.link_allowed(hit.distance, cur_robust, cand_robust) {
                    self.db.connect(current, other, hit.distance)?;
                    rep.connections_added += 1;
                    push_unique(&mut rep.touched_cluster_ids, other);
                    if !cur_robust {
                        break;
                    }
                }
            }
            break;
        }

        rep.connections_removed += self.check_connections(current)?;
        let peers: Vec<ClusterId> = self
            .db
            .cluster(current)?
            .connections()
            .iter()
            .map(|c| c.peer)
            .collect();
        for peer in peers {
            rep.connections_removed += self.check_connections(peer)?;
        }
        push_unique(&mut rep.touched_cluster_ids, current);
        rep.cluster_id = Some(current);
        Ok(rep)
    }

    /// Revalidates every link of `cluster_id` against current centroids,
    /// refreshes stored distances and enforces the degree cap. Returns the
    /// number of links removed.
    pub fn check_connections(&mut self, cluster_id: ClusterId) -> Result<usize> {
        let ns_r = self.db.params().ns_r;
        let nc_r = self.db.params().nc_r;
        let cluster = self.db.cluster(cluster_id)?;
        let robust = cluster.is_robust(ns_r);
        let links: Vec<ClusterId> = cluster.connections().iter().map(|c| c.peer).collect();
        let mut removed = 0;

        for peer in links {
            let distance = self.centroid_distance(cluster_id, peer)?;
            let peer_robust = self.db.is_robust(peer)?;
            if self.link_allowed(distance, robust, peer_robust) {
                self.db.set_link_distance(cluster_id, peer, distance);
            } else {
                self.db.disconnect(cluster_id, peer)?;
                removed += 1;
            }
        }

        let cap = if robust { nc_r } else { 1 };
        let conns = self.db.cluster(cluster_id)?.connections();
        if conns.len() > cap {
            // weakest first: largest distance, then larger peer id
            let mut ranked: Vec<(f64, ClusterId)> = conns.iter().map(|c| (c.distance, c.peer)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, peer) in &ranked[cap..] {
                self.db.disconnect(cluster_id, peer)?;
                removed += 1;
            }
        }
        Ok(removed)
    }

    /// Whether a new link at `distance` to `peer` would survive the degree
    /// cap, given the stored distances of the existing links.
    fn within_cap(&self, cluster_id: ClusterId, distance: f64, peer: ClusterId, cap: usize) -> Result<bool> {
        let conns = self.db.cluster(cluster_id)?.connections();
        if conns.len() < cap {
            return Ok(true);
        }
        let mut ranked: Vec<(f64, ClusterId)> = conns.iter().map(|c| (c.distance, c.peer)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (kd, kp) = ranked[cap - 1];
        Ok(distance.total_cmp(&kd).then(peer.cmp(&kp)).is_lt())
    }

    /// Every link must satisfy its class threshold for the current centroids,
    /// with stored distances matching. Structural checks come from
    /// [`ClusterDatabase::audit`].
    pub fn audit_rules(&self) -> Vec<String> {
        let mut out = self.db.audit();
        let ns_r = self.db.params().ns_r;
        for c in self.db.clusters() {
            let robust = c.is_robust(ns_r);
            for conn in c.connections() {
                if conn.peer < c.id() {
                    continue;
                }
                let Ok(peer) = self.db.cluster(conn.peer) else {
                    continue;
                };
                let d = kernel::unit_distance(c.centroid(), peer.centroid());
                match self.link_threshold(robust, peer.is_robust(ns_r)) {
                    None => out.push(format!("{}-{}: link between non-robust clusters", c.id(), peer.id())),
                    Some(t) if d > t + LINK_EPS => out.push(format!(
                        "{}-{}: distance {d} exceeds threshold {t}",
                        c.id(),
                        peer.id()
                    )),
                    Some(_) => {}
                }
                if (conn.distance - d).abs() > LINK_EPS {
                    out.push(format!(
                        "{}-{}: stored distance {} is stale (now {d})",
                        c.id(),
                        peer.id(),
                        conn.distance
                    ));
                }
            }
        }
        out
    }

    /// Exhaustive pairwise scan: any pair that is not robust-robust must be at
    /// least `thr_f` apart once the engine is idle. Quadratic; for tests.
    pub fn audit_fusion_coherence(&self) -> Vec<String> {
        let params = self.db.params();
        let clusters = self.db.clusters();
        let mut out = Vec::new();
        for (i, a) in clusters.iter().enumerate() {
            for b in &clusters[i + 1..] {
                if a.is_robust(params.ns_r) && b.is_robust(params.ns_r) {
                    continue;
                }
                let d = kernel::unit_distance(a.centroid(), b.centroid());
                if d < params.thr_f - LINK_EPS {
                    out.push(format!("{}-{}: fusable pair left at distance {d}", a.id(), b.id()));
                }
            }
        }
        out
    }
}

fn push_unique(ids: &mut Vec<ClusterId>, id: ClusterId) {
    if !ids.contains(&id) {
        ids.push(id);
    }
}
