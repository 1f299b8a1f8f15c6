//! Identity extraction and clustering quality metrics.
//!
//! Identities are the connected components of the cluster-connection graph.
//! Quality is measured with BCubed precision / recall / F-measure and with
//! normalized mutual information (geometric normalization, natural log).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{OgmcError, Result};
use crate::model::{ClusterDatabase, ClusterId, SampleId};

pub type IdentityId = u32;

/// Sample id to dense identity id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdentityPartition {
    assignment: BTreeMap<SampleId, IdentityId>,
    n_identities: usize,
}

impl IdentityPartition {
    /// Builds a partition from arbitrary labels. Dense ids follow ascending
    /// label order.
    pub fn from_labels<L, I>(pairs: I) -> Self
    where
        L: Ord + Clone,
        I: IntoIterator<Item = (SampleId, L)>,
    {
        let raw: BTreeMap<SampleId, L> = pairs.into_iter().collect();
        let distinct: BTreeSet<&L> = raw.values().collect();
        let dense: BTreeMap<&L, IdentityId> = distinct
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i as IdentityId))
            .collect();
        let assignment = raw.iter().map(|(&s, l)| (s, dense[l])).collect();
        Self {
            assignment,
            n_identities: dense.len(),
        }
    }

    pub fn assignment(&self) -> &BTreeMap<SampleId, IdentityId> {
        &self.assignment
    }

    pub fn get(&self, sample: SampleId) -> Option<IdentityId> {
        self.assignment.get(&sample).copied()
    }

    pub fn n_identities(&self) -> usize {
        self.n_identities
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Connected components of the connection graph. Identity ids are handed out
/// in ascending order of each component's smallest cluster id.
pub fn extract_identities(db: &ClusterDatabase) -> IdentityPartition {
    let mut order: Vec<usize> = (0..db.len()).collect();
    let clusters = db.clusters();
    order.sort_by_key(|&r| clusters[r].id());
    let mut identity_of_row: Vec<Option<IdentityId>> = vec![None; clusters.len()];
    let mut next: IdentityId = 0;
    let mut stack = Vec::new();
    for &start in &order {
        if identity_of_row[start].is_some() {
            continue;
        }
        identity_of_row[start] = Some(next);
        stack.push(start);
        while let Some(row) = stack.pop() {
            for conn in clusters[row].connections() {
                let Some(peer) = db.row_of(conn.peer) else {
                    continue;
                };
                if identity_of_row[peer].is_none() {
                    identity_of_row[peer] = Some(next);
                    stack.push(peer);
                }
            }
        }
        next += 1;
    }
    let mut assignment = BTreeMap::new();
    for (row, c) in clusters.iter().enumerate() {
        let identity = identity_of_row[row].expect("every row visited");
        for &m in c.members() {
            assignment.insert(m, identity);
        }
    }
    IdentityPartition {
        assignment,
        n_identities: next as usize,
    }
}

/// Cluster id of every sample. Handy for the fragment-level view that
/// ignores connections.
pub fn cluster_assignment(db: &ClusterDatabase) -> BTreeMap<SampleId, ClusterId> {
    db.clusters()
        .iter()
        .flat_map(|c| c.members().iter().map(move |&m| (m, c.id())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bcubed {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn harmonic_f(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Aligned (pred, truth) label pairs over the evaluated items, in ascending
/// sample order.
fn aligned(
    pred: &IdentityPartition,
    truth: &IdentityPartition,
    ignore: &BTreeSet<SampleId>,
) -> Result<Vec<(IdentityId, IdentityId)>> {
    let mut pairs = Vec::with_capacity(truth.len());
    for (&s, &p) in &pred.assignment {
        if ignore.contains(&s) {
            continue;
        }
        let g = truth.get(s).ok_or(OgmcError::MissingTruthLabel(s))?;
        pairs.push((p, g));
    }
    for &s in truth.assignment.keys() {
        if !ignore.contains(&s) && !pred.assignment.contains_key(&s) {
            return Err(OgmcError::MissingPrediction(s));
        }
    }
    Ok(pairs)
}

/// BCubed precision, recall and F. Items in `ignore` are dropped both as
/// anchors and as peers; every item counts as its own peer.
pub fn bcubed(
    pred: &IdentityPartition,
    truth: &IdentityPartition,
    ignore: &BTreeSet<SampleId>,
) -> Result<Bcubed> {
    let pairs = aligned(pred, truth, ignore)?;
    if pairs.is_empty() {
        return Ok(Bcubed {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        });
    }
    let mut pred_size: HashMap<IdentityId, usize> = HashMap::new();
    let mut true_size: HashMap<IdentityId, usize> = HashMap::new();
    let mut joint: HashMap<(IdentityId, IdentityId), usize> = HashMap::new();
    for &(p, g) in &pairs {
        *pred_size.entry(p).or_default() += 1;
        *true_size.entry(g).or_default() += 1;
        *joint.entry((p, g)).or_default() += 1;
    }
    let (mut p_sum, mut r_sum) = (0.0f64, 0.0f64);
    for &(p, g) in &pairs {
        let both = joint[&(p, g)] as f64;
        p_sum += both / pred_size[&p] as f64;
        r_sum += both / true_size[&g] as f64;
    }
    let n = pairs.len() as f64;
    let (precision, recall) = (p_sum / n, r_sum / n);
    Ok(Bcubed {
        precision,
        recall,
        f: harmonic_f(precision, recall),
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I(G,C) / √(H(G)·H(C))`.
///
/// Identical partitions (up to renaming) score 1. When one side has zero
/// entropy and the partitions differ the score is 0.
pub fn nmi(pred: &IdentityPartition, truth: &IdentityPartition) -> Result<f64> {
    nmi_ignoring(pred, truth, &BTreeSet::new())
}

pub fn nmi_ignoring(
    pred: &IdentityPartition,
    truth: &IdentityPartition,
    ignore: &BTreeSet<SampleId>,
) -> Result<f64> {
    let pairs = aligned(pred, truth, ignore)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut pred_size: BTreeMap<IdentityId, usize> = BTreeMap::new();
    let mut true_size: BTreeMap<IdentityId, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(IdentityId, IdentityId), usize> = BTreeMap::new();
    for &(p, g) in &pairs {
        *pred_size.entry(p).or_default() += 1;
        *true_size.entry(g).or_default() += 1;
        *joint.entry((p, g)).or_default() += 1;
    }
    if joint.len() == pred_size.len() && joint.len() == true_size.len() {
        return Ok(1.0);
    }
    let n = pairs.len() as f64;
    let h_pred = entropy(pred_size.values().copied(), n);
    let h_true = entropy(true_size.values().copied(), n);
    if h_pred == 0.0 || h_true == 0.0 {
        return Ok(0.0);
    }
    let mutual: f64 = joint
        .iter()
        .map(|(&(p, g), &c)| {
            let c = c as f64;
            c / n * (n * c / (pred_size[&p] as f64 * true_size[&g] as f64)).ln()
        })
        .sum();
    Ok((mutual / (h_pred * h_true).sqrt()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bcubed_precision: f64,
    pub bcubed_recall: f64,
    pub bcubed_f: f64,
    pub nmi: f64,
    pub n_samples: usize,
    pub n_pred_identities: usize,
    pub n_true_identities: usize,
}

impl MetricReport {
    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bcubed_precision={}", self.bcubed_precision);
        let _ = writeln!(s, "bcubed_recall={}", self.bcubed_recall);
        let _ = writeln!(s, "bcubed_f={}", self.bcubed_f);
        let _ = writeln!(s, "nmi={}", self.nmi);
        let _ = writeln!(s, "n_samples={}", self.n_samples);
        let _ = writeln!(s, "n_pred_identities={}", self.n_pred_identities);
        let _ = writeln!(s, "n_true_identities={}", self.n_true_identities);
        s
    }
}

/// Full metric record over `truth`'s domain minus `ignore`.
pub fn evaluate(
    pred: &IdentityPartition,
    truth: &IdentityPartition,
    ignore: &BTreeSet<SampleId>,
) -> Result<MetricReport> {
    let b = bcubed(pred, truth, ignore)?;
    let nmi = nmi_ignoring(pred, truth, ignore)?;
    let pairs = aligned(pred, truth, ignore)?;
    let n_pred: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
    let n_true: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
    Ok(MetricReport {
        bcubed_precision: b.precision,
        bcubed_recall: b.recall,
        bcubed_f: b.f,
        nmi,
        n_samples: pairs.len(),
        n_pred_identities: n_pred.len(),
        n_true_identities: n_true.len(),
    })
}
