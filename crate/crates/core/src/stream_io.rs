//! File formats and deterministic stream ordering.
//!
//! Vector file (`.ogmv`), all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OGMV"
//! 4       2     version (u16) = 1
//! 6       1     dtype (u8) = 0, IEEE-754 binary32
//! 7       4     dim (u32) >= 1
//! 11      8     count (u64)
//! 19      ...   count rows of dim f32 values
//! ```
//!
//! The file size must equal `19 + count * dim * 4` exactly.
//!
//! Snapshot (`.ogms`): magic "OGMS", version u16 = 1, dim u32, the five
//! parameters (three f64, two u64), next cluster id u64, cluster count u64,
//! then per cluster in row order: id u64, member count u64, member ids u64
//! (ascending), feature sum as dim f64, connection count u32, and
//! `(peer u64, distance f64)` pairs. A trailing u64 holds the CRC-64/XZ of
//! every preceding byte.
//!
//! Stream shuffles use ChaCha8 seeded through `SeedableRng::seed_from_u64`
//! and a descending Fisher-Yates pass whose bounded draws use Lemire's
//! multiply-and-reject method on `next_u64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::IdentityPartition;
use crate::model::{Cluster, ClusterDatabase, ClusterId, Connection, Params, Sample, SampleId};

pub const VECTOR_MAGIC: &[u8; 4] = b"OGMV";
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"OGMS";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const VECTOR_HEADER_LEN: usize = 19;
/// Label value marking a distractor sample.
pub const DISTRACTOR_LABEL: i64 = -1;

const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("file has {actual} bytes but the header declares {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("row {0} contains a non-finite value")]
    NonFiniteValue(u64),
    #[error("row {0} has zero norm")]
    ZeroVector(u64),
    #[error("parse error on line {0}")]
    ParseError(usize),
    #[error("duplicate sample id on line {0}")]
    DuplicateId(usize),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorFileHeader {
    pub version: u16,
    pub dtype: u8,
    pub dim: u32,
    pub count: u64,
}

impl VectorFileHeader {
    pub fn payload_len(&self) -> u64 {
        self.count * u64::from(self.dim) * 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

pub fn encode_vectors(dim: usize, rows: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(VECTOR_HEADER_LEN + rows.len() * dim * 4);
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), dim, "row length must equal dim");
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_vectors(path: impl AsRef<Path>, dim: usize, rows: &[Vec<f32>]) -> FormatResult<()> {
    fs::write(path, encode_vectors(dim, rows))?;
    Ok(())
}

pub fn decode_header(bytes: &[u8]) -> FormatResult<VectorFileHeader> {
    if bytes.len() < VECTOR_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != VECTOR_MAGIC {
            return Err(FormatError::BadMagic);
        }
        return Err(FormatError::TruncatedFile {
            expected: VECTOR_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != VECTOR_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(dtype));
    }
    let dim = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes"));
    let count = u64::from_le_bytes(bytes[11..19].try_into().expect("8 bytes"));
    if dim == 0 {
        return Err(FormatError::InvalidHeader("dim must be at least 1".into()));
    }
    Ok(VectorFileHeader {
        version,
        dtype,
        dim,
        count,
    })
}

/// Decodes a vector file. Samples get ids `0..count` in file order and are
/// normalized on load.
pub fn decode_vectors(bytes: &[u8]) -> FormatResult<VectorSet> {
    let header = decode_header(bytes)?;
    let expected = (VECTOR_HEADER_LEN as u64)
        .checked_add(
            header
                .count
                .checked_mul(u64::from(header.dim) * 4)
                .ok_or_else(|| FormatError::InvalidHeader("count overflows".into()))?,
        )
        .ok_or_else(|| FormatError::InvalidHeader("count overflows".into()))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(FormatError::TruncatedFile { expected, actual });
    }
    if actual > expected {
        return Err(FormatError::SizeMismatch { expected, actual });
    }
    let dim = header.dim as usize;
    let mut samples = Vec::with_capacity(header.count as usize);
    let mut row = vec![0.0f32; dim];
    for (i, chunk) in bytes[VECTOR_HEADER_LEN..].chunks_exact(dim * 4).enumerate() {
        for (x, b) in row.iter_mut().zip(chunk.chunks_exact(4)) {
            *x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        let id = i as u64;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(FormatError::NonFiniteValue(id));
        }
        let sample = Sample::new(id, &row).map_err(|_| FormatError::ZeroVector(id))?;
        samples.push(sample);
    }
    Ok(VectorSet { dim, samples })
}

pub fn read_vectors(path: impl AsRef<Path>) -> FormatResult<VectorSet> {
    decode_vectors(&fs::read(path)?)
}

/// Truth labels; samples labelled `-1` are distractors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    pub labels: BTreeMap<SampleId, i64>,
    pub distractors: BTreeSet<SampleId>,
}

impl LabelSet {
    pub fn truth_partition(&self) -> IdentityPartition {
        IdentityPartition::from_labels(self.labels.iter().map(|(&s, &l)| (s, l)))
    }

    pub fn len(&self) -> usize {
        self.labels.len() + self.distractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn parse_pairs(text: &str, mut visit: impl FnMut(usize, u64, &str) -> FormatResult<()>) -> FormatResult<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, value) = line.split_once(',').ok_or(FormatError::ParseError(line_no))?;
        let id: u64 = id.trim().parse().map_err(|_| FormatError::ParseError(line_no))?;
        visit(line_no, id, value.trim())?;
    }
    Ok(())
}

/// Parses `sample_id,label` lines; `#` lines and blank lines are skipped.
pub fn parse_labels(text: &str) -> FormatResult<LabelSet> {
    let mut set = LabelSet::default();
    let mut seen = BTreeSet::new();
    parse_pairs(text, |line, id, value| {
        let label: i64 = value.parse().map_err(|_| FormatError::ParseError(line))?;
        if !seen.insert(id) {
            return Err(FormatError::DuplicateId(line));
        }
        if label == DISTRACTOR_LABEL {
            set.distractors.insert(id);
        } else {
            set.labels.insert(id, label);
        }
        Ok(())
    })?;
    Ok(set)
}

pub fn read_labels(path: impl AsRef<Path>) -> FormatResult<LabelSet> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn format_labels(labels: &[i64]) -> String {
    let mut s = String::with_capacity(labels.len() * 8);
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[i64]) -> FormatResult<()> {
    fs::write(path, format_labels(labels))?;
    Ok(())
}

/// `sample_id,identity_id` lines in ascending sample order.
pub fn format_assignments(partition: &IdentityPartition) -> String {
    let mut s = String::with_capacity(partition.len() * 10);
    for (sample, identity) in partition.assignment() {
        s.push_str(&format!("{sample},{identity}\n"));
    }
    s
}

pub fn write_assignments(path: impl AsRef<Path>, partition: &IdentityPartition) -> FormatResult<()> {
    fs::write(path, format_assignments(partition))?;
    Ok(())
}

pub fn parse_assignments(text: &str) -> FormatResult<IdentityPartition> {
    let mut pairs = BTreeMap::new();
    parse_pairs(text, |line, id, value| {
        let identity: u64 = value.parse().map_err(|_| FormatError::ParseError(line))?;
        if pairs.insert(id, identity).is_some() {
            return Err(FormatError::DuplicateId(line));
        }
        Ok(())
    })?;
    Ok(IdentityPartition::from_labels(pairs))
}

pub fn read_assignments(path: impl AsRef<Path>) -> FormatResult<IdentityPartition> {
    parse_assignments(&fs::read_to_string(path)?)
}

/// Serializes a quiescent database.
pub fn snapshot(db: &ClusterDatabase) -> Vec<u8> {
    let mut out = Vec::new();
    let p = db.params();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(db.dim() as u32).to_le_bytes());
    for v in [p.thr_f, p.thr_wc, p.thr_sc] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(p.ns_r as u64).to_le_bytes());
    out.extend_from_slice(&(p.nc_r as u64).to_le_bytes());
    out.extend_from_slice(&db.next_id().to_le_bytes());
    out.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for c in db.clusters() {
        out.extend_from_slice(&c.id().0.to_le_bytes());
        out.extend_from_slice(&(c.n_samples() as u64).to_le_bytes());
        for m in c.members() {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for s in c.feature_sum() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&(c.connections().len() as u32).to_le_bytes());
        for conn in c.connections() {
            out.extend_from_slice(&conn.peer.0.to_le_bytes());
            out.extend_from_slice(&conn.distance.to_le_bytes());
        }
    }
    let crc = CHECKSUM.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> FormatResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FormatError::CorruptSnapshot("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> FormatResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> FormatResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> FormatResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Rebuilds a database from [`snapshot`] bytes. Centroids are recomputed
/// from the stored feature sums.
pub fn restore(bytes: &[u8]) -> FormatResult<ClusterDatabase> {
    if bytes.len() < 4 + 8 {
        return Err(FormatError::CorruptSnapshot("too short".into()));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if CHECKSUM.checksum(body) != stored {
        return Err(FormatError::CorruptSnapshot("checksum mismatch".into()));
    }
    let corrupt = |e: crate::error::OgmcError| FormatError::CorruptSnapshot(e.to_string());
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dim = r.u32()? as usize;
    let (thr_f, thr_wc, thr_sc) = (r.f64()?, r.f64()?, r.f64()?);
    let (ns_r, nc_r) = (r.u64()? as usize, r.u64()? as usize);
    let params = Params::new(thr_f, thr_wc, thr_sc, ns_r, nc_r).map_err(corrupt)?;
    let next_id = r.u64()?;
    let n_clusters = r.u64()?;
    let mut clusters = Vec::new();
    for _ in 0..n_clusters {
        let id = ClusterId(r.u64()?);
        let n_members = r.u64()?;
        let mut members = BTreeSet::new();
        for _ in 0..n_members {
            members.insert(r.u64()?);
        }
        if members.len() as u64 != n_members {
            return Err(FormatError::CorruptSnapshot(format!("{id}: repeated member")));
        }
        let mut sum = Vec::with_capacity(dim);
        for _ in 0..dim {
            sum.push(r.f64()?);
        }
        let n_conn = r.u32()?;
        let mut connections = Vec::with_capacity(n_conn as usize);
        for _ in 0..n_conn {
            let peer = ClusterId(r.u64()?);
            let distance = r.f64()?;
            connections.push(Connection { peer, distance });
        }
        clusters.push(Cluster::from_parts(id, sum, members, connections).map_err(corrupt)?);
    }
    if r.pos != body.len() {
        return Err(FormatError::CorruptSnapshot("trailing bytes".into()));
    }
    let db = ClusterDatabase::from_parts(dim, params, next_id, clusters).map_err(corrupt)?;
    let problems = db.audit();
    if !problems.is_empty() {
        return Err(FormatError::CorruptSnapshot(problems.join("; ")));
    }
    Ok(db)
}

pub fn write_snapshot(path: impl AsRef<Path>, db: &ClusterDatabase) -> FormatResult<()> {
    fs::write(path, snapshot(db))?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> FormatResult<ClusterDatabase> {
    restore(&fs::read(path)?)
}

fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(bound);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// Deterministic permutation of `0..count`.
pub fn shuffle_order(count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..count).collect();
    for i in (1..count).rev() {
        let j = bounded(&mut rng, i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}
