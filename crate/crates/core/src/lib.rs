//! Online clustering of unit-normalized embedding streams.
//!
//! Each identity is modelled as a set of gaussian clusters joined by
//! connections. Samples arrive one at a time ([`engine::Engine`]); clusters
//! that move are reclustered against the whole database with an exact
//! brute-force scan ([`kernel`]). Identities are read back as connected
//! components of the connection graph ([`metrics::extract_identities`]).

pub mod engine;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod stream_io;
pub mod synth;
pub mod tuner;

pub use engine::{Engine, EngineEventReport, EventAction, Stages};
pub use error::{OgmcError, Result};
pub use metrics::{IdentityPartition, MetricReport};
pub use model::{Cluster, ClusterDatabase, ClusterId, Params, Sample, SampleId};
