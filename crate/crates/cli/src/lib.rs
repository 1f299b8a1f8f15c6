//! Command-line harness: run, eval, tune, bench and synth subcommands.
//!
//! Every subcommand computes its full result in memory and only then writes
//! its output files, each through a temporary sibling and a rename, so a
//! failing command leaves no partial outputs behind.

pub mod args;
pub mod bench;
pub mod commands;
pub mod output;
pub mod stats;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ogmc_core::stream_io::FormatError;
use ogmc_core::{OgmcError, Params};
use serde::Deserialize;
use thiserror::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Success = 0,
    Usage = 1,
    Data = 2,
    Invariant = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Maps an error chain to an exit code. The innermost recognised cause wins.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => ExitKind::Usage,
                CliError::Invariant(_) => ExitKind::Invariant,
            };
        }
        if let Some(e) = cause.downcast_ref::<OgmcError>() {
            return match e {
                OgmcError::InvalidParams(_) | OgmcError::InvalidTuneConfig(_) => ExitKind::Usage,
                OgmcError::RobustPairFusion(..)
                | OgmcError::DuplicateMembership(..)
                | OgmcError::SelfMerge(_)
                | OgmcError::UnknownCluster(_) => ExitKind::Invariant,
                _ => ExitKind::Data,
            };
        }
        if cause.downcast_ref::<FormatError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitKind::Data;
        }
    }
    ExitKind::Data
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Bare(Params),
    Wrapped { params: Params },
}

/// Resolves the `params` flag: five comma separated values, a JSON file
/// holding a params object (bare or under a `params` key), or the defaults.
pub fn resolve_params(spec: Option<&str>) -> Result<Params> {
    let Some(spec) = spec else {
        return Ok(Params::default());
    };
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() == 5 {
        if let (Ok(f), Ok(wc), Ok(sc), Ok(ns), Ok(nc)) = (
            parts[0].parse::<f64>(),
            parts[1].parse::<f64>(),
            parts[2].parse::<f64>(),
            parts[3].parse::<usize>(),
            parts[4].parse::<usize>(),
        ) {
            return Ok(Params::new(f, wc, sc, ns, nc)?);
        }
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Usage(format!("params `{spec}` is neither five values nor an existing file")).into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading params file {}", path.display()))?;
    let parsed: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("params file {}: {e}", path.display())))?;
    let p = match parsed {
        ParamsFile::Bare(p) | ParamsFile::Wrapped { params: p } => p,
    };
    p.validate()?;
    Ok(p)
}

pub fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse `{s}`")).into())
        })
        .collect()
}

/// Sizes the global rayon pool from `OGMC_WORKERS` when it is set.
pub fn init_worker_pool() -> Result<()> {
    if let Ok(v) = std::env::var("OGMC_WORKERS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("OGMC_WORKERS must be an integer, got `{v}`")))?;
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
