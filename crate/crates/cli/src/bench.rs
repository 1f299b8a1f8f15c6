//! Latency-scaling benchmark over an in-memory sample stream.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use anyhow::Result;
use ogmc_core::metrics::{evaluate, extract_identities, IdentityPartition};
use ogmc_core::stream_io::shuffle_order;
use ogmc_core::{Engine, Params, Sample, SampleId, Stages};
use serde::{Deserialize, Serialize};

use crate::stats::{mean, pearson, std_dev, LatencySummary};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Strictly increasing cumulative sample counts.
    pub checkpoints: Vec<usize>,
    pub repeats: usize,
    /// Repetition `r` is shuffled with `seed + r`; file order when `None`.
    pub seed: Option<u64>,
    pub stages: Stages,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub samples: usize,
    pub live_clusters: f64,
    pub mean_latency_us: f64,
    pub median_latency_us: f64,
    pub p99_latency_us: f64,
    pub max_latency_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub seed: Option<u64>,
    pub total_ms: f64,
    pub rows: Vec<CheckpointRow>,
    /// Over every processed sample.
    pub latency: LatencySummary,
    pub bcubed_f: Option<f64>,
    pub nmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub params: Params,
    pub config: BenchConfig,
    /// Rows averaged over repetitions (maxima take the maximum).
    pub rows: Vec<CheckpointRow>,
    pub runs: Vec<BenchRun>,
    /// Correlation of the mean latency column with the cluster column.
    pub pearson_latency_vs_clusters: f64,
    /// Worst per-sample latency over the median one, worst run.
    pub max_over_median: f64,
    /// Largest checkpoint mean latency over the median checkpoint mean.
    pub checkpoint_max_over_median: f64,
    pub f_mean: Option<f64>,
    pub f_std: Option<f64>,
}

/// Truth used to score every repetition.
pub struct Truth<'a> {
    pub partition: &'a IdentityPartition,
    pub ignore: &'a BTreeSet<SampleId>,
}

pub fn validate_checkpoints(checkpoints: &[usize], n_samples: usize) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("at least one checkpoint is required".into()).into());
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("checkpoints must be positive and strictly increasing".into()).into());
    }
    if *checkpoints.last().unwrap() > n_samples {
        return Err(CliError::Usage(format!(
            "last checkpoint {} exceeds the {n_samples} available samples",
            checkpoints.last().unwrap()
        ))
        .into());
    }
    Ok(())
}

fn one_run(
    dim: usize,
    samples: &[Sample],
    truth: Option<&Truth<'_>>,
    params: Params,
    cfg: &BenchConfig,
    seed: Option<u64>,
) -> Result<BenchRun> {
    let order: Vec<usize> = match seed {
        Some(s) => shuffle_order(samples.len(), s),
        None => (0..samples.len()).collect(),
    };
    let last = *cfg.checkpoints.last().expect("validated");
    let mut engine = Engine::new(dim, params)?.with_stages(cfg.stages);
    let mut latencies = Vec::with_capacity(last);
    let mut rows = Vec::with_capacity(cfg.checkpoints.len());
    let mut next_cp = 0;
    let mut window_start = 0;
    let start = Instant::now();
    for (n, &i) in order.iter().take(last).enumerate() {
        let r = engine.process(&samples[i])?;
        latencies.push(r.elapsed_us());
        if n + 1 == cfg.checkpoints[next_cp] {
            let w = LatencySummary::of(&latencies[window_start..]);
            rows.push(CheckpointRow {
                samples: n + 1,
                live_clusters: engine.database().len() as f64,
                mean_latency_us: w.mean_us,
                median_latency_us: w.p50_us,
                p99_latency_us: w.p99_us,
                max_latency_us: w.max_us,
            });
            window_start = n + 1;
            next_cp += 1;
        }
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let (bcubed_f, nmi) = match truth {
        Some(t) => {
            let pred = extract_identities(engine.database());
            // only samples streamed so far are scored
            let seen: BTreeSet<SampleId> = order.iter().take(last).map(|&i| samples[i].id).collect();
            let partial = IdentityPartition::from_labels(
                t.partition.assignment().iter().filter(|(s, _)| seen.contains(s)).map(|(&s, &l)| (s, l)),
            );
            let m = evaluate(&pred, &partial, t.ignore)?;
            (Some(m.bcubed_f), Some(m.nmi))
        }
        None => (None, None),
    };
    Ok(BenchRun {
        seed,
        total_ms,
        rows,
        latency: LatencySummary::of(&latencies),
        bcubed_f,
        nmi,
    })
}

pub fn run_bench(
    dim: usize,
    samples: &[Sample],
    truth: Option<Truth<'_>>,
    params: Params,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    validate_checkpoints(&cfg.checkpoints, samples.len())?;
    if cfg.repeats == 0 {
        return Err(CliError::Usage("repeats must be at least 1".into()).into());
    }
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.seed.map(|s| s.wrapping_add(r as u64));
        runs.push(one_run(dim, samples, truth.as_ref(), params, cfg, seed)?);
    }

    let rows: Vec<CheckpointRow> = (0..cfg.checkpoints.len())
        .map(|k| {
            let col = |f: fn(&CheckpointRow) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r.rows[k])).collect() };
            CheckpointRow {
                samples: cfg.checkpoints[k],
                live_clusters: mean(&col(|r| r.live_clusters)),
                mean_latency_us: mean(&col(|r| r.mean_latency_us)),
                median_latency_us: mean(&col(|r| r.median_latency_us)),
                p99_latency_us: mean(&col(|r| r.p99_latency_us)),
                max_latency_us: col(|r| r.max_latency_us).into_iter().fold(f64::MIN, f64::max),
            }
        })
        .collect();

    let lat: Vec<f64> = rows.iter().map(|r| r.mean_latency_us).collect();
    let k: Vec<f64> = rows.iter().map(|r| r.live_clusters).collect();
    let pearson_latency_vs_clusters = if rows.len() >= 2 { pearson(&lat, &k) } else { f64::NAN };
    let max_over_median = runs
        .iter()
        .map(|r| r.latency.max_us / r.latency.p50_us)
        .fold(f64::MIN, f64::max);
    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    let checkpoint_max_over_median = sorted.last().copied().unwrap_or(f64::NAN) / crate::stats::percentile(&sorted, 0.5);

    let fs: Vec<f64> = runs.iter().filter_map(|r| r.bcubed_f).collect();
    let (f_mean, f_std) = if fs.is_empty() {
        (None, None)
    } else {
        (Some(mean(&fs)), Some(std_dev(&fs)))
    };
    Ok(BenchReport {
        params,
        config: cfg.clone(),
        rows,
        runs,
        pearson_latency_vs_clusters,
        max_over_median,
        checkpoint_max_over_median,
        f_mean,
        f_std,
    })
}

/// One line per checkpoint, averaged over repetitions.
pub fn to_csv(report: &BenchReport) -> String {
    let mut s = String::from("samples,live_clusters,mean_latency_us,median_latency_us,p99_latency_us,max_latency_us\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{:.3},{:.3},{:.3},{:.3}",
            r.samples, r.live_clusters, r.mean_latency_us, r.median_latency_us, r.p99_latency_us, r.max_latency_us
        );
    }
    s
}
