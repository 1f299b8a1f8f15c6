use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use ogmc_core::metrics::{evaluate, extract_identities};
use ogmc_core::stream_io::{
    encode_vectors, format_assignments, format_labels, read_assignments, read_labels, read_snapshot, read_vectors,
    shuffle_order, snapshot, LabelSet,
};
use ogmc_core::synth::{SampleOrder, SynthConfig};
use ogmc_core::tuner::{tune, TrainingSet, TuneConfig, TuneReport};
use ogmc_core::{Engine, EventAction, MetricReport, Params, Stages};
use serde::Serialize;

use crate::args::{BenchArgs, EvalConfig, RunConfig, SynthArgs, TuneArgs};
use crate::bench::{run_bench, to_csv, BenchConfig, BenchReport, Truth};
use crate::output::Outputs;
use crate::stats::LatencySummary;
use crate::{init_worker_pool, parse_list, resolve_params, CliError};

#[derive(Debug, Clone, Default, Serialize)]
pub struct ActionCounts {
    pub fused_into_existing: usize,
    pub created_new: usize,
    pub created_new_connected: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub params: Params,
    pub stages: Stages,
    pub assignments_path: PathBuf,
    pub n_samples: usize,
    pub total_wall_ms: f64,
    pub latency: LatencySummary,
    pub actions: ActionCounts,
    pub stage2_fusions: usize,
    pub n_clusters: usize,
    pub n_robust_clusters: usize,
    pub n_connections: usize,
    pub n_identities: usize,
    pub metrics: Option<MetricReport>,
}

fn load_labels(path: &PathBuf) -> Result<LabelSet> {
    read_labels(path).with_context(|| format!("reading labels {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport> {
    init_worker_pool()?;
    let mut vectors = read_vectors(&cfg.vectors_path)
        .with_context(|| format!("reading vectors {}", cfg.vectors_path.display()))?;
    for s in &mut vectors.samples {
        s.id = s
            .id
            .checked_add(cfg.id_offset)
            .ok_or_else(|| CliError::Usage("id_offset overflows sample ids".into()))?;
    }
    let labels = cfg.labels_path.as_ref().map(load_labels).transpose()?;
    let stages = if cfg.stage1_only { Stages::SampleOnly } else { Stages::Full };

    let mut engine = match &cfg.snapshot_in {
        Some(path) => {
            let db = read_snapshot(path).with_context(|| format!("reading snapshot {}", path.display()))?;
            if let Some(spec) = &cfg.params {
                if resolve_params(Some(spec))? != *db.params() {
                    return Err(CliError::Usage("params differ from the snapshot's params".into()).into());
                }
            }
            if db.dim() != vectors.dim {
                return Err(ogmc_core::OgmcError::DimensionMismatch {
                    expected: db.dim(),
                    actual: vectors.dim,
                }
                .into());
            }
            Engine::from_database(db)
        }
        None => Engine::new(vectors.dim, resolve_params(cfg.params.as_deref())?)?,
    }
    .with_stages(stages);
    let params = *engine.params();

    let order: Vec<usize> = match cfg.seed {
        Some(seed) => shuffle_order(vectors.samples.len(), seed),
        None => (0..vectors.samples.len()).collect(),
    };
    let mut latencies = Vec::with_capacity(order.len());
    let mut actions = ActionCounts::default();
    let mut stage2_fusions = 0;
    let start = Instant::now();
    for &i in &order {
        let sample = &vectors.samples[i];
        let r = engine.process(sample)?;
        latencies.push(r.elapsed_us());
        stage2_fusions += r.fusions_performed;
        match r.action {
            EventAction::FusedIntoExisting => actions.fused_into_existing += 1,
            EventAction::CreatedNew => actions.created_new += 1,
            EventAction::CreatedNewConnected => actions.created_new_connected += 1,
        }
        if cfg.check_invariants {
            let problems = engine.audit_rules();
            if !problems.is_empty() {
                return Err(CliError::Invariant(format!("after sample {}: {}", sample.id, problems.join("; "))).into());
            }
        }
    }
    let total_wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let problems = engine.audit_rules();
    if !problems.is_empty() {
        return Err(CliError::Invariant(problems.join("; ")).into());
    }

    let db = engine.database();
    let partition = extract_identities(db);
    let metrics = labels
        .as_ref()
        .map(|l| evaluate(&partition, &l.truth_partition(), &l.distractors))
        .transpose()?;
    let assignments_path = cfg.assignments_path.clone().unwrap_or_else(|| {
        let mut p = cfg.vectors_path.clone().into_os_string();
        p.push(".assignments.csv");
        PathBuf::from(p)
    });
    let report = RunReport {
        config: cfg.clone(),
        params,
        stages,
        assignments_path: assignments_path.clone(),
        n_samples: order.len(),
        total_wall_ms,
        latency: LatencySummary::of(&latencies),
        actions,
        stage2_fusions,
        n_clusters: db.len(),
        n_robust_clusters: db.robust_count(),
        n_connections: db.clusters().iter().map(|c| c.connections().len()).sum::<usize>() / 2,
        n_identities: partition.n_identities(),
        metrics,
    };

    let mut out = Outputs::new();
    out.stage(&assignments_path, format_assignments(&partition))?;
    if let Some(path) = &cfg.snapshot_out {
        out.stage(path, snapshot(db))?;
    }
    if let Some(path) = &cfg.report_path {
        out.stage(path, json(&report)?)?;
    }
    out.commit()?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub metrics: MetricReport,
    pub n_distractors: usize,
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    let pred = read_assignments(&cfg.pred_csv).with_context(|| format!("reading {}", cfg.pred_csv.display()))?;
    let labels = load_labels(&cfg.labels_path)?;
    let metrics = evaluate(&pred, &labels.truth_partition(), &labels.distractors)?;
    let report = EvalReport {
        config: cfg.clone(),
        metrics,
        n_distractors: labels.distractors.len(),
    };
    if let Some(path) = &cfg.report_path {
        let mut out = Outputs::new();
        out.stage(path, json(&report)?)?;
        out.commit()?;
    }
    Ok(report)
}

pub fn tune_config(args: &TuneArgs) -> Result<TuneConfig> {
    let ns: Vec<usize> = parse_list("ns_r_range", &args.ns_r_range)?;
    if ns.len() != 2 {
        return Err(CliError::Usage("ns_r_range takes exactly two values `lo,hi`".into()).into());
    }
    let cfg = TuneConfig {
        threshold_lo: args.threshold_lo,
        threshold_hi: args.threshold_hi,
        initial_step: args.initial_step,
        refinement_rounds: args.refinement_rounds,
        ns_r_range: (ns[0], ns[1]),
        nc_r_values: parse_list("nc_r_values", &args.nc_r_values)?,
        parallel_workers: args.parallel_workers,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneCommandReport {
    pub args: TuneArgs,
    #[serde(flatten)]
    pub tune: TuneReport,
}

pub fn cmd_tune(args: &TuneArgs) -> Result<TuneCommandReport> {
    let cfg = tune_config(args)?;
    let vectors = read_vectors(&args.train_vectors)
        .with_context(|| format!("reading vectors {}", args.train_vectors.display()))?;
    let labels = load_labels(&args.train_labels)?;
    let train = TrainingSet::new(vectors.dim, vectors.samples, labels.truth_partition(), labels.distractors)?;
    let report = TuneCommandReport {
        args: args.clone(),
        tune: tune(&train, &cfg)?,
    };
    let mut out = Outputs::new();
    out.stage(&args.params_out, json(&report.tune.params)?)?;
    if let Some(path) = &args.report_path {
        out.stage(path, json(&report)?)?;
    }
    out.commit()?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchCommandReport {
    pub args: BenchArgs,
    #[serde(flatten)]
    pub bench: BenchReport,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchCommandReport> {
    init_worker_pool()?;
    let params = resolve_params(args.params.as_deref())?;
    let checkpoints: Vec<usize> = parse_list("checkpoints", &args.checkpoints)?;
    let vectors = read_vectors(&args.vectors_path)
        .with_context(|| format!("reading vectors {}", args.vectors_path.display()))?;
    let labels = args.labels_path.as_ref().map(load_labels).transpose()?;
    let truth_partition = labels.as_ref().map(|l| l.truth_partition());
    let truth = match (&labels, &truth_partition) {
        (Some(l), Some(p)) => Some(Truth {
            partition: p,
            ignore: &l.distractors,
        }),
        _ => None,
    };
    let cfg = BenchConfig {
        checkpoints,
        repeats: args.repeats,
        seed: args.seed,
        stages: if args.stage1_only { Stages::SampleOnly } else { Stages::Full },
    };
    let bench = run_bench(vectors.dim, &vectors.samples, truth, params, &cfg)?;
    let report = BenchCommandReport {
        args: args.clone(),
        bench,
    };
    let mut out = Outputs::new();
    out.stage(&args.csv_path, to_csv(&report.bench))?;
    if let Some(path) = &args.report_path {
        out.stage(path, json(&report)?)?;
    }
    out.commit()?;
    Ok(report)
}

pub fn synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    if args.dim < 2 || args.n_identities == 0 || args.min_modes == 0 || args.min_modes > args.max_modes {
        return Err(CliError::Usage("synth needs dim >= 2, n_identities >= 1 and 1 <= min_modes <= max_modes".into()).into());
    }
    if !(0.0..1.0).contains(&args.noise_jitter) || !(-1.0..1.0).contains(&args.max_center_cos) {
        return Err(CliError::Usage("noise_jitter must be in [0,1) and max_center_cos in (-1,1)".into()).into());
    }
    Ok(SynthConfig {
        dim: args.dim,
        n_identities: args.n_identities,
        n_samples: args.n_samples,
        min_modes: args.min_modes,
        max_modes: args.max_modes,
        mode_offset: args.mode_offset,
        noise: args.noise,
        noise_jitter: args.noise_jitter,
        max_center_cos: args.max_center_cos,
        order: match args.growth_window {
            Some(window) => SampleOrder::Growth { window },
            None => SampleOrder::Shuffled,
        },
        seed: args.seed,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<usize> {
    let data = synth_config(args)?.generate();
    let mut out = Outputs::new();
    out.stage(&args.vectors_out, encode_vectors(data.dim, &data.vectors))?;
    out.stage(&args.labels_out, format_labels(&data.labels))?;
    out.commit()?;
    Ok(data.len())
}
