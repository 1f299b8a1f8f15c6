//! Two-phase parameter search.
//!
//! Phase one searches the three distance thresholds on a lattice whose step
//! halves every round, with `ns_r = 4` and `nc_r = 10` held fixed. Round one
//! covers `[threshold_lo, threshold_hi]` at `initial_step` under the ordering
//! `thr_sc <= thr_f <= thr_wc`; each later round re-centers a window of plus
//! or minus the previous step around the incumbent at half that step. Phase
//! two scans the `(ns_r, nc_r)` grid with the thresholds frozen.
//!
//! Lattice points are kept as integer multiples of the finest step so that
//! repeated points across rounds are recognised exactly and reused.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Stages};
use crate::error::{OgmcError, Result};
use crate::metrics::{bcubed, extract_identities, IdentityPartition};
use crate::model::{Params, Sample, SampleId};

const PHASE1_NS_R: usize = 4;
const PHASE1_NC_R: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub threshold_lo: f64,
    pub threshold_hi: f64,
    pub initial_step: f64,
    pub refinement_rounds: usize,
    /// Inclusive `ns_r` interval.
    pub ns_r_range: (usize, usize),
    pub nc_r_values: Vec<usize>,
    /// 0 or 1 evaluates serially.
    pub parallel_workers: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            threshold_lo: 0.0,
            threshold_hi: 2.0,
            initial_step: 0.1,
            refinement_rounds: 4,
            ns_r_range: (3, 6),
            nc_r_values: vec![5, 10, 15, 20, 25],
            parallel_workers: 1,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OgmcError::InvalidTuneConfig(m.to_string()));
        if !(self.initial_step > 0.0) {
            return bad("initial_step must be positive");
        }
        if self.refinement_rounds < 1 || self.refinement_rounds > 20 {
            return bad("refinement_rounds must be in 1..=20");
        }
        if !(0.0 <= self.threshold_lo && self.threshold_lo < self.threshold_hi && self.threshold_hi <= 2.0) {
            return bad("threshold range must satisfy 0 <= lo < hi <= 2");
        }
        if self.ns_r_range.0 < 1 || self.ns_r_range.0 > self.ns_r_range.1 {
            return bad("ns_r_range must be a non-empty interval starting at 1 or above");
        }
        if self.nc_r_values.is_empty() || self.nc_r_values.contains(&0) {
            return bad("nc_r_values must be non-empty and positive");
        }
        Ok(())
    }

    /// Lattice step of every round.
    pub fn steps(&self) -> Vec<f64> {
        (0..self.refinement_rounds)
            .map(|r| self.initial_step / f64::from(1u32 << r))
            .collect()
    }

    fn finest_step(&self) -> f64 {
        self.initial_step / f64::from(1u32 << (self.refinement_rounds - 1))
    }

    fn coarse_units(&self) -> i64 {
        1i64 << (self.refinement_rounds - 1)
    }

    fn max_index(&self) -> i64 {
        ((self.threshold_hi - self.threshold_lo) / self.finest_step() + 1e-9).floor() as i64
    }

    fn value(&self, idx: i64) -> f64 {
        self.threshold_lo + idx as f64 * self.finest_step()
    }

    /// Number of ordering-feasible points in the first round:
    /// `C(m + 2, 3)` for `m` lattice values per axis.
    pub fn round_one_size(&self) -> usize {
        let m = (self.max_index() / self.coarse_units() + 1) as usize;
        m * (m + 1) * (m + 2) / 6
    }
}

/// Labelled samples used as the tuning objective.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub dim: usize,
    pub samples: Vec<Sample>,
    pub truth: IdentityPartition,
    pub ignore: BTreeSet<SampleId>,
}

impl TrainingSet {
    pub fn new(
        dim: usize,
        samples: Vec<Sample>,
        truth: IdentityPartition,
        ignore: BTreeSet<SampleId>,
    ) -> Result<Self> {
        if samples.is_empty() || truth.is_empty() {
            return Err(OgmcError::EmptyTrainingSet);
        }
        Ok(Self {
            dim,
            samples,
            truth,
            ignore,
        })
    }

    /// Clusters the whole set in stream order and returns BCubed F.
    pub fn score(&self, params: Params, stages: Stages) -> Result<f64> {
        let mut engine = Engine::new(self.dim, params)?.with_stages(stages);
        for s in &self.samples {
            engine.process(s)?;
        }
        let pred = extract_identities(engine.database());
        Ok(bcubed(&pred, &self.truth, &self.ignore)?.f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub phase: u8,
    pub round: usize,
    pub params: Params,
    pub score: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub thr_f: f64,
    pub thr_wc: f64,
    pub thr_sc: f64,
    pub score: f64,
    pub steps: Vec<f64>,
    /// New evaluations per round; points already scored are reused.
    pub round_evaluations: Vec<usize>,
    /// Incumbent score at the end of every round.
    pub incumbent_scores: Vec<f64>,
    pub evaluations: Vec<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSearch {
    pub ns_r: usize,
    pub nc_r: usize,
    pub score: f64,
    pub evaluations: Vec<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub config: TuneConfig,
    pub thresholds: ThresholdSearch,
    pub robustness: RobustnessSearch,
    pub params: Params,
}

/// Lattice coordinates `(sc, f, wc)` in finest-step units.
type Triple = (i64, i64, i64);

fn run_all<T, F>(items: &[T], workers: usize, f: F) -> Result<Vec<(f64, f64)>>
where
    T: Sync,
    F: Fn(&T) -> Result<f64> + Sync,
{
    let timed = |item: &T| -> Result<(f64, f64)> {
        let start = Instant::now();
        let score = f(item)?;
        Ok((score, start.elapsed().as_secs_f64() * 1e3))
    };
    if workers <= 1 {
        return items.iter().map(timed).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| OgmcError::InvalidTuneConfig(e.to_string()))?;
    pool.install(|| items.par_iter().map(timed).collect())
}

/// Higher score wins; ties go to smaller thr_f, then thr_wc, then thr_sc.
fn better(a: (f64, Triple), b: (f64, Triple)) -> bool {
    let (sa, (sca, fa, wca)) = a;
    let (sb, (scb, fb, wcb)) = b;
    match sa.total_cmp(&sb) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (fa, wca, sca) < (fb, wcb, scb),
    }
}

pub fn tune_thresholds(train: &TrainingSet, cfg: &TuneConfig) -> Result<ThresholdSearch> {
    cfg.validate()?;
    if train.samples.is_empty() {
        return Err(OgmcError::EmptyTrainingSet);
    }
    let max_idx = cfg.max_index();
    let coarse = cfg.coarse_units();
    let mut scored: BTreeMap<Triple, f64> = BTreeMap::new();
    let mut evaluations = Vec::new();
    let mut round_evaluations = Vec::new();
    let mut incumbent_scores = Vec::new();
    let mut incumbent: Option<(f64, Triple)> = None;

    for round in 0..cfg.refinement_rounds {
        let step_units = coarse >> round;
        let axis = |centre: Option<i64>| -> Vec<i64> {
            match centre {
                None => (0..=max_idx).step_by(coarse as usize).collect(),
                Some(c) => (-2..=2)
                    .map(|k| c + k * step_units)
                    .filter(|&i| (0..=max_idx).contains(&i))
                    .collect(),
            }
        };
        let inc = incumbent.map(|(_, t)| t);
        let (sc_axis, f_axis, wc_axis) = (
            axis(inc.map(|t| t.0)),
            axis(inc.map(|t| t.1)),
            axis(inc.map(|t| t.2)),
        );
        let mut candidates: Vec<Triple> = Vec::new();
        for &sc in &sc_axis {
            for &f in &f_axis {
                if sc > f {
                    continue;
                }
                for &wc in &wc_axis {
                    if f <= wc && !scored.contains_key(&(sc, f, wc)) {
                        candidates.push((sc, f, wc));
                    }
                }
            }
        }
        let params_of = |&(sc, f, wc): &Triple| -> Result<Params> {
            Params::new(cfg.value(f), cfg.value(wc), cfg.value(sc), PHASE1_NS_R, PHASE1_NC_R)
        };
        let results = run_all(&candidates, cfg.parallel_workers, |t| {
            train.score(params_of(t)?, Stages::Full)
        })?;
        for (t, (score, runtime_ms)) in candidates.iter().zip(results) {
            scored.insert(*t, score);
            evaluations.push(Evaluation {
                phase: 1,
                round: round + 1,
                params: params_of(t)?,
                score,
                runtime_ms,
            });
        }
        for (t, &score) in &scored {
            if incumbent.map_or(true, |i| better((score, *t), i)) {
                incumbent = Some((score, *t));
            }
        }
        round_evaluations.push(candidates.len());
        incumbent_scores.push(incumbent.map_or(f64::NAN, |i| i.0));
    }

    let (score, (sc, f, wc)) = incumbent.ok_or(OgmcError::EmptyTrainingSet)?;
    Ok(ThresholdSearch {
        thr_f: cfg.value(f),
        thr_wc: cfg.value(wc),
        thr_sc: cfg.value(sc),
        score,
        steps: cfg.steps(),
        round_evaluations,
        incumbent_scores,
        evaluations,
    })
}

pub fn tune_robustness(
    train: &TrainingSet,
    thresholds: (f64, f64, f64),
    cfg: &TuneConfig,
) -> Result<RobustnessSearch> {
    cfg.validate()?;
    if train.samples.is_empty() {
        return Err(OgmcError::EmptyTrainingSet);
    }
    let (thr_f, thr_wc, thr_sc) = thresholds;
    let mut cells = Vec::new();
    for ns_r in cfg.ns_r_range.0..=cfg.ns_r_range.1 {
        for &nc_r in &cfg.nc_r_values {
            cells.push(Params::new(thr_f, thr_wc, thr_sc, ns_r, nc_r)?);
        }
    }
    let results = run_all(&cells, cfg.parallel_workers, |p| train.score(*p, Stages::Full))?;
    let mut best: Option<(f64, usize, usize)> = None;
    let mut evaluations = Vec::with_capacity(cells.len());
    for (p, (score, runtime_ms)) in cells.iter().zip(results) {
        let wins = match best {
            None => true,
            Some((s, ns, nc)) => match score.total_cmp(&s) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => (p.ns_r, p.nc_r) < (ns, nc),
            },
        };
        if wins {
            best = Some((score, p.ns_r, p.nc_r));
        }
        evaluations.push(Evaluation {
            phase: 2,
            round: 1,
            params: *p,
            score,
            runtime_ms,
        });
    }
    let (score, ns_r, nc_r) = best.ok_or(OgmcError::EmptyTrainingSet)?;
    Ok(RobustnessSearch {
        ns_r,
        nc_r,
        score,
        evaluations,
    })
}

/// Runs both phases.
pub fn tune(train: &TrainingSet, cfg: &TuneConfig) -> Result<TuneReport> {
    let thresholds = tune_thresholds(train, cfg)?;
    let robustness = tune_robustness(
        train,
        (thresholds.thr_f, thresholds.thr_wc, thresholds.thr_sc),
        cfg,
    )?;
    let params = Params::new(
        thresholds.thr_f,
        thresholds.thr_wc,
        thresholds.thr_sc,
        robustness.ns_r,
        robustness.nc_r,
    )?;
    Ok(TuneReport {
        config: cfg.clone(),
        thresholds,
        robustness,
        params,
    })
}
