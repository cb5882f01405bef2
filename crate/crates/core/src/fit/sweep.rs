//! Hyperparameter sweeps over fitting experiments and configuration selection.
//!
//! The staged ablation sweeps the tolerance first (sharpness fixed at 10, no
//! attraction), then the sharpness at the selected tolerance, then the
//! attraction weight at both selected values. The first two stages pick the
//! value with the highest mean coverage, breaking ties by lower spurious
//! fraction and then lower Chamfer distance. The last stage picks the knee of
//! the (coverage, sp_bar) Pareto frontier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::shapes::{generate_shape, ShapeKind, ShapeSpec};
use super::{fit_points, FitConfig, FitResult, OptConfig};
use crate::cloud::{BiAssignment, PointCloud};
use crate::losses::{chamfer_from_assignment, ChamferVariant, LossKind, QalParams};
use crate::metrics::{quality_from_assignment, subset_coverage, QualityReport, DEFAULT_TAU};
use crate::{Error, Result};

/// Allowed sp_bar erosion below the frontier maximum when picking the knee.
pub const DEFAULT_KNEE_DELTA: f64 = 0.05;

/// Attraction weights swept in the last ablation stage.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// Stream offset separating the initial cloud's seed from the ground truth's.
pub const INIT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationStage {
    EpsSweep,
    OmegaSweep,
    LambdaSweep,
}

impl AblationStage {
    pub fn name(self) -> &'static str {
        match self {
            AblationStage::EpsSweep => "eps",
            AblationStage::OmegaSweep => "omega",
            AblationStage::LambdaSweep => "lambda",
        }
    }

    fn apply(self, base: &QalParams, value: f64) -> QalParams {
        let mut p = *base;
        match self {
            AblationStage::EpsSweep => p.eps = value,
            AblationStage::OmegaSweep => p.omega = value,
            AblationStage::LambdaSweep => p.lambda_attr = value,
        }
        p
    }
}

impl std::str::FromStr for AblationStage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eps" => Ok(AblationStage::EpsSweep),
            "omega" => Ok(AblationStage::OmegaSweep),
            "lambda" => Ok(AblationStage::LambdaSweep),
            other => Err(format!("unknown stage '{other}' (expected eps, omega or lambda)")),
        }
    }
}

/// One fitting experiment: a ground-truth shape, an initial cloud and the
/// optimizer. Seeds passed to the runners replace the shape seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gt: ShapeSpec,
    pub init: ShapeSpec,
    pub opt: OptConfig,
    pub tau_eval: f64,
    pub metric_every: usize,
}

impl ExperimentConfig {
    /// 256 points from the unit sphere fitted to a 512-point ring with spur.
    pub fn ring_with_spur() -> Self {
        Self {
            gt: ShapeSpec::new(ShapeKind::RingWithSpur, 512, 0),
            init: ShapeSpec::new(ShapeKind::UniformSphere, 256, 0),
            opt: OptConfig::default(),
            tau_eval: DEFAULT_TAU,
            metric_every: 100,
        }
    }

    pub fn shapes_for_seed(&self, seed: u64) -> Result<(super::Shape, PointCloud)> {
        let gt = generate_shape(&ShapeSpec { seed, ..self.gt })?;
        let init = generate_shape(&ShapeSpec {
            seed: seed ^ INIT_SEED_SALT,
            ..self.init
        })?;
        Ok((gt, init.cloud))
    }
}

/// Final state of one fitting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub report: QualityReport,
    /// Mean-form L1 Chamfer distance of the final prediction.
    pub chamfer: f64,
    /// Coverage over thin-substructure ground-truth points, if the shape has any.
    pub spur_coverage: Option<f64>,
}

/// Runs one experiment with one loss and seed.
pub fn run_experiment(exp: &ExperimentConfig, loss: LossKind, seed: u64) -> Result<(RunOutcome, FitResult)> {
    let (gt, init) = exp.shapes_for_seed(seed)?;
    let cfg = FitConfig {
        loss,
        opt: exp.opt,
        tau_eval: exp.tau_eval,
        metric_every: exp.metric_every,
        seed,
    };
    let fit = fit_points(&init, &gt.cloud, &cfg)?;
    let nn = BiAssignment::compute(&fit.final_pred, &gt.cloud, Default::default())?;
    let report = quality_from_assignment(&fit.final_pred, &gt.cloud, &nn, exp.tau_eval)?;
    let chamfer = chamfer_from_assignment(&fit.final_pred, &gt.cloud, &nn, ChamferVariant::L1, false).total;
    let spur_coverage = subset_coverage(&nn.gt_to_pred.distances, &gt.thin, exp.tau_eval);
    Ok((
        RunOutcome {
            seed,
            report,
            chamfer,
            spur_coverage,
        },
        fit,
    ))
}

/// Means over the successful seeds of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub coverage: f64,
    pub spurious: f64,
    pub sp_bar: f64,
    pub chamfer: f64,
    pub spur_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub params: QalParams,
    pub runs: Vec<RunOutcome>,
    /// `(seed, error)` for runs that failed; excluded from the means.
    pub failures: Vec<(u64, String)>,
    pub mean: Option<CellMeans>,
}

impl SweepCell {
    fn from_runs(value: f64, params: QalParams, results: Vec<(u64, Result<RunOutcome>)>) -> Self {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (seed, r) in results {
            match r {
                Ok(o) => runs.push(o),
                Err(e) => failures.push((seed, e.to_string())),
            }
        }
        let mean = (!runs.is_empty()).then(|| {
            let n = runs.len() as f64;
            let spur: Vec<f64> = runs.iter().filter_map(|r| r.spur_coverage).collect();
            CellMeans {
                coverage: runs.iter().map(|r| r.report.coverage).sum::<f64>() / n,
                spurious: runs.iter().map(|r| r.report.spurious).sum::<f64>() / n,
                sp_bar: runs.iter().map(|r| r.report.sp_bar).sum::<f64>() / n,
                chamfer: runs.iter().map(|r| r.chamfer).sum::<f64>() / n,
                spur_coverage: (!spur.is_empty()).then(|| spur.iter().sum::<f64>() / spur.len() as f64),
            }
        });
        Self {
            value,
            params,
            runs,
            failures,
            mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub stage: AblationStage,
    pub base: QalParams,
    pub seeds: Vec<u64>,
    pub grid: Vec<SweepCell>,
    /// Index into `grid` of the selected cell.
    pub knee_index: usize,
    pub knee: QalParams,
    pub failed_cells: usize,
    pub selection_log: Vec<String>,
}

/// Sweeps one parameter of `base` over `values`, fitting every seed.
///
/// Cells run in parallel; results are collected in grid order. A run that
/// fails is recorded in its cell and excluded from the means.
pub fn run_ablation(
    stage: AblationStage,
    base: &QalParams,
    values: &[f64],
    experiment: &ExperimentConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    let cells_params = values
        .iter()
        .map(|&v| {
            let p = stage.apply(base, v);
            p.validate().map(|_| (v, p))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Vec<(usize, u64, Result<RunOutcome>)> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let loss = LossKind::Qal(cells_params[c].1);
            (c, seed, run_experiment(experiment, loss, seed).map(|(o, _)| o))
        })
        .collect();

    let mut per_cell: Vec<Vec<(u64, Result<RunOutcome>)>> = (0..values.len()).map(|_| Vec::new()).collect();
    for (c, seed, r) in outcomes {
        per_cell[c].push((seed, r));
    }
    let grid: Vec<SweepCell> = per_cell
        .into_iter()
        .zip(&cells_params)
        .map(|(results, &(v, p))| SweepCell::from_runs(v, p, results))
        .collect();
    let failed_cells = grid.iter().filter(|c| c.mean.is_none()).count();

    let mut selection_log = Vec::new();
    let knee_index = select_cell(stage, &grid, &mut selection_log)?;
    Ok(SweepReport {
        stage,
        base: *base,
        seeds: seeds.to_vec(),
        knee: grid[knee_index].params,
        knee_index,
        grid,
        failed_cells,
        selection_log,
    })
}

fn select_cell(stage: AblationStage, grid: &[SweepCell], log: &mut Vec<String>) -> Result<usize> {
    let usable: Vec<(usize, &CellMeans)> = grid
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.mean.as_ref().map(|m| (i, m)))
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid("every sweep cell failed; nothing to select"));
    }
    for (i, c) in grid.iter().enumerate() {
        match &c.mean {
            Some(m) => log.push(format!(
                "cell {i} value={}: cov={:.6} sp={:.6} sp_bar={:.6} cd={:.6}",
                c.value, m.coverage, m.spurious, m.sp_bar, m.chamfer
            )),
            None => log.push(format!("cell {i} value={}: failed on every seed", c.value)),
        }
    }
    let picked = match stage {
        AblationStage::EpsSweep | AblationStage::OmegaSweep => {
            let triples: Vec<(f64, f64, f64)> = usable
                .iter()
                .map(|(_, m)| (m.coverage, m.spurious, m.chamfer))
                .collect();
            let k = select_by_coverage(&triples);
            log.push(format!(
                "rule: max coverage, ties by min spurious then min chamfer -> cell {}",
                usable[k].0
            ));
            usable[k].0
        }
        AblationStage::LambdaSweep => {
            let pairs: Vec<(f64, f64)> = usable.iter().map(|(_, m)| (m.coverage, m.sp_bar)).collect();
            let (k, trace) = pareto_knee_traced(&pairs, DEFAULT_KNEE_DELTA);
            log.extend(trace);
            log.push(format!(
                "rule: pareto knee (delta={DEFAULT_KNEE_DELTA}) -> cell {}",
                usable[k].0
            ));
            usable[k].0
        }
    };
    Ok(picked)
}

/// Index of the entry with maximal coverage, ties broken by minimal spurious
/// fraction, then minimal Chamfer distance, then lowest index.
/// Entries are `(coverage, spurious, chamfer)`.
pub fn select_by_coverage(entries: &[(f64, f64, f64)]) -> usize {
    assert!(!entries.is_empty(), "selection needs at least one entry");
    let mut best = 0;
    for (i, e) in entries.iter().enumerate().skip(1) {
        let b = &entries[best];
        let better = e.0 > b.0 || (e.0 == b.0 && (e.1 < b.1 || (e.1 == b.1 && e.2 < b.2)));
        if better {
            best = i;
        }
    }
    best
}

/// Knee of the `(coverage, sp_bar)` Pareto frontier.
///
/// Dominated entries are discarded. Among the rest, the entry with the highest
/// coverage whose sp_bar is within `delta` of the frontier's best sp_bar wins;
/// remaining ties go to the lowest index.
pub fn pareto_knee(entries: &[(f64, f64)], delta: f64) -> usize {
    pareto_knee_traced(entries, delta).0
}

fn pareto_knee_traced(entries: &[(f64, f64)], delta: f64) -> (usize, Vec<String>) {
    assert!(!entries.is_empty(), "knee selection needs at least one entry");
    let dominates = |a: &(f64, f64), b: &(f64, f64)| a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1);
    let frontier: Vec<usize> = (0..entries.len())
        .filter(|&i| !entries.iter().any(|other| dominates(other, &entries[i])))
        .collect();
    let sp_max = frontier.iter().map(|&i| entries[i].1).fold(f64::NEG_INFINITY, f64::max);
    let floor = sp_max - delta;
    let mut best: Option<usize> = None;
    for &i in &frontier {
        if entries[i].1 >= floor && best.map_or(true, |b| entries[i].0 > entries[b].0) {
            best = Some(i);
        }
    }
    let knee = best.expect("the frontier entry with maximal sp_bar always qualifies");
    let trace = vec![
        format!("frontier: {frontier:?}"),
        format!("sp_bar floor: {floor:.6} (max {sp_max:.6} - delta {delta})"),
    ];
    (knee, trace)
}

/// Results of all three ablation stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedReport {
    pub eps: SweepReport,
    pub omega: SweepReport,
    pub lambda: SweepReport,
    pub selected: QalParams,
}

/// Tolerance sweep (sharpness 10, no attraction), then sharpness at the
/// chosen tolerance, then the attraction weight at both.
pub fn run_staged_ablation(
    experiment: &ExperimentConfig,
    seeds: &[u64],
    eps_values: &[f64],
    omega_values: &[f64],
    lambda_values: &[f64],
) -> Result<StagedReport> {
    let start = QalParams {
        eps: QalParams::default().eps,
        omega: 10.0,
        lambda_attr: 0.0,
        symmetric_attraction: false,
    };
    let eps = run_ablation(AblationStage::EpsSweep, &start, eps_values, experiment, seeds)?;
    let omega = run_ablation(AblationStage::OmegaSweep, &eps.knee, omega_values, experiment, seeds)?;
    let lambda = run_ablation(
        AblationStage::LambdaSweep,
        &omega.knee,
        lambda_values,
        experiment,
        seeds,
    )?;
    let selected = lambda.knee;
    Ok(StagedReport {
        eps,
        omega,
        lambda,
        selected,
    })
}
