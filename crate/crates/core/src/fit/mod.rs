//! Direct optimization of prediction coordinates under a point-set loss.
//!
//! Instead of training a network, the harness treats every prediction point
//! as a free parameter and descends the loss gradient. This isolates how a
//! loss shapes recall and precision from backbone capacity.

mod shapes;
mod sweep;

use serde::{Deserialize, Serialize};

pub use shapes::{generate_shape, Shape, ShapeKind, ShapeSpec, MIN_STRUCTURED_POINTS, THIN_FRACTION};
pub use sweep::{
    pareto_knee, run_ablation, run_experiment, run_staged_ablation, select_by_coverage, AblationStage, CellMeans,
    ExperimentConfig, RunOutcome, StagedReport, SweepCell, SweepReport, DEFAULT_KNEE_DELTA, INIT_SEED_SALT,
    LAMBDA_GRID,
};

use crate::cloud::{BiAssignment, Point3, PointCloud};
use crate::losses::LossKind;
use crate::metrics::{quality_from_assignment, QualityReport, DEFAULT_TAU};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Gd,
    /// Heavy-ball momentum (beta = 0.9).
    Momentum,
    /// Per-coordinate adaptive steps with bias-corrected moment estimates.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "momentum" => Ok(Optimizer::Momentum),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer '{other}' (expected gd, momentum or adam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub optimizer: Optimizer,
    pub step: f64,
    pub iters: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            step: 1e-2,
            iters: 2000,
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over a flat coordinate vector.
#[derive(Debug, Clone)]
struct OptimizerState {
    config: OptConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(config: OptConfig, n_coords: usize) -> Self {
        Self {
            config,
            first: vec![0.0; n_coords],
            second: match config.optimizer {
                Optimizer::Adam => vec![0.0; n_coords],
                _ => Vec::new(),
            },
            t: 0,
        }
    }

    fn step(&mut self, coords: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let lr = self.config.step;
        match self.config.optimizer {
            Optimizer::Gd => {
                for (x, g) in coords.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            Optimizer::Momentum => {
                for ((x, g), v) in coords.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = MOMENTUM * *v + g;
                    *x -= lr * *v;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (((x, g), m), v) in coords.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *x -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss: LossKind,
    pub opt: OptConfig,
    /// Threshold for the recorded metric curve.
    pub tau_eval: f64,
    /// Record metrics every this many iterations (and after the last one).
    pub metric_every: usize,
    /// Echoed into results; the loop itself is deterministic.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(loss: LossKind, opt: OptConfig) -> Self {
        Self {
            loss,
            opt,
            tau_eval: DEFAULT_TAU,
            metric_every: 100,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub iteration: usize,
    pub report: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub final_pred: PointCloud,
    /// Loss at each iteration, evaluated before that iteration's update.
    pub loss_curve: Vec<f64>,
    pub metric_curve: Vec<MetricSample>,
    pub config: FitConfig,
}

impl FitResult {
    pub fn final_report(&self) -> &QualityReport {
        &self.metric_curve.last().expect("fit records a final sample").report
    }
}

/// Descends `config.loss` from `init` toward `gt`.
pub fn fit_points(init: &PointCloud, gt: &PointCloud, config: &FitConfig) -> Result<FitResult> {
    init.ensure_non_empty()?;
    gt.ensure_non_empty()?;
    if !(config.opt.step > 0.0 && config.opt.step.is_finite()) {
        return Err(Error::invalid(format!(
            "step must be positive, got {}",
            config.opt.step
        )));
    }
    if config.opt.iters == 0 {
        return Err(Error::invalid("iters must be at least 1"));
    }
    if config.metric_every == 0 {
        return Err(Error::invalid("metric_every must be at least 1"));
    }
    if let LossKind::Qal(params) = &config.loss {
        params.validate()?;
    }

    let mut coords = init.flat();
    let mut state = OptimizerState::new(config.opt, coords.len());
    let mut pred = init.clone();
    let mut loss_curve = Vec::with_capacity(config.opt.iters);
    let mut metric_curve = Vec::new();
    let mut flat_grad = vec![0.0; coords.len()];

    for iteration in 0..config.opt.iters {
        let nn = BiAssignment::compute(&pred, gt, Default::default())?;
        let value = config.loss.evaluate_with(&pred, gt, &nn, true)?;
        let grad = value.grad.expect("gradient requested");
        if !value.total.is_finite() || grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::DivergedLoss { iteration });
        }
        loss_curve.push(value.total);
        if iteration % config.metric_every == 0 {
            metric_curve.push(MetricSample {
                iteration,
                report: quality_from_assignment(&pred, gt, &nn, config.tau_eval)?,
            });
        }
        for (dst, g) in flat_grad.chunks_exact_mut(3).zip(&grad) {
            dst.copy_from_slice(g);
        }
        state.step(&mut coords, &flat_grad);
        pred = rebuild(&coords, init, iteration)?;
    }

    let nn = BiAssignment::compute(&pred, gt, Default::default())?;
    metric_curve.push(MetricSample {
        iteration: config.opt.iters,
        report: quality_from_assignment(&pred, gt, &nn, config.tau_eval)?,
    });

    Ok(FitResult {
        final_pred: pred,
        loss_curve,
        metric_curve,
        config: *config,
    })
}

fn rebuild(coords: &[f64], template: &PointCloud, iteration: usize) -> Result<PointCloud> {
    let points: Vec<Point3> = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut cloud = PointCloud::new(points).map_err(|_| Error::DivergedLoss { iteration })?;
    cloud.set_label(template.label().map(str::to_owned));
    Ok(cloud)
}
