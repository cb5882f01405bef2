use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::Value;

use qal_core::fit::{
    fit_points, generate_shape, run_ablation, run_staged_ablation, AblationStage, ExperimentConfig, FitConfig,
    OptConfig, Optimizer, ShapeKind, ShapeSpec, INIT_SEED_SALT, LAMBDA_GRID,
};
use qal_core::io::{canonical_json, to_canonical_value, CsvTable};
use qal_core::losses::{emd, EmdMode, LossKind, LossValue, QalParams};
use qal_core::metrics::{aggregate_reports, quality_from_assignment, AggregateReport, QualityReport, Tau};
use qal_core::{read_cloud, write_cloud, BiAssignment, CloudFileFormat, Error, PointCloud};

use crate::{EvalArgs, ExperimentArgs, FitArgs, GenArgs, LossArgs, OutputArgs, QalArgs, SweepArgs};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Sizes the global worker pool from `PCQAL_THREADS` (unset or 0 = one per core).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("PCQAL_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("PCQAL_THREADS must be a non-negative integer, got '{v}'")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

fn emit(output: &OutputArgs, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_text(value: &impl serde::Serialize) -> Result<String> {
    Ok(canonical_json(&to_canonical_value(value)?))
}

/// JSON object of `value` with a top-level `seed` key added.
fn seeded(value: &impl serde::Serialize, seed: u64) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    v.as_object_mut()
        .expect("reports serialize as objects")
        .insert("seed".into(), seed.into());
    Ok(v)
}

fn load(path: &Path, format: Option<CloudFileFormat>) -> Result<PointCloud> {
    read_cloud(path, format).with_context(|| format!("reading {}", path.display()))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if args.pairs.is_some() {
        return eval_batch(args);
    }
    let pred = load(args.pred.as_deref().expect("clap requires pred"), args.format)?;
    let gt = load(args.gt.as_deref().expect("clap requires gt"), args.format)?;
    let nn = BiAssignment::compute(&pred, &gt, Default::default())?;
    let reports = args
        .tau
        .iter()
        .map(|t| quality_from_assignment(&pred, &gt, &nn, t.resolve(&gt)?))
        .collect::<qal_core::Result<Vec<QualityReport>>>()?;
    let text = match (args.output.csv, reports.as_slice()) {
        (true, _) => reports.to_csv(),
        (false, [single]) => json_text(single)?,
        (false, many) => json_text(&many)?,
    };
    emit(&args.output, &text)
}

struct ManifestEntry {
    pred: PathBuf,
    gt: PathBuf,
    label: Option<String>,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) || fields[..2].iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                location: format!("line {}", i + 1),
                message: "expected pred_path<TAB>gt_path<TAB>label".into(),
            }
            .into());
        }
        entries.push(ManifestEntry {
            pred: base.join(fields[0].trim()),
            gt: base.join(fields[1].trim()),
            label: fields.get(2).map(|l| l.trim().to_owned()).filter(|l| !l.is_empty()),
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "end of file".into(),
            message: "manifest lists no pairs".into(),
        }
        .into());
    }
    Ok(entries)
}

fn eval_batch(args: EvalArgs) -> Result<()> {
    let manifest = args.pairs.as_deref().expect("checked by caller");
    if args.tau.iter().any(|t| matches!(t, Tau::Auto)) {
        return Err(usage(
            "--tau auto is not available with --pairs; give explicit thresholds",
        ));
    }
    let taus: Vec<f64> = args
        .tau
        .iter()
        .map(|t| if let Tau::Fixed(v) = t { *v } else { unreachable!() })
        .collect();
    let entries = read_manifest(manifest)?;
    let per_pair: Vec<Vec<QualityReport>> = entries
        .par_iter()
        .map(|e| {
            let pred = load(&e.pred, args.format)?;
            let mut gt = load(&e.gt, args.format)?;
            if e.label.is_some() {
                gt.set_label(e.label.clone());
            }
            let nn = BiAssignment::compute(&pred, &gt, Default::default())?;
            taus.iter()
                .map(|&tau| Ok(quality_from_assignment(&pred, &gt, &nn, tau)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let aggregates: Vec<AggregateReport> = taus
        .iter()
        .enumerate()
        .map(|(k, &tau)| aggregate_reports(tau, per_pair.iter().map(|r| r[k].clone()).collect()))
        .collect();

    let text = if args.output.csv {
        let mut out = aggregates[0].to_csv();
        for a in &aggregates[1..] {
            out.extend(a.to_csv().split_inclusive('\n').skip(1));
        }
        out
    } else {
        let values = aggregates
            .iter()
            .map(|a| seeded(a, args.output.seed))
            .collect::<Result<Vec<_>>>()?;
        match values.as_slice() {
            [single] => json_text(single)?,
            many => json_text(&many)?,
        }
    };
    emit(&args.output, &text)
}

fn qal_params(a: &QalArgs) -> Result<QalParams> {
    let mut p = QalParams::new(a.eps, a.omega, a.lambda_attr)?;
    p.symmetric_attraction = a.symmetric_attraction;
    Ok(p)
}

fn differentiable_loss(name: &str, qal: &QalArgs) -> Result<LossKind> {
    match name {
        "qal" => Ok(LossKind::Qal(qal_params(qal)?)),
        "cd-l1" => Ok(LossKind::ChamferL1),
        "cd-l2" => Ok(LossKind::ChamferL2),
        other => Err(usage(format!("unknown loss '{other}' (expected qal, cd-l1 or cd-l2)"))),
    }
}

pub fn loss(args: LossArgs) -> Result<()> {
    let pred = load(&args.pred, args.format)?;
    let gt = load(&args.gt, args.format)?;
    let (lv, params) = if args.loss == "emd" {
        if args.grad {
            return Err(usage("--grad is not available for emd"));
        }
        let mode = match args.emd_mode.as_str() {
            "exact" => EmdMode::Exact,
            "entropic" => EmdMode::entropic_default(),
            other => {
                return Err(usage(format!(
                    "unknown emd mode '{other}' (expected exact or entropic)"
                )))
            }
        };
        let total = emd(&pred, &gt, mode)?;
        let lv = LossValue {
            total,
            cov_term: total,
            attr_term: 0.0,
            grad: None,
        };
        (lv, None)
    } else {
        let kind = differentiable_loss(&args.loss, &args.qal)?;
        let params = match kind {
            LossKind::Qal(p) => Some(p),
            _ => None,
        };
        (kind.evaluate(&pred, &gt, args.grad)?, params)
    };
    if !lv.total.is_finite() {
        return Err(Error::DivergedLoss { iteration: 0 }.into());
    }
    if args.output.csv {
        return emit(&args.output, &lv.to_csv());
    }
    let mut value = seeded(&lv, args.output.seed)?;
    value["loss"] = args.loss.clone().into();
    if let Some(p) = params {
        value["params"] = serde_json::to_value(p)?;
    }
    if args.loss == "emd" {
        value["emd_mode"] = args.emd_mode.clone().into();
    }
    emit(&args.output, &json_text(&value)?)
}

fn parse_with<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T> {
    s.parse().map_err(usage)
}

fn experiment(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let optimizer: Optimizer = parse_with(&a.optimizer)?;
    Ok(ExperimentConfig {
        gt: ShapeSpec::new(parse_with::<ShapeKind>(&a.shape)?, a.n_gt, 0),
        init: ShapeSpec::new(parse_with::<ShapeKind>(&a.init_shape)?, a.n_init, 0),
        opt: OptConfig {
            optimizer,
            step: a.step,
            iters: a.iters,
        },
        tau_eval: a.tau,
        metric_every: a.metric_every,
    })
}

pub fn fit(args: FitArgs) -> Result<()> {
    let exp = experiment(&args.experiment)?;
    let seed = args.output.seed;
    let gt = match &args.gt {
        Some(path) => load(path, None)?,
        None => generate_shape(&ShapeSpec { seed, ..exp.gt })?.cloud,
    };
    let init = match &args.init {
        Some(path) => load(path, None)?,
        None => {
            generate_shape(&ShapeSpec {
                seed: seed ^ INIT_SEED_SALT,
                ..exp.init
            })?
            .cloud
        }
    };
    let config = FitConfig {
        loss: differentiable_loss(&args.loss, &args.qal)?,
        opt: exp.opt,
        tau_eval: exp.tau_eval,
        metric_every: exp.metric_every,
        seed,
    };
    let result = fit_points(&init, &gt, &config)?;
    if let Some(path) = &args.curve_csv {
        fs::write(path, result.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.final_cloud {
        write_cloud(&result.final_pred, path, None).with_context(|| format!("writing {}", path.display()))?;
    }
    let text = if args.output.csv {
        result.to_csv()
    } else {
        json_text(&seeded(&result, seed)?)?
    };
    emit(&args.output, &text)
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let exp = experiment(&args.experiment)?;
    let seed = args.output.seed;
    let seeds: Vec<u64> = (0..args.seeds).map(|k| seed.wrapping_add(k)).collect();
    let text = if args.stage == "all" {
        if args.eps_values.is_empty() || args.omega_values.is_empty() {
            return Err(usage("--stage all needs --eps-values and --omega-values"));
        }
        let lambdas = if args.lambda_values.is_empty() {
            LAMBDA_GRID.to_vec()
        } else {
            args.lambda_values.clone()
        };
        let report = run_staged_ablation(&exp, &seeds, &args.eps_values, &args.omega_values, &lambdas)?;
        if args.output.csv {
            report.to_csv()
        } else {
            json_text(&seeded(&report, seed)?)?
        }
    } else {
        let stage: AblationStage = parse_with(&args.stage)?;
        let values = match (stage, args.values.is_empty()) {
            (_, false) => args.values.clone(),
            (AblationStage::LambdaSweep, true) => LAMBDA_GRID.to_vec(),
            _ => return Err(usage(format!("--values is required for the {} stage", stage.name()))),
        };
        let report = run_ablation(stage, &qal_params(&args.base)?, &values, &exp, &seeds)?;
        if args.output.csv {
            report.to_csv()
        } else {
            json_text(&seeded(&report, seed)?)?
        }
    };
    emit(&args.output, &text)
}

pub fn gen(args: GenArgs) -> Result<()> {
    let spec = ShapeSpec {
        kind: parse_with(&args.shape)?,
        scale: args.scale,
        n_points: args.n_points,
        seed: args.seed,
    };
    let shape = generate_shape(&spec)?;
    write_cloud(&shape.cloud, &args.out, args.format).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
