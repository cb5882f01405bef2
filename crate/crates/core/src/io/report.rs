use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::fit::{FitResult, StagedReport, SweepReport};
use crate::losses::LossValue;
use crate::metrics::{AggregateReport, MeanMetrics, QualityReport};
use crate::Result;

/// Significant digits kept for every float in reports and text clouds.
pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits. Zero and non-finite
/// values are returned unchanged.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

/// Serializes `value` to a JSON tree with sorted object keys and every float
/// rounded by [`round_sig`].
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value> {
    let raw = serde_json::to_value(value).map_err(std::io::Error::from)?;
    Ok(canonicalize(raw))
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::new();
            for (k, v) in entries {
                sorted.insert(k, canonicalize(v));
            }
            Value::Object(sorted)
        }
        other => other,
    }
}

/// Pretty-printed JSON of an already canonical tree, newline terminated.
pub fn canonical_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Tabular view of a report.
pub trait CsvTable {
    fn csv_header(&self) -> Vec<&'static str>;
    fn csv_rows(&self) -> Vec<Vec<String>>;

    fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        for row in self.csv_rows() {
            let cells: Vec<String> = row.iter().map(|c| csv_escape(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Anything that can be written by [`write_report`].
pub trait Report: Serialize + CsvTable {
    fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => Ok(canonical_json(&to_canonical_value(self)?)),
            ReportFormat::Csv => Ok(self.to_csv()),
        }
    }
}

impl<T: Serialize + CsvTable + ?Sized> Report for T {}

pub fn write_report(report: &(impl Report + ?Sized), path: &Path, format: ReportFormat) -> Result<()> {
    fs::write(path, report.render(format)?)?;
    Ok(())
}

fn csv_escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_owned()
    }
}

fn num(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{}", round_sig(x)).expect("writing to a String");
    s
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

const QUALITY_HEADER: [&str; 9] = [
    "tau", "coverage", "spurious", "sp_bar", "quality", "f1", "n_pred", "n_gt", "label",
];

fn quality_row(r: &QualityReport) -> Vec<String> {
    vec![
        num(r.tau),
        num(r.coverage),
        num(r.spurious),
        num(r.sp_bar),
        num(r.quality),
        num(r.f1),
        r.n_pred.to_string(),
        r.n_gt.to_string(),
        r.label.clone().unwrap_or_default(),
    ]
}

impl CsvTable for QualityReport {
    fn csv_header(&self) -> Vec<&'static str> {
        QUALITY_HEADER.to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        vec![quality_row(self)]
    }
}

impl CsvTable for [QualityReport] {
    fn csv_header(&self) -> Vec<&'static str> {
        QUALITY_HEADER.to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.iter().map(quality_row).collect()
    }
}

impl CsvTable for Vec<QualityReport> {
    fn csv_header(&self) -> Vec<&'static str> {
        self.as_slice().csv_header()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.as_slice().csv_rows()
    }
}

impl CsvTable for AggregateReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "scope", "label", "tau", "count", "coverage", "spurious", "sp_bar", "quality", "f1",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let mean_row = |scope: &str, label: &str, m: &MeanMetrics| {
            vec![
                scope.to_owned(),
                label.to_owned(),
                num(self.tau),
                m.count.to_string(),
                num(m.coverage),
                num(m.spurious),
                num(m.sp_bar),
                num(m.quality),
                num(m.f1),
            ]
        };
        let mut rows: Vec<Vec<String>> = self
            .per_pair
            .iter()
            .map(|r| {
                vec![
                    "pair".to_owned(),
                    r.label.clone().unwrap_or_default(),
                    num(r.tau),
                    "1".to_owned(),
                    num(r.coverage),
                    num(r.spurious),
                    num(r.sp_bar),
                    num(r.quality),
                    num(r.f1),
                ]
            })
            .collect();
        rows.extend(self.per_category.iter().map(|(k, m)| mean_row("category", k, m)));
        rows.push(mean_row("overall", "", &self.overall));
        rows
    }
}

impl CsvTable for LossValue {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["total", "cov_term", "attr_term"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        vec![vec![num(self.total), num(self.cov_term), num(self.attr_term)]]
    }
}

/// The metric curve, one row per recorded iteration.
impl CsvTable for FitResult {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "iteration",
            "loss",
            "tau",
            "coverage",
            "spurious",
            "sp_bar",
            "quality",
            "f1",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.metric_curve
            .iter()
            .map(|s| {
                let r = &s.report;
                vec![
                    s.iteration.to_string(),
                    opt_num(self.loss_curve.get(s.iteration).copied()),
                    num(r.tau),
                    num(r.coverage),
                    num(r.spurious),
                    num(r.sp_bar),
                    num(r.quality),
                    num(r.f1),
                ]
            })
            .collect()
    }
}

const SWEEP_HEADER: [&str; 13] = [
    "stage",
    "value",
    "eps",
    "omega",
    "lambda",
    "runs",
    "failures",
    "coverage",
    "spurious",
    "sp_bar",
    "chamfer",
    "spur_coverage",
    "selected",
];

fn sweep_rows(report: &SweepReport) -> Vec<Vec<String>> {
    report
        .grid
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let m = cell.mean.as_ref();
            vec![
                report.stage.name().to_owned(),
                num(cell.value),
                num(cell.params.eps),
                num(cell.params.omega),
                num(cell.params.lambda_attr),
                cell.runs.len().to_string(),
                cell.failures.len().to_string(),
                opt_num(m.map(|m| m.coverage)),
                opt_num(m.map(|m| m.spurious)),
                opt_num(m.map(|m| m.sp_bar)),
                opt_num(m.map(|m| m.chamfer)),
                opt_num(m.and_then(|m| m.spur_coverage)),
                (i == report.knee_index).to_string(),
            ]
        })
        .collect()
}

impl CsvTable for SweepReport {
    fn csv_header(&self) -> Vec<&'static str> {
        SWEEP_HEADER.to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        sweep_rows(self)
    }
}

impl CsvTable for StagedReport {
    fn csv_header(&self) -> Vec<&'static str> {
        SWEEP_HEADER.to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        [&self.eps, &self.omega, &self.lambda]
            .into_iter()
            .flat_map(sweep_rows)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::metrics::quality_report;

    #[test]
    fn rounding_keeps_nine_digits() {
        assert_eq!(round_sig(0.1234567891234), 0.123456789);
        assert_eq!(round_sig(-98765.43210987), -98765.4321);
        assert_eq!(round_sig(1.0), 1.0);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::NAN).is_nan());
    }

    #[test]
    fn identical_clouds_report_full_coverage() {
        let c = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let json = quality_report(&c, &c, 0.03)
            .unwrap()
            .render(ReportFormat::Json)
            .unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["coverage"], 1.0);
        assert_eq!(v["spurious"], 0.0);
        assert_eq!(v["label"], Value::Null);
    }

    #[test]
    fn json_keys_sorted_and_schema_exact() {
        let a = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.0, 0.4, 0.0], [5.0, 0.0, 0.0]])
            .unwrap()
            .with_label("pair");
        let report = quality_report(&a, &b, 0.5).unwrap();
        let json = report.render(ReportFormat::Json).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(
            keys,
            ["coverage", "f1", "label", "n_gt", "n_pred", "quality", "sp_bar", "spurious", "tau"]
        );
        assert_eq!(v["coverage"], 0.5);
        assert_eq!(v["label"], "pair");
        let positions: Vec<usize> = ["\"coverage\"", "\"f1\"", "\"label\"", "\"tau\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = PointCloud::new(vec![[0.1, 0.2, 0.3], [1.0 / 3.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let report = quality_report(&a, &b, 0.2).unwrap();
        for format in [ReportFormat::Json, ReportFormat::Csv] {
            let p1 = dir.path().join("r1");
            let p2 = dir.path().join("r2");
            write_report(&report, &p1, format).unwrap();
            write_report(&report, &p2, format).unwrap();
            assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn csv_escapes_labels() {
        let c = PointCloud::new(vec![[0.0; 3]]).unwrap().with_label("a,\"b\"");
        let csv = quality_report(&c, &c, 0.1).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), QUALITY_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "0.1,1,0,1,1,1,1,1,\"a,\"\"b\"\"\"");
    }

    #[test]
    fn loss_value_json_omits_missing_gradient() {
        let v = LossValue {
            total: 0.75000123456,
            cov_term: 0.5,
            attr_term: 0.25,
            grad: None,
        };
        assert_eq!(
            canonical_json(&to_canonical_value(&v).unwrap()),
            "{\n  \"attr_term\": 0.25,\n  \"cov_term\": 0.5,\n  \"total\": 0.750001235\n}\n"
        );
    }
}
