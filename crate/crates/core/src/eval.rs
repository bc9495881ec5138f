//! Prediction error metrics and the train/test protocol.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::series::Timestamp;
use crate::tree::{fit_tree, DecisionTree, TrainConfig};

/// `100 * (1 - rms)`.
pub fn accuracy_from_rms(rms: f64) -> f64 {
    100.0 * (1.0 - rms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub rms_error: f64,
    pub accuracy_pct: f64,
    pub n_rows: usize,
}

impl ErrorMetrics {
    pub fn from_rms(rms_error: f64, n_rows: usize) -> Self {
        ErrorMetrics {
            rms_error,
            accuracy_pct: accuracy_from_rms(rms_error),
            n_rows,
        }
    }
}

/// RMS of `y_hat - y` and the derived accuracy.
pub fn evaluate(y_hat: &[f64], y: &[f64]) -> Result<ErrorMetrics> {
    if y_hat.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    let mse = y_hat.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(ErrorMetrics::from_rms(mse.sqrt(), y.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub segment: String,
    pub from: Timestamp,
    pub to: Timestamp,
    pub metrics: ErrorMetrics,
}

impl EvalReport {
    pub fn rms_error(&self) -> f64 {
        self.metrics.rms_error
    }

    pub fn accuracy_pct(&self) -> f64 {
        self.metrics.accuracy_pct
    }
}

pub const EVAL_CSV_HEADER: &str = "segment,from,to,n_rows,rms_error,accuracy_pct";

pub fn write_reports_csv<W: std::io::Write>(reports: &[EvalReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.4}",
            r.segment,
            r.from,
            r.to,
            r.metrics.n_rows,
            r.metrics.rms_error,
            r.metrics.accuracy_pct
        )?;
    }
    Ok(())
}

/// Train on one segment's early span, test on its later span and on the
/// other segments' full spans.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub train_segment: String,
    pub train_from: Timestamp,
    pub train_to: Timestamp,
    pub test_from: Timestamp,
    pub test_to: Timestamp,
    pub other_segments: Vec<String>,
    pub tree: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let t = |s: &str| Timestamp::parse_iso8601(s).expect("valid literal");
        ProtocolConfig {
            train_segment: "A-C".into(),
            train_from: t("2013-06-01T00:00:00Z"),
            train_to: t("2014-06-01T00:00:00Z"),
            test_from: t("2014-06-01T00:00:00Z"),
            test_to: t("2014-12-01T00:00:00Z"),
            other_segments: vec!["A-B".into(), "B-C".into()],
            tree: TrainConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_from >= self.train_to || self.test_from >= self.test_to {
            return Err(Error::invalid("train and test ranges must be non-empty and ordered"));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub model: DecisionTree,
    pub reports: Vec<EvalReport>,
}

fn evaluate_on(model: &DecisionTree, d: &Dataset, segment: &str) -> Result<EvalReport> {
    if d.is_empty() {
        return Err(Error::Segment {
            segment: segment.into(),
            message: "no test rows in the requested span".into(),
        });
    }
    let y_hat = model.predict_dataset(d)?;
    let metrics = evaluate(&y_hat, &d.targets())?;
    Ok(EvalReport {
        segment: segment.into(),
        from: d.rows[0].t,
        to: d.rows[d.len() - 1].t,
        metrics,
    })
}

/// Runs the protocol over datasets keyed by segment name.
pub fn run_protocol(datasets: &BTreeMap<String, Dataset>, cfg: &ProtocolConfig) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let get = |name: &String| {
        datasets.get(name).ok_or_else(|| Error::Segment {
            segment: name.clone(),
            message: "no dataset for segment".into(),
        })
    };
    let main = get(&cfg.train_segment)?;
    for other in &cfg.other_segments {
        get(other)?;
    }
    let train = main.slice(cfg.train_from, cfg.train_to);
    if train.is_empty() {
        return Err(Error::Segment {
            segment: cfg.train_segment.clone(),
            message: "no training rows in the requested span".into(),
        });
    }
    let model = fit_tree(&train, &cfg.tree)?;
    let mut reports = vec![evaluate_on(&model, &main.slice(cfg.test_from, cfg.test_to), &cfg.train_segment)?];
    for other in &cfg.other_segments {
        reports.push(evaluate_on(&model, get(other)?, other)?);
    }
    Ok(ProtocolOutcome { model, reports })
}
