//! Checkpointed evaluation, learning curves and run reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::error::{Error, Result};
use crate::feature_io::FeatureDataset;
use crate::learner::Classifier;
use crate::offline_linear::evaluate_topks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Stream examples consumed before this evaluation.
    pub position: usize,
    pub classes_seen: usize,
    /// Eval examples that passed the seen-class filter.
    pub evaluated: usize,
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub feature_source: String,
    pub pretrain_size: usize,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(Error::invalid("curve positions must be strictly increasing"));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.points.iter().any(|p| !in_unit(p.top1) || !in_unit(p.top5)) {
            return Err(Error::invalid("accuracies must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,top1,top5\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.position, p.top1, p.top5).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Every resolved config key, including derived seeds.
    pub config: BTreeMap<String, String>,
    pub curve: LearningCurve,
    pub final_top1: f64,
    pub final_top5: f64,
    pub average_top5: f64,
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    pub fn new(
        config: BTreeMap<String, String>,
        curve: LearningCurve,
        wall_clock_seconds: Option<f64>,
    ) -> Result<Self> {
        curve.validate()?;
        let last = curve
            .points
            .last()
            .ok_or_else(|| Error::invalid("empty learning curve"))?;
        Ok(Self {
            final_top1: last.top1,
            final_top5: last.top5,
            average_top5: average_accuracy(&curve, 5)?,
            config,
            curve,
            wall_clock_seconds,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("report json: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEval {
    pub evaluated: usize,
    pub accuracies: Vec<f64>,
}

/// Top-k accuracies over eval examples whose label is in `seen`.
pub fn checkpoint_evaluate(
    learner: &(impl Classifier + ?Sized),
    eval: &FeatureDataset,
    seen: &BTreeSet<u32>,
    ks: &[usize],
) -> Result<CheckpointEval> {
    let evaluated = eval.labels().iter().filter(|l| seen.contains(l)).count();
    if evaluated == 0 {
        return Err(Error::invalid("no eval examples from seen classes"));
    }
    let accuracies = evaluate_topks(learner, eval, ks, Some(seen))?;
    Ok(CheckpointEval { evaluated, accuracies })
}

/// Unweighted mean of the top-`k` accuracy over every curve point.
pub fn average_accuracy(curve: &LearningCurve, k: usize) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::invalid("empty learning curve"));
    }
    let pick: fn(&CurvePoint) -> f64 = match k {
        1 => |p| p.top1,
        5 => |p| p.top5,
        _ => return Err(Error::invalid(format!("top-{k} not recorded"))),
    };
    Ok(curve.points.iter().map(pick).sum::<f64>() / curve.points.len() as f64)
}

/// Percentage change of `candidate` over `baseline`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid("baseline must be positive"));
    }
    Ok((candidate - baseline) / baseline * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.curve.to_csv(),
    };
    write_file(path, body.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(top5: &[f64]) -> LearningCurve {
        LearningCurve {
            method: "slda".into(),
            feature_source: "synthetic".into(),
            pretrain_size: 2,
            points: top5
                .iter()
                .enumerate()
                .map(|(i, &v)| CurvePoint {
                    position: i * 10,
                    classes_seen: i + 2,
                    evaluated: 5,
                    top1: v / 2.0,
                    top5: v,
                })
                .collect(),
        }
    }

    #[test]
    fn averages() {
        assert_eq!(average_accuracy(&curve(&[0.8]), 5).unwrap(), 0.8);
        assert!((average_accuracy(&curve(&[0.5, 0.7]), 5).unwrap() - 0.6).abs() < 1e-15);
        assert!(average_accuracy(&curve(&[0.5]), 3).is_err());
        assert!(average_accuracy(&curve(&[]), 1).is_err());
    }

    #[test]
    fn relative_improvement_cases() {
        assert_eq!(relative_improvement(0.4, 0.4).unwrap(), 0.0);
        assert!(relative_improvement(1.0, 0.0).is_err());
        assert!(relative_improvement(1.0, -2.0).is_err());
    }

    #[test]
    fn report_final_values_match_last_point() {
        let r = RunReport::new(BTreeMap::new(), curve(&[0.2, 0.9, 0.4]), None).unwrap();
        assert_eq!(r.final_top5, 0.4);
        assert_eq!(r.final_top1, 0.2);
        let back = RunReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn invalid_curves_rejected() {
        let mut c = curve(&[0.2, 0.3]);
        c.points[1].position = 0;
        assert!(RunReport::new(BTreeMap::new(), c, None).is_err());
        let mut c = curve(&[0.2]);
        c.points[0].top1 = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_has_header_plus_points() {
        let c = curve(&[0.1, 0.2, 0.3]);
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next(), Some("position,top1,top5"));
    }
}
