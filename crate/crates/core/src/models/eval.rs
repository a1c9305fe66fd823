use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ModelKind;
use crate::error::{Error, Result};
use crate::features::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub mean: f64,
    pub std: f64,
}

impl Metric {
    fn single(v: f64) -> Self {
        Metric { mean: v, std: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub scenario: Scenario,
    pub n_seeds: usize,
    pub h0: ClassReport,
    pub h1: ClassReport,
}

fn class_metrics(tp: usize, fp: usize, fn_: usize, class: &str) -> ClassReport {
    let precision = if tp + fp == 0 {
        log::warn!("no {class} predictions; precision({class}) set to 0");
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassReport {
        precision: Metric::single(precision),
        recall: Metric::single(recall),
        f1: Metric::single(f1),
    }
}

/// Per-class precision, recall and F1 of hard predictions.
pub fn evaluate(model: ModelKind, scenario: Scenario, predicted: &[bool], truth: &[bool]) -> Result<EvalReport> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = [[0usize; 2]; 2];
    for (&p, &t) in predicted.iter().zip(truth) {
        c[usize::from(t)][usize::from(p)] += 1;
    }
    Ok(EvalReport {
        model,
        scenario,
        n_seeds: 1,
        h0: class_metrics(c[0][0], c[1][0], c[0][1], "H0"),
        h1: class_metrics(c[1][1], c[0][1], c[1][0], "H1"),
    })
}

fn aggregate(values: impl Iterator<Item = f64>) -> Metric {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Metric { mean, std }
}

/// Per-metric mean and sample standard deviation across split seeds.
pub fn aggregate_over_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::InvalidInput("no reports to aggregate".into()))?;
    if reports.iter().any(|r| r.model != first.model || r.scenario != first.scenario) {
        return Err(Error::InvalidInput("reports mix models or scenarios".into()));
    }
    let class = |pick: fn(&EvalReport) -> &ClassReport| ClassReport {
        precision: aggregate(reports.iter().map(|r| pick(r).precision.mean)),
        recall: aggregate(reports.iter().map(|r| pick(r).recall.mean)),
        f1: aggregate(reports.iter().map(|r| pick(r).f1.mean)),
    };
    Ok(EvalReport {
        model: first.model,
        scenario: first.scenario,
        n_seeds: reports.len(),
        h0: class(|r| &r.h0),
        h1: class(|r| &r.h1),
    })
}

/// Tab-separated table with one row per model; every cell lists the values
/// of the scenarios in `all/gp/one-day-before` order.
pub fn metrics_table(reports: &[EvalReport]) -> String {
    let mut by_model: BTreeMap<ModelKind, BTreeMap<usize, &EvalReport>> = BTreeMap::new();
    for r in reports {
        let pos = Scenario::ALL.iter().position(|s| *s == r.scenario).unwrap_or(0);
        by_model.entry(r.model).or_default().insert(pos, r);
    }
    let mut out = String::from("model\tP(H0)\tR(H0)\tF1(H0)\tP(H1)\tR(H1)\tF1(H1)\n");
    let _ = writeln!(out, "# cells: {}", Scenario::ALL.map(|s| s.to_string()).join("/"));
    for (model, cells) in &by_model {
        let cell = |get: fn(&EvalReport) -> Metric| {
            Scenario::ALL
                .iter()
                .enumerate()
                .map(|(i, _)| match cells.get(&i) {
                    Some(r) => format!("{:.2}", get(r).mean),
                    None => "-".into(),
                })
                .collect::<Vec<_>>()
                .join("/")
        };
        let _ = writeln!(
            out,
            "{model}\t{}\t{}\t{}\t{}\t{}\t{}",
            cell(|r| r.h0.precision),
            cell(|r| r.h0.recall),
            cell(|r| r.h0.f1),
            cell(|r| r.h1.precision),
            cell(|r| r.h1.recall),
            cell(|r| r.h1.f1),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let t = [true, false, false, true];
        let r = evaluate(ModelKind::Rf, Scenario::All, &t, &t).unwrap();
        for c in [r.h0, r.h1] {
            assert_eq!((c.precision.mean, c.recall.mean, c.f1.mean), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn all_h0_predictions() {
        let truth: Vec<bool> = (0..100).map(|i| i < 13).collect();
        let r = evaluate(ModelKind::Mlp, Scenario::Gp, &[false; 100], &truth).unwrap();
        assert_eq!(r.h0.recall.mean, 1.0);
        assert_eq!(r.h1.recall.mean, 0.0);
        assert_eq!(r.h1.precision.mean, 0.0);
        assert!((r.h0.precision.mean - 0.87).abs() < 1e-12);
    }

    #[test]
    fn aggregation_uses_sample_std() {
        let a = evaluate(ModelKind::Rf, Scenario::All, &[true, true], &[true, false]).unwrap();
        let b = evaluate(ModelKind::Rf, Scenario::All, &[true, false], &[true, false]).unwrap();
        let agg = aggregate_over_seeds(&[a, b]).unwrap();
        assert_eq!(agg.n_seeds, 2);
        assert!((agg.h1.precision.mean - 0.75).abs() < 1e-12);
        assert!((agg.h1.precision.std - (0.125f64).sqrt()).abs() < 1e-12);
        let other = evaluate(ModelKind::Et, Scenario::All, &[true], &[true]).unwrap();
        assert!(aggregate_over_seeds(&[agg, other]).is_err());
    }

    #[test]
    fn table_has_three_values_per_cell() {
        let r: Vec<EvalReport> = Scenario::ALL
            .iter()
            .map(|&s| evaluate(ModelKind::Rf, s, &[true, false], &[true, false]).unwrap())
            .collect();
        let t = metrics_table(&r);
        assert!(t.contains("rf\t1.00/1.00/1.00\t"));
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_harmonic(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let (p, t): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let r = evaluate(ModelKind::Rf, Scenario::All, &p, &t).unwrap();
            for c in [r.h0, r.h1] {
                for v in [c.precision.mean, c.recall.mean, c.f1.mean] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                let (pr, re) = (c.precision.mean, c.recall.mean);
                if pr + re > 0.0 {
                    prop_assert!((c.f1.mean - 2.0 * pr * re / (pr + re)).abs() < 1e-12);
                }
            }
        }
    }
}
