//! Class comparison statistics: chi-square on 2x2 tables, Mann-Whitney U,
//! Benjamini-Hochberg, and the per-feature cohort summary.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::cohort::Label;
use crate::error::{Error, Result};
use crate::features::{period_of_interest, RawFeatures};

/// Feature present/absent x H1/H0 counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    /// present, H1
    pub a: u64,
    /// present, H0
    pub b: u64,
    /// absent, H1
    pub c: u64,
    /// absent, H0
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn from_rows(rows: [[u64; 2]; 2]) -> Self {
        ContingencyTable2x2 {
            a: rows[0][0],
            b: rows[0][1],
            c: rows[1][0],
            d: rows[1][1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    Chi2,
    MannWhitneyU,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub degenerate: bool,
    pub significant_after_bh: bool,
}

impl TestResult {
    fn new(method: TestMethod, statistic: f64, p_value: f64) -> Self {
        TestResult {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            method,
            degenerate: false,
            significant_after_bh: false,
        }
    }

    fn degenerate(method: TestMethod) -> Self {
        TestResult {
            degenerate: true,
            ..TestResult::new(method, 0.0, 1.0)
        }
    }
}

/// Pearson chi-square without continuity correction, 1 degree of freedom.
pub fn chi2_contingency(t: &ContingencyTable2x2) -> TestResult {
    let obs = [t.a as f64, t.b as f64, t.c as f64, t.d as f64];
    let rows = [obs[0] + obs[1], obs[2] + obs[3]];
    let cols = [obs[0] + obs[2], obs[1] + obs[3]];
    let total = rows[0] + rows[1];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return TestResult::degenerate(TestMethod::Chi2);
    }
    let mut stat = 0.0;
    for (i, o) in obs.iter().enumerate() {
        let e = rows[i / 2] * cols[i % 2] / total;
        stat += (o - e) * (o - e) / e;
    }
    let sf = ChiSquared::new(1.0).expect("one degree of freedom").sf(stat);
    TestResult::new(TestMethod::Chi2, stat, sf)
}

/// Midranks (1-based) of the pooled values, and the tie-group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Largest pooled size for which the exact distribution is computed.
pub const EXACT_MAX_TOTAL: usize = 200;
/// The exact path applies when the smaller sample has at most this many values.
pub const EXACT_MAX_SMALL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

impl MannWhitney {
    pub fn to_result(self) -> TestResult {
        TestResult::new(TestMethod::MannWhitneyU, self.u, self.p_value)
    }
}

/// Two-sided exact p of the doubled rank sum `observed` of a size-`n1`
/// subset of `doubled_ranks`, by dynamic programming over subset sums.
pub fn exact_rank_sum_p(doubled_ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let max_sum: u64 = doubled_ranks.iter().sum();
    let width = max_sum as usize + 1;
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0f64; width]; n1 + 1];
    counts[0][0] = 1.0;
    for (seen, &r) in doubled_ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=n1.min(seen + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (r..width).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let dist = &counts[n1];
    let total: f64 = dist.iter().sum();
    let obs = observed as usize;
    let lower: f64 = dist[..=obs.min(width - 1)].iter().sum();
    let upper: f64 = dist[obs.min(width)..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("Mann-Whitney U needs two non-empty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("Mann-Whitney U input contains NaN".into()));
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let n = (n1 + n2) as f64;

    if n1.min(n2) <= EXACT_MAX_SMALL && n1 + n2 <= EXACT_MAX_TOTAL {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let observed: u64 = doubled[..n1].iter().sum();
        let p = exact_rank_sum_p(&doubled, n1, observed);
        return Ok(MannWhitney { u, p_value: p, exact: true });
    }

    let mean = (n1 * n2) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(MannWhitney { u, p_value: 1.0, exact: false });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u, p_value: p, exact: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhResult {
    pub reject: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Benjamini-Hochberg step-up procedure; outputs in input order.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Result<BhResult> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("p-values must lie in [0, 1]".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let cutoff = (1..=m)
        .rev()
        .find(|&rank| p_values[order[rank - 1]] <= rank as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(m as f64 * p_values[i] / rank as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(BhResult { reject, adjusted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Boolean,
    Numerical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    /// Percent present (Boolean rows).
    pub percent: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub feature: String,
    pub kind: FeatureKind,
    pub h0: ClassStats,
    pub h1: ClassStats,
    pub test: TestResult,
    pub adjusted_p: f64,
}

impl SummaryRow {
    pub fn star(&self) -> &'static str {
        if self.test.significant_after_bh {
            "**"
        } else {
            ""
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn numeric_stats(values: &mut [f64]) -> ClassStats {
    values.sort_by(f64::total_cmp);
    ClassStats {
        count: values.len(),
        percent: f64::NAN,
        median: quantile(values, 0.5),
        q1: quantile(values, 0.25),
        q3: quantile(values, 0.75),
    }
}

/// Per-feature H0/H1 comparison on pre-normalization features: every tabular
/// column gets a chi-square row, every measured quantity a Mann-Whitney row
/// over its admissible raw values. All p-values are corrected jointly.
pub fn cohort_summary(raw: &RawFeatures, alpha: f64) -> Result<Vec<SummaryRow>> {
    let matrix = raw.materialize()?;
    let names = raw.spec.tabular_names();
    let is_h1: Vec<bool> = matrix.labels.iter().map(|l| *l == Label::H1).collect();
    let n1 = is_h1.iter().filter(|&&b| b).count();
    let n0 = is_h1.len() - n1;
    let pct = |count: u64, total: usize| if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };

    let mut boolean_rows: Vec<SummaryRow> = (0..names.len())
        .into_par_iter()
        .map(|c| {
            let col = matrix.x1.column(c);
            let (mut a, mut b) = (0u64, 0u64);
            for (v, &h1) in col.iter().zip(&is_h1) {
                if *v != 0.0 {
                    if h1 {
                        a += 1;
                    } else {
                        b += 1;
                    }
                }
            }
            let table = ContingencyTable2x2 {
                a,
                b,
                c: n1 as u64 - a,
                d: n0 as u64 - b,
            };
            let stats = |count: u64, total: usize| ClassStats {
                count: count as usize,
                percent: pct(count, total),
                median: f64::NAN,
                q1: f64::NAN,
                q3: f64::NAN,
            };
            SummaryRow {
                feature: names[c].clone(),
                kind: FeatureKind::Boolean,
                h0: stats(b, n0),
                h1: stats(a, n1),
                test: chi2_contingency(&table),
                adjusted_p: 1.0,
            }
        })
        .collect();
    boolean_rows.sort_by(|x, y| {
        y.h1.percent
            .total_cmp(&x.h1.percent)
            .then(y.h0.percent.total_cmp(&x.h0.percent))
            .then_with(|| x.feature.cmp(&y.feature))
    });

    let nq = raw.spec.quantities.len();
    let mut values: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; nq];
    for p in &raw.patients {
        let poi = period_of_interest(&raw.scheme, p.label, p.admission_offset)?;
        let cls = usize::from(p.label == Label::H1);
        for &(q, o, v) in &p.observations {
            if poi.admits(&raw.scheme, o) {
                values[q][cls].push(v);
            }
        }
    }
    let mut numeric_rows: Vec<SummaryRow> = values
        .into_par_iter()
        .enumerate()
        .map(|(q, [mut v0, mut v1])| {
            let test = if v0.is_empty() || v1.is_empty() {
                TestResult::degenerate(TestMethod::MannWhitneyU)
            } else {
                mann_whitney_u(&v1, &v0).expect("non-empty samples").to_result()
            };
            SummaryRow {
                feature: raw.spec.quantities[q].name.clone(),
                kind: FeatureKind::Numerical,
                h0: numeric_stats(&mut v0),
                h1: numeric_stats(&mut v1),
                test,
                adjusted_p: 1.0,
            }
        })
        .collect();
    numeric_rows.sort_by(|x, y| (y.h0.count + y.h1.count).cmp(&(x.h0.count + x.h1.count)).then_with(|| x.feature.cmp(&y.feature)));

    let mut rows = boolean_rows;
    rows.extend(numeric_rows);
    let p: Vec<f64> = rows.iter().map(|r| r.test.p_value).collect();
    let bh = benjamini_hochberg(&p, alpha)?;
    for (i, row) in rows.iter_mut().enumerate() {
        row.adjusted_p = bh.adjusted[i];
        row.test.significant_after_bh = bh.reject[i] && !row.test.degenerate;
    }
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn class_cell(kind: FeatureKind, s: &ClassStats) -> String {
    match kind {
        FeatureKind::Boolean => format!("{:.2}", s.percent),
        FeatureKind::Numerical => format!("{} {} [{}, {}]", s.count, fmt_num(s.median), fmt_num(s.q1), fmt_num(s.q3)),
    }
}

/// Aligned plain-text table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let header = ["feature", "H0", "H1", "statistic", "p", "p_adj", ""];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.feature.clone(),
                class_cell(r.kind, &r.h0),
                class_cell(r.kind, &r.h1),
                format!("{:.3}", r.test.statistic),
                format!("{:.3e}", r.test.p_value),
                format!("{:.3e}", r.adjusted_p),
                r.star().to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |fields: Vec<&str>| {
        let parts: Vec<String> = fields.iter().zip(widths).map(|(f, w)| format!("{f:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in &cells {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

/// Tab-separated machine-readable summary.
pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "feature\tkind\th0_count\th0_percent\th0_median\th0_q1\th0_q3\th1_count\th1_percent\th1_median\th1_q1\th1_q3\tmethod\tstatistic\tp\tp_adjusted\tstar\n",
    );
    for r in rows {
        let class = |s: &ClassStats| format!("{}\t{}\t{}\t{}\t{}", s.count, s.percent, s.median, s.q1, s.q3);
        let _ = writeln!(
            out,
            "{}\t{:?}\t{}\t{}\t{:?}\t{}\t{}\t{}\t{}",
            r.feature,
            r.kind,
            class(&r.h0),
            class(&r.h1),
            r.test.method,
            r.test.statistic,
            r.test.p_value,
            r.adjusted_p,
            r.star()
        );
    }
    out
}
