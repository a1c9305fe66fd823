use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use hospred_core::explain::{plot_data, summarize_shap, summary_tsv, top_k_overlap, ShapMatrix, ShapSummary};
use hospred_core::features::Scenario;
use hospred_core::models::{aggregate_over_seeds, metrics_table, EvalReport, Metric, ModelKind};

use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::manifest::{hash_file, ManifestEntry};

/// Per-cell evaluation and attribution results gathered from the work dir.
#[derive(Debug, Default)]
pub struct Results {
    pub evals: Vec<EvalReport>,
    pub shap: Vec<(ModelKind, Scenario, u64, ShapMatrix)>,
    /// Manifest keys the results were read from.
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub scenario: Scenario,
    pub a: ModelKind,
    pub b: ModelKind,
    pub k: usize,
    pub count: usize,
    pub fraction: f64,
}

/// Seed-averaged evaluation per (model, scenario).
pub fn aggregated(results: &Results) -> CliResult<Vec<EvalReport>> {
    let mut cells: BTreeMap<(ModelKind, Scenario), Vec<EvalReport>> = BTreeMap::new();
    for e in &results.evals {
        cells.entry((e.model, e.scenario)).or_default().push(e.clone());
    }
    Ok(cells.values().map(|v| aggregate_over_seeds(v)).collect::<hospred_core::Result<_>>()?)
}

/// |SHAP| summaries per (model, scenario), pooled over split seeds.
pub fn summaries(results: &Results) -> CliResult<BTreeMap<(ModelKind, Scenario), ShapSummary>> {
    let mut cells: BTreeMap<(ModelKind, Scenario), Vec<&ShapMatrix>> = BTreeMap::new();
    for (kind, scenario, _, m) in &results.shap {
        cells.entry((*kind, *scenario)).or_default().push(m);
    }
    cells
        .into_iter()
        .map(|(key, ms)| Ok((key, summarize_shap(&ms)?)))
        .collect()
}

/// Top-k overlap of every model pair within each scenario.
pub fn overlaps(summaries: &BTreeMap<(ModelKind, Scenario), ShapSummary>, k: usize) -> CliResult<Vec<OverlapRow>> {
    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        let models: Vec<ModelKind> = ModelKind::ALL.into_iter().filter(|m| summaries.contains_key(&(*m, scenario))).collect();
        for (i, &a) in models.iter().enumerate() {
            for &b in &models[i + 1..] {
                let (count, fraction) = top_k_overlap(&summaries[&(a, scenario)], &summaries[&(b, scenario)], k)?;
                rows.push(OverlapRow { scenario, a, b, k, count, fraction });
            }
        }
    }
    Ok(rows)
}

fn metric_cells(m: Metric) -> String {
    format!("{:.4}\t{:.4}", m.mean, m.std)
}

/// Renders every report file as `(file name, contents)`.
pub fn render(results: &Results, cfg: &PipelineConfig, sources: &[&ManifestEntry], stats_tsv: &Path) -> CliResult<Vec<(String, String)>> {
    let mut files = Vec::new();
    let evals = aggregated(results)?;
    files.push(("metrics.tsv".to_string(), metrics_table(&evals)));

    let mut detail = String::from(
        "model\tscenario\tn_seeds\tP(H0)\tsd\tR(H0)\tsd\tF1(H0)\tsd\tP(H1)\tsd\tR(H1)\tsd\tF1(H1)\tsd\n",
    );
    for e in &evals {
        let _ = writeln!(
            detail,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.model,
            e.scenario,
            e.n_seeds,
            metric_cells(e.h0.precision),
            metric_cells(e.h0.recall),
            metric_cells(e.h0.f1),
            metric_cells(e.h1.precision),
            metric_cells(e.h1.recall),
            metric_cells(e.h1.f1)
        );
    }
    files.push(("metrics_detail.tsv".to_string(), detail));

    let sums = summaries(results)?;
    let k = cfg.explain.top_k;
    for ((kind, scenario), s) in &sums {
        files.push((format!("shap_{kind}_{scenario}.tsv"), summary_tsv(s)));
        let ms: Vec<&ShapMatrix> = results
            .shap
            .iter()
            .filter(|(m, sc, _, _)| m == kind && sc == scenario)
            .map(|(_, _, _, m)| m)
            .collect();
        files.push((format!("plot_{kind}_{scenario}.tsv"), plot_data(&ms, s, k)));
    }

    let mut overlap = String::from("scenario\tmodel_a\tmodel_b\tk\tshared\tfraction\n");
    for r in overlaps(&sums, k)? {
        let _ = writeln!(overlap, "{}\t{}\t{}\t{}\t{}\t{:.3}", r.scenario, r.a, r.b, r.k, r.count, r.fraction);
    }
    files.push(("overlap.tsv".to_string(), overlap));

    let mut eff = String::from("model\tscenario\tmethod\tsplit_seed\trows\tmax_abs_residual\n");
    for (kind, scenario, seed, m) in &results.shap {
        let worst = m.efficiency_residuals().iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let _ = writeln!(eff, "{kind}\t{scenario}\t{}\t{seed}\t{}\t{worst:e}", m.method, m.values.nrows());
    }
    files.push(("efficiency.tsv".to_string(), eff));

    let mut src = String::from("stage\tconfig_hash\toutput_hash\n");
    for e in sources {
        let _ = writeln!(src, "{}\t{}\t{}", e.stage, e.config_hash, e.output_hash);
    }
    let name = stats_tsv.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    let _ = writeln!(src, "# cohort statistics: {name} sha256 {}", hash_file(stats_tsv)?);
    files.push(("sources.tsv".to_string(), src));
    files.sort();
    Ok(files)
}
