//! Pipeline configuration: one TOML file with a section per stage, overridable
//! with dotted `key=value` assignments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hospred_core::cohort::CohortRules;
use hospred_core::explain::{ExplainConfig, ShapMethod};
use hospred_core::features::{IntervalScheme, Scenario, SplitConfig};
use hospred_core::models::{ModelKind, NetConfig, SearchSpace};
use hospred_core::synth::GeneratorConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Record file; defaults to `records.jsonl` inside the work dir.
    pub records: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { records: None, work_dir: PathBuf::from("work") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub include_patterns: Option<PathBuf>,
    pub exclude_patterns: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub rules: CohortRules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub scheme: IntervalScheme,
    /// JSON feature specification; the built-in catalog when absent.
    pub spec: Option<PathBuf>,
    pub split_seeds: Vec<u64>,
    pub test_fraction: f64,
    pub stratified: bool,
    pub scenarios: Vec<Scenario>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            scheme: IntervalScheme::default(),
            spec: None,
            split_seeds: (0..5).collect(),
            test_fraction: 0.3,
            stratified: false,
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

impl FeatureSection {
    pub fn split(&self, seed: u64) -> SplitConfig {
        SplitConfig { test_fraction: self.test_fraction, seed, stratified: self.stratified }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub families: Vec<ModelKind>,
    /// Sampled configurations per cross-validated search.
    pub budget: usize,
    /// Number of split seeds (from the start of `features.split_seeds`) to train on.
    pub n_seeds: Option<usize>,
    pub seed: u64,
    pub space: SearchSpace,
    pub network: NetConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            families: ModelKind::ALL.to_vec(),
            budget: 20,
            n_seeds: None,
            seed: 0,
            space: SearchSpace::default(),
            network: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Forces one method; otherwise tree SHAP for forests and expected
    /// gradients for networks.
    pub method: Option<ShapMethod>,
    pub top_k: usize,
    pub background_size: usize,
    pub n_permutations: usize,
    pub n_samples: usize,
    pub max_rows: usize,
    pub seed: u64,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let d = ExplainConfig::default();
        ExplainSection {
            method: None,
            top_k: d.top_k,
            background_size: d.background_size,
            n_permutations: d.n_permutations,
            n_samples: d.n_samples,
            max_rows: d.max_rows,
            seed: d.seed,
        }
    }
}

impl ExplainSection {
    pub fn to_config(&self) -> ExplainConfig {
        ExplainConfig {
            background_size: self.background_size,
            n_permutations: self.n_permutations,
            n_samples: self.n_samples,
            max_rows: self.max_rows,
            top_k: self.top_k,
            seed: self.seed,
        }
    }

    /// The method used for `kind`, or `None` if the forced method cannot explain it.
    pub fn method_for(&self, kind: ModelKind) -> Option<ShapMethod> {
        match self.method {
            None => Some(ShapMethod::default_for(kind)),
            Some(ShapMethod::Tree) if !kind.is_forest() => None,
            Some(ShapMethod::Gradient) if kind.is_forest() => None,
            Some(m) => Some(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub alpha: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection { alpha: 0.001 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub generator: GeneratorConfig,
    pub cohort: CohortSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub explain: ExplainSection,
    pub stats: StatsSection,
}

/// Sets `value` at a dotted path, creating intermediate tables. The value is
/// read as a TOML literal and falls back to a plain string.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: &str) -> CliResult<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_dotted(&mut table, k, v)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.generator.validate()?;
        if self.features.split_seeds.is_empty() {
            return Err(CliError::Config("features.split_seeds must not be empty".into()));
        }
        if self.features.scenarios.is_empty() {
            return Err(CliError::Config("features.scenarios must not be empty".into()));
        }
        if !(self.features.test_fraction > 0.0 && self.features.test_fraction < 1.0) {
            return Err(CliError::Config("features.test_fraction must lie in (0, 1)".into()));
        }
        if self.model.families.is_empty() {
            return Err(CliError::Config("model.families must not be empty".into()));
        }
        if self.model.budget == 0 {
            return Err(CliError::Config("model.budget must be at least 1".into()));
        }
        if self.model.n_seeds == Some(0) {
            return Err(CliError::Config("model.n_seeds must be at least 1".into()));
        }
        self.model.network.validate()?;
        if self.explain.top_k == 0 || self.explain.max_rows == 0 {
            return Err(CliError::Config("explain.top_k and explain.max_rows must be positive".into()));
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(CliError::Config("stats.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn records_path(&self) -> PathBuf {
        self.paths.records.clone().unwrap_or_else(|| self.paths.work_dir.join("records.jsonl"))
    }

    /// Split seeds that models are trained and explained on.
    pub fn model_seeds(&self) -> &[u64] {
        let n = self.model.n_seeds.unwrap_or(usize::MAX).min(self.features.split_seeds.len());
        &self.features.split_seeds[..n]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_win_and_parse_literals() {
        let sets = vec![
            ("generator.n_patients".to_string(), "300".to_string()),
            ("model.families".to_string(), "[\"rf\", \"mlp\"]".to_string()),
            ("paths.work_dir".to_string(), "/tmp/x".to_string()),
            ("model.space.forest.n_trees".to_string(), "[7]".to_string()),
            ("model.space.forest.max_depth".to_string(), "[4, \"none\"]".to_string()),
        ];
        let cfg = PipelineConfig::load(None, &sets).unwrap();
        assert_eq!(cfg.generator.n_patients, 300);
        assert_eq!(cfg.model.families, vec![ModelKind::Rf, ModelKind::Mlp]);
        assert_eq!(cfg.paths.work_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.model.space.forest.n_trees, vec![7]);
        assert_eq!(cfg.model.space.forest.max_depth, vec![Some(4), None]);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [("generator.n_patients", "0"), ("stats.alpha", "2.0"), ("model.nonsense", "1"), ("features.scheme", "[1, 2]"), ("model.space.forest.max_depth", "[\"deep\"]")] {
            let err = PipelineConfig::load(None, &[(k.to_string(), v.to_string())]).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{k}");
        }
    }

    #[test]
    fn forced_method_applies_where_it_can() {
        let mut e = ExplainSection::default();
        assert_eq!(e.method_for(ModelKind::Et), Some(ShapMethod::Tree));
        assert_eq!(e.method_for(ModelKind::Fusion), Some(ShapMethod::Gradient));
        e.method = Some(ShapMethod::Tree);
        assert_eq!(e.method_for(ModelKind::Mlp), None);
        e.method = Some(ShapMethod::Sampling);
        assert_eq!(e.method_for(ModelKind::Rf), Some(ShapMethod::Sampling));
    }
}
