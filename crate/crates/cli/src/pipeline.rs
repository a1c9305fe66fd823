//! Stage runner. Every stage hashes its configuration together with the
//! configuration hashes of its inputs, skips itself when the manifest already
//! holds that hash with matching outputs on disk, and otherwise rebuilds and
//! records a manifest line.

use std::cell::OnceCell;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::Serialize;
use serde_json::json;

use hospred_core::cohort::{build_cohort, CodeHierarchy, Cohort, PatternSet};
use hospred_core::explain::{background_rows, explain_rows, read_shap, write_shap, ShapMethod};
use hospred_core::features::{apply_scenario, extract_features, fit_transform, read_features, write_features, FeatureSpec, FusedFeatures, RawFeatures, Scenario};
use hospred_core::models::{cross_validate, evaluate, read_model, write_model, EvalReport, Geometry, ModelKind};
use hospred_core::records::RecordStore;
use hospred_core::stats::{cohort_summary, summary_text, summary_tsv};
use hospred_core::synth::generate_cohort;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, hash_json, hash_outputs, Manifest, ManifestEntry};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Cohort,
    Featurize(Option<Scenario>),
    Train(Option<ModelKind>),
    Explain(Option<ShapMethod>),
    Stats,
    Report,
    All,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    work: PathBuf,
    force: bool,
    manifest: Manifest,
    records_hash: OnceCell<String>,
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn optional_file_hash(path: &Option<PathBuf>) -> CliResult<Option<String>> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Config(format!("referenced file {} does not exist", p.display()))),
        Some(p) => Ok(Some(hash_file(p)?)),
        None => Ok(None),
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool) -> CliResult<Self> {
        let work = cfg.paths.work_dir.clone();
        create_dir(&work)?;
        let manifest = Manifest::load(&work)?;
        Ok(Pipeline { cfg, work, force, manifest, records_hash: OnceCell::new() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn work_dir(&self) -> &Path {
        &self.work
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn run(&mut self, command: Command) -> CliResult<()> {
        match command {
            Command::Generate => self.generate(),
            Command::Cohort => self.cohort(),
            Command::Featurize(s) => self.featurize(s),
            Command::Train(m) => self.train(m),
            Command::Explain(m) => self.explain(m),
            Command::Stats => self.stats(),
            Command::Report => self.report(),
            Command::All => {
                if let Some(m) = self.cfg.explain.method {
                    log::info!("explaining with `{m}` where applicable");
                }
                self.generate()?;
                self.cohort()?;
                self.featurize(None)?;
                self.train(None)?;
                self.explain(None)?;
                self.stats()?;
                self.report()
            }
        }
    }

    // ---- paths -------------------------------------------------------------

    pub fn truth_path(&self) -> PathBuf {
        self.work.join("truth.json")
    }

    pub fn cohort_path(&self) -> PathBuf {
        self.work.join("cohort.jsonl")
    }

    pub fn feature_paths(&self, scenario: Scenario, seed: u64) -> [PathBuf; 2] {
        let dir = self.work.join("features").join(scenario.as_str()).join(format!("s{seed}"));
        [dir.join("train.feat"), dir.join("test.feat")]
    }

    pub fn model_dir(&self, kind: ModelKind, scenario: Scenario, seed: u64) -> PathBuf {
        self.work.join("models").join(kind.as_str()).join(scenario.as_str()).join(format!("s{seed}"))
    }

    pub fn shap_path(&self, kind: ModelKind, scenario: Scenario, method: ShapMethod, seed: u64) -> PathBuf {
        self.work
            .join("shap")
            .join(kind.as_str())
            .join(scenario.as_str())
            .join(method.as_str())
            .join(format!("s{seed}.shap"))
    }

    pub fn stats_dir(&self) -> PathBuf {
        self.work.join("stats")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.work.join("report")
    }

    // ---- hashing -----------------------------------------------------------

    fn generate_hash(&self) -> String {
        hash_json(&json!({ "stage": "generate", "generator": self.cfg.generator }))
    }

    fn records_hash(&self) -> CliResult<String> {
        if let Some(h) = self.records_hash.get() {
            return Ok(h.clone());
        }
        let path = self.cfg.records_path();
        if !path.exists() {
            return Err(CliError::missing(format!("record file {}", path.display()), "generate"));
        }
        let h = hash_file(&path)?;
        Ok(self.records_hash.get_or_init(|| h).clone())
    }

    fn cohort_hash(&self) -> CliResult<String> {
        let c = &self.cfg.cohort;
        Ok(hash_json(&json!({
            "stage": "cohort",
            "records": self.records_hash()?,
            "include": optional_file_hash(&c.include_patterns)?,
            "exclude": optional_file_hash(&c.exclude_patterns)?,
            "hierarchy": optional_file_hash(&c.hierarchy)?,
            "rules": c.rules,
        })))
    }

    fn features_base_hash(&self) -> CliResult<String> {
        let f = &self.cfg.features;
        Ok(hash_json(&json!({
            "cohort": self.cohort_hash()?,
            "scheme": f.scheme,
            "spec": optional_file_hash(&f.spec)?,
        })))
    }

    fn featurize_hash(&self, base: &str, scenario: Scenario, seed: u64) -> String {
        let f = &self.cfg.features;
        hash_json(&json!({
            "stage": "featurize",
            "base": base,
            "scenario": scenario,
            "split": f.split(seed),
        }))
    }

    fn train_hash(&self, featurize: &str, kind: ModelKind) -> String {
        let m = &self.cfg.model;
        let space = if kind.is_forest() { json!(m.space.forest) } else { json!({ "space": m.space.network, "base": m.network }) };
        hash_json(&json!({
            "stage": "train",
            "features": featurize,
            "model": kind,
            "budget": m.budget,
            "seed": m.seed,
            "space": space,
        }))
    }

    fn explain_hash(&self, train: &str, method: ShapMethod) -> String {
        let e = &self.cfg.explain;
        hash_json(&json!({
            "stage": "explain",
            "train": train,
            "method": method,
            "background_size": e.background_size,
            "n_permutations": e.n_permutations,
            "n_samples": e.n_samples,
            "max_rows": e.max_rows,
            "seed": e.seed,
        }))
    }

    // ---- stage bookkeeping -------------------------------------------------

    /// Runs `build` unless the manifest shows `key` up to date; records the
    /// result.
    fn stage(&mut self, key: &str, config_hash: String, seed: u64, outputs: &[PathBuf], build: impl FnOnce() -> CliResult<()>) -> CliResult<()> {
        if self.is_current(key, &config_hash, outputs)? {
            log::info!("{key}: up to date");
            return Ok(());
        }
        log::info!("{key}: running");
        for p in outputs {
            if let Some(dir) = p.parent() {
                create_dir(dir)?;
            }
        }
        build()?;
        let output_hash = hash_outputs(&self.work, outputs)?;
        self.manifest.record(ManifestEntry { stage: key.to_string(), config_hash, seed, output_hash })
    }

    /// Checks an upstream stage's artifacts and configuration.
    fn require(&self, key: &str, expected: &str, outputs: &[PathBuf], what: &str, command: &str) -> CliResult<()> {
        if let Some(p) = outputs.iter().find(|p| !p.exists()) {
            return Err(CliError::missing(format!("{what} ({})", p.display()), command));
        }
        let stale = match self.manifest.get(key) {
            None => true,
            Some(e) => e.config_hash != expected || hash_outputs(&self.work, outputs)? != e.output_hash,
        };
        if stale {
            if self.force {
                log::warn!("{key}: upstream does not match the configuration; continuing because of --force");
            } else {
                return Err(CliError::StaleUpstream { stage: command.to_string() });
            }
        }
        Ok(())
    }

    fn require_records(&self) -> CliResult<()> {
        let path = self.cfg.records_path();
        if !path.exists() {
            return Err(CliError::missing(format!("record file {}", path.display()), "generate"));
        }
        if let Some(e) = self.manifest.get("generate") {
            if e.config_hash != self.generate_hash() {
                if !self.force {
                    return Err(CliError::StaleUpstream { stage: "generate".into() });
                }
                log::warn!("generate: generator section changed since the records were written; continuing because of --force");
            }
        }
        Ok(())
    }

    fn require_cohort(&self) -> CliResult<()> {
        self.require_records()?;
        self.require("cohort", &self.cohort_hash()?, &[self.cohort_path()], "cohort", "cohort")
    }

    fn load_spec(&self) -> CliResult<FeatureSpec> {
        match &self.cfg.features.spec {
            None => Ok(FeatureSpec::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("feature spec {}: {e}", p.display())))
            }
        }
    }

    fn cohort_inputs(&self) -> CliResult<(PatternSet, CodeHierarchy)> {
        let c = &self.cfg.cohort;
        let patterns = match (&c.include_patterns, &c.exclude_patterns) {
            (None, None) => PatternSet::covid_default(),
            (Some(inc), exc) => PatternSet::from_files(inc, exc.as_deref())?,
            (None, Some(_)) => return Err(CliError::Config("cohort.exclude_patterns needs cohort.include_patterns".into())),
        };
        let hierarchy = match &c.hierarchy {
            Some(p) => CodeHierarchy::from_file(p)?,
            None => CodeHierarchy::builtin(),
        };
        Ok((patterns, hierarchy))
    }

    /// Pre-imputation features of the whole cohort, unfiltered.
    fn raw_features(&self) -> CliResult<RawFeatures> {
        let (store, _) = RecordStore::ingest(self.cfg.records_path())?;
        let cohort = Cohort::read(&self.cohort_path())?;
        let (_, hierarchy) = self.cohort_inputs()?;
        Ok(extract_features(&store, &cohort, &self.load_spec()?, &self.cfg.features.scheme, &hierarchy)?)
    }

    // ---- stages ------------------------------------------------------------

    fn generate(&mut self) -> CliResult<()> {
        let records = self.cfg.records_path();
        let truth = self.truth_path();
        let gen = self.cfg.generator.clone();
        let hash = self.generate_hash();
        let seed = gen.seed;
        self.stage("generate", hash, seed, &[records.clone(), truth.clone()], || {
            let s = generate_cohort(&gen, &records, &truth)?;
            log::info!("generated {} patients, {} records, prevalence {:.4}", s.n_patients, s.n_records, s.observed_prevalence);
            Ok(())
        })?;
        self.records_hash = OnceCell::new();
        Ok(())
    }

    fn cohort(&mut self) -> CliResult<()> {
        self.require_records()?;
        let out = self.cohort_path();
        let hash = self.cohort_hash()?;
        let (patterns, hierarchy) = self.cohort_inputs()?;
        let records = self.cfg.records_path();
        let rules = self.cfg.cohort.rules;
        self.stage("cohort", hash, 0, std::slice::from_ref(&out), || {
            let (store, report) = RecordStore::ingest(&records)?;
            log::info!("ingested {} records ({} rejected, {} duplicates)", report.accepted, report.rejected, report.duplicates);
            let cohort = build_cohort(&store, &patterns, &hierarchy, &rules);
            let (h0, h1) = cohort.label_counts();
            log::info!(
                "cohort: {} of {} screened ({h0} H0, {h1} H1), {} excluded for prior hospitalization",
                cohort.entries.len(),
                cohort.screened,
                cohort.excluded_prior_hospitalization
            );
            Ok(cohort.write(&out)?)
        })
    }

    fn featurize(&mut self, only: Option<Scenario>) -> CliResult<()> {
        self.require_cohort()?;
        let base = self.features_base_hash()?;
        let scenarios: Vec<Scenario> = match only {
            Some(s) => vec![s],
            None => self.cfg.features.scenarios.clone(),
        };
        let mut raw: Option<RawFeatures> = None;
        for scenario in scenarios {
            for &seed in &self.cfg.features.split_seeds.clone() {
                let key = format!("featurize:{scenario}:s{seed}");
                let hash = self.featurize_hash(&base, scenario, seed);
                let [train_path, test_path] = self.feature_paths(scenario, seed);
                let split = self.cfg.features.split(seed);
                let outputs = [train_path.clone(), test_path.clone()];
                if raw.is_none() && !self.is_current(&key, &hash, &outputs)? {
                    raw = Some(self.raw_features()?);
                }
                let raw_ref = raw.as_ref();
                self.stage(&key, hash, seed, &outputs, || {
                    let all = raw_ref.expect("loaded for a stale stage");
                    let filtered = apply_scenario(all, scenario)?;
                    let (train, test, _) = fit_transform(&filtered, &split)?;
                    let violations = train.leakage_violations() + test.leakage_violations();
                    if violations > 0 {
                        return Err(CliError::Core(hospred_core::Error::InvalidInput(format!("{violations} cells leak post-admission data"))));
                    }
                    log::info!("{scenario} split {seed}: {} train / {} test rows, k = {}", train.n(), test.n(), train.k());
                    write_features(&train, &train_path)?;
                    Ok(write_features(&test, &test_path)?)
                })?;
            }
        }
        Ok(())
    }

    fn is_current(&self, key: &str, hash: &str, outputs: &[PathBuf]) -> CliResult<bool> {
        Ok(match self.manifest.get(key) {
            Some(e) => e.config_hash == hash && outputs.iter().all(|p| p.exists()) && hash_outputs(&self.work, outputs)? == e.output_hash,
            None => false,
        })
    }

    /// Verifies the features of one scenario and split, returning their hash.
    fn require_features(&self, scenario: Scenario, seed: u64) -> CliResult<String> {
        let hash = self.featurize_hash(&self.features_base_hash()?, scenario, seed);
        self.require(
            &format!("featurize:{scenario}:s{seed}"),
            &hash,
            &self.feature_paths(scenario, seed),
            &format!("{scenario} features for split {seed}"),
            &format!("featurize --scenario {scenario}"),
        )?;
        Ok(hash)
    }

    fn model_outputs(&self, kind: ModelKind, scenario: Scenario, seed: u64) -> [PathBuf; 3] {
        let dir = self.model_dir(kind, scenario, seed);
        [dir.join("model.bin"), dir.join("eval.json"), dir.join("search.json")]
    }

    fn train(&mut self, only: Option<ModelKind>) -> CliResult<()> {
        self.require_cohort()?;
        let kinds = match only {
            Some(k) => vec![k],
            None => self.cfg.model.families.clone(),
        };
        for &scenario in &self.cfg.features.scenarios.clone() {
            for &seed in &self.cfg.model_seeds().to_vec() {
                let fhash = self.require_features(scenario, seed)?;
                let [train_path, test_path] = self.feature_paths(scenario, seed);
                for &kind in &kinds {
                    let key = format!("train:{kind}:{scenario}:s{seed}");
                    let hash = self.train_hash(&fhash, kind);
                    let outputs = self.model_outputs(kind, scenario, seed);
                    let m = self.cfg.model.clone();
                    let model_seed = m.seed.wrapping_add(seed);
                    let (train_path, test_path) = (train_path.clone(), test_path.clone());
                    self.stage(&key, hash, model_seed, &outputs.clone(), || {
                        let train = read_features(&train_path)?;
                        let test = read_features(&test_path)?;
                        let geometry = Geometry { h: train.h, m: train.m, t: train.t };
                        let cv = cross_validate(kind, geometry, train.x.view(), &train.labels, &m.space, &m.network, m.budget, model_seed)?;
                        let pred = cv.model.predict(test.x.view())?;
                        let report = evaluate(kind, scenario, &pred, &test.labels)?;
                        log::info!("{kind} {scenario} split {seed}: test F1(H1) {:.3}", report.h1.f1.mean);
                        write_model(&cv.model, &outputs[0])?;
                        write_json(&outputs[1], &report)?;
                        write_json(&outputs[2], &json!({ "best": cv.best, "trials": cv.trials }))
                    })?;
                }
            }
        }
        Ok(())
    }

    fn require_model(&self, kind: ModelKind, scenario: Scenario, seed: u64) -> CliResult<String> {
        let hash = self.train_hash(&self.require_features(scenario, seed)?, kind);
        self.require(
            &format!("train:{kind}:{scenario}:s{seed}"),
            &hash,
            &self.model_outputs(kind, scenario, seed),
            &format!("{kind} model for {scenario} split {seed}"),
            &format!("train --model {kind}"),
        )?;
        Ok(hash)
    }

    fn explain(&mut self, forced: Option<ShapMethod>) -> CliResult<()> {
        self.require_cohort()?;
        let mut section = self.cfg.explain.clone();
        if forced.is_some() {
            section.method = forced;
        }
        let ecfg = section.to_config();
        for &kind in &self.cfg.model.families.clone() {
            let Some(method) = section.method_for(kind) else {
                log::warn!("{kind}: `{}` cannot explain this model; skipped", section.method.expect("forced"));
                continue;
            };
            for &scenario in &self.cfg.features.scenarios.clone() {
                for &seed in &self.cfg.model_seeds().to_vec() {
                    let thash = self.require_model(kind, scenario, seed)?;
                    let key = format!("explain:{kind}:{scenario}:{method}:s{seed}");
                    let hash = self.explain_hash(&thash, method);
                    let out = self.shap_path(kind, scenario, method, seed);
                    let model_path = self.model_outputs(kind, scenario, seed)[0].clone();
                    let [train_path, test_path] = self.feature_paths(scenario, seed);
                    let ecfg = ecfg.clone();
                    self.stage(&key, hash, ecfg.seed, std::slice::from_ref(&out), || {
                        let model = read_model(&model_path)?;
                        let train = read_features(&train_path)?;
                        let test = read_features(&test_path)?;
                        let rows = test.x.slice(s![..ecfg.max_rows.min(test.n()), ..]);
                        let background = background_rows(train.x.view(), ecfg.background_size, ecfg.seed);
                        let m = explain_rows(&model, rows, background.view(), &test.feature_names, scenario, method, &ecfg)?;
                        let worst = m.efficiency_residuals().iter().fold(0.0f64, |a, r| a.max(r.abs()));
                        log::info!("{kind} {scenario} split {seed}: {} rows explained, max efficiency residual {worst:.2e}", m.values.nrows());
                        Ok(write_shap(&m, &out)?)
                    })?;
                }
            }
        }
        Ok(())
    }

    fn stats(&mut self) -> CliResult<()> {
        self.require_cohort()?;
        let dir = self.stats_dir();
        let outputs = [dir.join("cohort_summary.tsv"), dir.join("cohort_summary.txt")];
        let hash = hash_json(&json!({ "stage": "stats", "features": self.features_base_hash()?, "alpha": self.cfg.stats.alpha }));
        let alpha = self.cfg.stats.alpha;
        let raw = if self.is_current("stats", &hash, &outputs)? { None } else { Some(self.raw_features()?) };
        self.stage("stats", hash, 0, &outputs.clone(), || {
            let rows = cohort_summary(raw.as_ref().expect("loaded for a stale stage"), alpha)?;
            write_text(&outputs[0], &summary_tsv(&rows))?;
            write_text(&outputs[1], &summary_text(&rows))
        })
    }

    /// Loaded evaluation reports and SHAP matrices for every configured cell.
    pub fn collect_results(&self) -> CliResult<report::Results> {
        let mut results = report::Results::default();
        for &kind in &self.cfg.model.families {
            for &scenario in &self.cfg.features.scenarios {
                for &seed in self.cfg.model_seeds() {
                    let thash = self.require_model(kind, scenario, seed)?;
                    let [_, eval_path, _] = self.model_outputs(kind, scenario, seed);
                    let text = fs::read_to_string(&eval_path).map_err(|e| CliError::io(&eval_path, e))?;
                    let eval: EvalReport = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", eval_path.display())))?;
                    results.sources.push(format!("train:{kind}:{scenario}:s{seed}"));
                    results.evals.push(eval);
                    if let Some(method) = self.cfg.explain.method_for(kind) {
                        let key = format!("explain:{kind}:{scenario}:{method}:s{seed}");
                        let path = self.shap_path(kind, scenario, method, seed);
                        self.require(&key, &self.explain_hash(&thash, method), std::slice::from_ref(&path), &format!("{method} SHAP values of {kind}"), "explain")?;
                        results.sources.push(key);
                        results.shap.push((kind, scenario, seed, read_shap(&path)?));
                    }
                }
            }
        }
        Ok(results)
    }

    fn report(&mut self) -> CliResult<()> {
        self.require_cohort()?;
        let stats_outputs = [self.stats_dir().join("cohort_summary.tsv"), self.stats_dir().join("cohort_summary.txt")];
        let stats_hash = hash_json(&json!({ "stage": "stats", "features": self.features_base_hash()?, "alpha": self.cfg.stats.alpha }));
        self.require("stats", &stats_hash, &stats_outputs, "cohort statistics", "stats")?;
        let results = self.collect_results()?;
        let mut sources: Vec<&ManifestEntry> = results.sources.iter().filter_map(|k| self.manifest.get(k)).collect();
        sources.extend(self.manifest.get("stats"));
        let hash = hash_json(&json!({
            "stage": "report",
            "sources": sources.iter().map(|e| (&e.stage, &e.config_hash, &e.output_hash)).collect::<Vec<_>>(),
            "top_k": self.cfg.explain.top_k,
        }));
        let dir = self.report_dir();
        let files = report::render(&results, &self.cfg, &sources, &stats_outputs[0])?;
        let outputs: Vec<PathBuf> = files.iter().map(|(name, _)| dir.join(name)).collect();
        self.stage("report", hash, 0, &outputs.clone(), || {
            for ((_, text), path) in files.iter().zip(&outputs) {
                write_text(path, text)?;
            }
            Ok(())
        })
    }
}

/// Reads one scenario/split of features written by `featurize`.
pub fn load_split(p: &Pipeline, scenario: Scenario, seed: u64) -> CliResult<(FusedFeatures, FusedFeatures)> {
    let [train, test] = p.feature_paths(scenario, seed);
    Ok((read_features(&train)?, read_features(&test)?))
}

