//! COVID-19 evidence classification, cohort selection and hospitalization
//! labeling.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::catalog;
use crate::error::{Error, Result};
use crate::records::{CodeSystem, RawRecord, RecordKind, RecordStore, ResultFlag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceClass {
    Confirmed,
    Suspected,
    PositiveTest,
    Disregarded,
}

/// Case-insensitive inclusion/exclusion patterns. A pattern line starting with
/// `re:` is a regular expression; anything else is a literal substring.
#[derive(Debug, Clone)]
pub struct PatternSet {
    include: Vec<Regex>,
    exclude: Vec<Regex>,
    sources: (Vec<String>, Vec<String>),
}

fn compile(pattern: &str) -> Result<Regex> {
    let source = match pattern.strip_prefix("re:") {
        Some(re) => re.to_string(),
        None => regex::escape(pattern),
    };
    RegexBuilder::new(&source)
        .case_insensitive(true)
        .build()
        .map_err(|e| Error::Config(format!("bad pattern `{pattern}`: {e}")))
}

impl PatternSet {
    pub fn new<I, E, S1, S2>(include: I, exclude: E) -> Result<Self>
    where
        I: IntoIterator<Item = S1>,
        E: IntoIterator<Item = S2>,
        S1: AsRef<str>,
        S2: AsRef<str>,
    {
        let inc: Vec<String> = include.into_iter().map(|s| s.as_ref().to_string()).collect();
        let exc: Vec<String> = exclude.into_iter().map(|s| s.as_ref().to_string()).collect();
        Ok(PatternSet {
            include: inc.iter().map(|p| compile(p)).collect::<Result<_>>()?,
            exclude: exc.iter().map(|p| compile(p)).collect::<Result<_>>()?,
            sources: (inc, exc),
        })
    }

    /// Default COVID-19 text patterns.
    pub fn covid_default() -> Self {
        Self::new(
            ["covid", "sars-cov-2", "coronavirus disease"],
            ["ruled out", "screening", "exposure to", "negative"],
        )
        .expect("default patterns compile")
    }

    /// Loads newline-delimited pattern files; blank lines and `#` comments are ignored.
    pub fn from_files(include: &Path, exclude: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<String>> {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect())
        };
        let inc = read(include)?;
        let exc = match exclude {
            Some(p) => read(p)?,
            None => Vec::new(),
        };
        Self::new(inc, exc)
    }

    pub fn includes(&self, text: &str) -> bool {
        self.include.iter().any(|r| r.is_match(text))
    }

    pub fn excludes(&self, text: &str) -> bool {
        self.exclude.iter().any(|r| r.is_match(text))
    }

    pub fn inclusion_patterns(&self) -> &[String] {
        &self.sources.0
    }

    pub fn exclusion_patterns(&self) -> &[String] {
        &self.sources.1
    }
}

/// Concept DAG with child -> parent edges.
#[derive(Debug, Clone, Default)]
pub struct CodeHierarchy {
    names: HashMap<String, String>,
    parents: HashMap<String, Vec<String>>,
}

impl CodeHierarchy {
    /// Builds a hierarchy from `(child, parent, child name)` triples; a root has
    /// an empty parent.
    pub fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Result<Self> {
        let mut h = CodeHierarchy::default();
        for (child, parent, name) in edges {
            if child.is_empty() {
                return Err(Error::Config("hierarchy edge with empty child".into()));
            }
            if !name.is_empty() {
                h.names.insert(child.to_string(), name.to_lowercase());
            }
            let entry = h.parents.entry(child.to_string()).or_default();
            if !parent.is_empty() && !entry.iter().any(|p| p == parent) {
                entry.push(parent.to_string());
            }
        }
        h.validate()?;
        Ok(h)
    }

    /// Parses a `child<TAB>parent<TAB>name` edge list.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(path, format!("line {}: expected 3 tab-separated fields", i + 1)));
            }
            edges.push((fields[0], fields[1], fields[2]));
        }
        Self::from_edges(edges)
    }

    /// The built-in hierarchy covering the concepts the generator emits.
    pub fn builtin() -> Self {
        Self::from_edges(catalog::SNOMED_CONCEPTS.iter().map(|(id, name, parent)| (*id, parent.unwrap_or(""), *name)))
            .expect("builtin hierarchy is valid")
    }

    pub fn to_edge_list(&self) -> String {
        let mut lines = Vec::new();
        let mut ids: Vec<&String> = self.names.keys().collect();
        ids.sort();
        for id in ids {
            let name = &self.names[id];
            match self.parents.get(id).filter(|p| !p.is_empty()) {
                Some(parents) => {
                    for p in parents {
                        lines.push(format!("{id}\t{p}\t{name}"));
                    }
                }
                None => lines.push(format!("{id}\t\t{name}")),
            }
        }
        lines.join("\n") + "\n"
    }

    fn validate(&self) -> Result<()> {
        for (child, parents) in &self.parents {
            if !self.names.contains_key(child) {
                return Err(Error::Config(format!("concept {child} has no name")));
            }
            for p in parents {
                if !self.names.contains_key(p) {
                    return Err(Error::Config(format!("parent concept {p} has no name")));
                }
            }
        }
        // Kahn's algorithm over child -> parent edges
        let mut indegree: HashMap<&str, usize> = self.names.keys().map(|k| (k.as_str(), 0)).collect();
        for parents in self.parents.values() {
            for p in parents {
                *indegree.get_mut(p.as_str()).unwrap() += 1;
            }
        }
        let mut queue: VecDeque<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
        let mut visited = 0;
        while let Some(node) = queue.pop_front() {
            visited += 1;
            for p in self.parents.get(node).into_iter().flatten() {
                let d = indegree.get_mut(p.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(p);
                }
            }
        }
        if visited != self.names.len() {
            return Err(Error::Config("concept hierarchy contains a cycle".into()));
        }
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.names.contains_key(id)
    }

    pub fn name(&self, id: &str) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// All strict ancestors of `id`, in breadth-first order.
    pub fn ancestors(&self, id: &str) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut queue: VecDeque<&str> = self.parents.get(id).into_iter().flatten().map(String::as_str).collect();
        while let Some(node) = queue.pop_front() {
            if !seen.insert(node) {
                continue;
            }
            out.push(node);
            queue.extend(self.parents.get(node).into_iter().flatten().map(String::as_str));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// True iff the concept or one of its ancestors matches an inclusion pattern
/// and the concept's own name matches no exclusion pattern.
pub fn match_hierarchical(concept_id: &str, patterns: &PatternSet, hierarchy: &CodeHierarchy) -> bool {
    let Some(name) = hierarchy.name(concept_id) else {
        log::warn!("concept {concept_id} not in hierarchy");
        return false;
    };
    if patterns.excludes(name) {
        return false;
    }
    patterns.includes(name)
        || hierarchy
            .ancestors(concept_id)
            .into_iter()
            .any(|a| hierarchy.name(a).is_some_and(|n| patterns.includes(n)))
}

/// Evidence class of a diagnosis record. Explicit U07.1/U07.2 codes win;
/// otherwise exclusion patterns take precedence over inclusion patterns.
pub fn classify_diagnosis(record: &RawRecord, patterns: &PatternSet, hierarchy: &CodeHierarchy) -> EvidenceClass {
    if record.code_system == CodeSystem::Icd10 {
        match record.code.as_str() {
            catalog::COVID_CONFIRMED_ICD10 => return EvidenceClass::Confirmed,
            catalog::COVID_SUSPECTED_ICD10 => return EvidenceClass::Suspected,
            _ => {}
        }
    }
    let concept_name = (record.code_system == CodeSystem::Snomed)
        .then(|| hierarchy.name(&record.code))
        .flatten();
    if patterns.excludes(&record.text) || concept_name.is_some_and(|n| patterns.excludes(n)) {
        return EvidenceClass::Disregarded;
    }
    let snomed_hit = record.code_system == CodeSystem::Snomed && match_hierarchical(&record.code, patterns, hierarchy);
    if snomed_hit || patterns.includes(&record.text) {
        EvidenceClass::Suspected
    } else {
        EvidenceClass::Disregarded
    }
}

pub fn detect_positive_test(record: &RawRecord) -> bool {
    record.kind == RecordKind::Observation
        && record.code == catalog::COVID_TEST_LOINC
        && record.result_flag == Some(ResultFlag::Positive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortRules {
    /// Half-width of the positive-test window around the anchor, and the
    /// follow-up window for hospitalization (days, inclusive).
    pub window_days: i64,
    /// Prior-hospitalization exclusion window before the anchor (days).
    pub prior_window_days: i64,
    /// Minimum stay; a qualifying encounter must last strictly longer.
    pub min_duration_hours: f64,
}

impl Default for CohortRules {
    fn default() -> Self {
        CohortRules {
            window_days: 28,
            prior_window_days: 28,
            min_duration_hours: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub patient_id: String,
    pub anchor_day: i64,
    pub diagnosis_class: EvidenceClass,
}

/// Anchor day and strongest diagnosis class of one timeline, when it carries
/// COVID-19 diagnosis evidence and a positive test near the anchor.
pub fn select_patient(
    timeline: &[RawRecord],
    patterns: &PatternSet,
    hierarchy: &CodeHierarchy,
    rules: &CohortRules,
) -> Option<(i64, EvidenceClass)> {
    let mut anchor: Option<i64> = None;
    let mut class = EvidenceClass::Suspected;
    for r in timeline.iter().filter(|r| r.kind == RecordKind::Diagnosis) {
        let c = classify_diagnosis(r, patterns, hierarchy);
        if matches!(c, EvidenceClass::Confirmed | EvidenceClass::Suspected) {
            let day = r.day.expect("validated diagnosis has a day");
            anchor = Some(anchor.map_or(day, |a| a.min(day)));
            if c == EvidenceClass::Confirmed {
                class = EvidenceClass::Confirmed;
            }
        }
    }
    let anchor = anchor?;
    let tested = timeline
        .iter()
        .filter(|r| detect_positive_test(r))
        .any(|r| (r.day.unwrap() - anchor).abs() <= rules.window_days);
    tested.then_some((anchor, class))
}

pub fn select_cohort(
    store: &RecordStore,
    patterns: &PatternSet,
    hierarchy: &CodeHierarchy,
    rules: &CohortRules,
) -> Vec<Selection> {
    store
        .timelines()
        .filter_map(|(id, timeline)| {
            select_patient(timeline, patterns, hierarchy, rules).map(|(anchor_day, diagnosis_class)| Selection {
                patient_id: id.to_string(),
                anchor_day,
                diagnosis_class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hospitalization {
    ExcludedPriorHosp,
    H1 { admission_offset: i64 },
    H0,
}

pub fn label_hospitalization(timeline: &[RawRecord], anchor_day: i64, rules: &CohortRules) -> Hospitalization {
    let admissions = timeline.iter().filter_map(|r| {
        let qualifies = r.kind == RecordKind::Encounter
            && r.encounter_type.is_some_and(|t| t.is_hospital())
            && r.duration_hours.is_some_and(|h| h > rules.min_duration_hours);
        qualifies.then(|| r.day.unwrap() - anchor_day)
    });
    let mut earliest_after: Option<i64> = None;
    for offset in admissions {
        if (-rules.prior_window_days..=-1).contains(&offset) {
            return Hospitalization::ExcludedPriorHosp;
        }
        if (0..=rules.window_days).contains(&offset) {
            earliest_after = Some(earliest_after.map_or(offset, |e| e.min(offset)));
        }
    }
    match earliest_after {
        Some(admission_offset) => Hospitalization::H1 { admission_offset },
        None => Hospitalization::H0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    H0,
    H1,
}

impl Label {
    pub fn is_h1(self) -> bool {
        self == Label::H1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub diagnosis_class: EvidenceClass,
    pub has_positive_test: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub patient_id: String,
    pub anchor_day: i64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission_offset: Option<i64>,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Default)]
pub struct Cohort {
    pub entries: Vec<CohortEntry>,
    pub screened: usize,
    pub excluded_prior_hospitalization: usize,
}

impl Cohort {
    pub fn label_counts(&self) -> (usize, usize) {
        let h1 = self.entries.iter().filter(|e| e.label.is_h1()).count();
        (self.entries.len() - h1, h1)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &CohortEntry> {
        self.entries.iter().map(|e| (e.patient_id.as_str(), e)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("cohort entry serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<CohortEntry>>>()?;
        Ok(Cohort {
            screened: entries.len(),
            entries,
            excluded_prior_hospitalization: 0,
        })
    }
}

/// Selects the cohort and labels it, dropping prior-hospitalization patients.
pub fn build_cohort(store: &RecordStore, patterns: &PatternSet, hierarchy: &CodeHierarchy, rules: &CohortRules) -> Cohort {
    let mut cohort = Cohort {
        screened: store.n_patients(),
        ..Default::default()
    };
    for sel in select_cohort(store, patterns, hierarchy, rules) {
        let timeline = store.patient_timeline(&sel.patient_id).expect("selected from store");
        let (label, admission_offset) = match label_hospitalization(timeline, sel.anchor_day, rules) {
            Hospitalization::ExcludedPriorHosp => {
                cohort.excluded_prior_hospitalization += 1;
                continue;
            }
            Hospitalization::H1 { admission_offset } => (Label::H1, Some(admission_offset)),
            Hospitalization::H0 => (Label::H0, None),
        };
        cohort.entries.push(CohortEntry {
            patient_id: sel.patient_id,
            anchor_day: sel.anchor_day,
            label,
            admission_offset,
            evidence: Evidence {
                diagnosis_class: sel.diagnosis_class,
                has_positive_test: true,
            },
        });
    }
    cohort
}
