use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;

use super::{period_of_interest, FeatureSpec, IntervalScheme, PeriodOfInterest, Scenario, AGGREGATES, PERIOD_START};
use crate::catalog::ConditionKind;
use crate::cohort::{match_hierarchical, Cohort, CodeHierarchy, Label, PatternSet};
use crate::error::{Error, Result};
use crate::records::{CodeSystem, RawRecord, RecordKind, RecordStore};

/// Matches diagnosis records to one condition: ICD-10 by code prefix, SNOMED
/// through the concept hierarchy, uncoded records by their text.
#[derive(Debug, Clone)]
pub struct ConditionMatcher {
    icd10: Vec<String>,
    patterns: PatternSet,
}

impl ConditionMatcher {
    pub fn new(icd10: &[String], include: &[String], exclude: &[String]) -> Result<Self> {
        Ok(ConditionMatcher {
            icd10: icd10.to_vec(),
            patterns: PatternSet::new(include, exclude)?,
        })
    }

    pub fn matches(&self, record: &RawRecord, hierarchy: &CodeHierarchy) -> bool {
        if record.kind != RecordKind::Diagnosis {
            return false;
        }
        match record.code_system {
            CodeSystem::Icd10 => self.icd10.iter().any(|p| record.code.starts_with(p.as_str())),
            CodeSystem::Snomed => {
                hierarchy.contains(&record.code) && match_hierarchical(&record.code, &self.patterns, hierarchy)
            }
            CodeSystem::None => self.patterns.includes(&record.text) && !self.patterns.excludes(&record.text),
            CodeSystem::Loinc => false,
        }
    }
}

/// One cohort patient's feature-relevant events, as day offsets from the
/// anchor, in timeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientEvents {
    pub patient_id: String,
    pub label: Label,
    pub admission_offset: Option<i64>,
    pub age: Option<u32>,
    pub male: bool,
    /// (condition index, offset)
    pub conditions: Vec<(usize, i64)>,
    /// (quantity index, offset, value)
    pub observations: Vec<(usize, i64, f64)>,
}

/// Pre-imputation features with per-event provenance.
#[derive(Debug, Clone)]
pub struct RawFeatures {
    pub spec: FeatureSpec,
    pub scheme: IntervalScheme,
    pub scenario: Scenario,
    pub patients: Vec<PatientEvents>,
}

pub fn extract_features(
    store: &RecordStore,
    cohort: &Cohort,
    spec: &FeatureSpec,
    scheme: &IntervalScheme,
    hierarchy: &CodeHierarchy,
) -> Result<RawFeatures> {
    spec.validate()?;
    let matchers = spec
        .conditions
        .iter()
        .map(|c| ConditionMatcher::new(&c.icd10, &c.include, &c.exclude))
        .collect::<Result<Vec<_>>>()?;
    let loinc: HashMap<&str, usize> = spec.quantities.iter().enumerate().map(|(i, q)| (q.loinc.as_str(), i)).collect();
    let patients = cohort
        .entries
        .par_iter()
        .map(|entry| {
            let timeline = store.patient_timeline(&entry.patient_id)?;
            let mut p = PatientEvents {
                patient_id: entry.patient_id.clone(),
                label: entry.label,
                admission_offset: entry.admission_offset,
                age: None,
                male: false,
                conditions: Vec::new(),
                observations: Vec::new(),
            };
            for r in timeline {
                match r.kind {
                    RecordKind::Demographic => {
                        if let Some(a) = r.age_years() {
                            p.age = Some(a);
                        }
                        if let Some(g) = r.gender_value() {
                            p.male = g == crate::records::Gender::Male;
                        }
                    }
                    RecordKind::Diagnosis => {
                        let offset = r.day.unwrap() - entry.anchor_day;
                        for (ci, m) in matchers.iter().enumerate() {
                            if m.matches(r, hierarchy) {
                                p.conditions.push((ci, offset));
                            }
                        }
                    }
                    RecordKind::Observation => {
                        if let (Some(&qi), Some(v)) = (loinc.get(r.code.as_str()), r.value) {
                            p.observations.push((qi, r.day.unwrap() - entry.anchor_day, v));
                        }
                    }
                    RecordKind::Encounter => {}
                }
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawFeatures {
        spec: spec.clone(),
        scheme: scheme.clone(),
        scenario: Scenario::All,
        patients,
    })
}

/// OR-aggregation of one condition's mention offsets. Returns one value, or
/// `[past, present]` for split conditions.
pub fn aggregate_boolean(
    offsets: &[i64],
    kind: ConditionKind,
    poi: &PeriodOfInterest,
    scheme: &IntervalScheme,
) -> Vec<bool> {
    let in_range = |o: i64| scheme.assign(o).is_some() && poi.guard.is_none_or(|g| o < g);
    match kind {
        ConditionKind::Chronic => vec![offsets.iter().any(|&o| in_range(o))],
        ConditionKind::Acute => vec![offsets.iter().any(|&o| poi.admits(scheme, o))],
        ConditionKind::PastPresent => vec![
            offsets.iter().any(|&o| o < PERIOD_START && in_range(o)),
            offsets.iter().any(|&o| poi.admits(scheme, o)),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationAgg {
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ObservationAgg {
    pub fn as_array(&self) -> [f64; 4] {
        [self.last, self.min, self.max, self.mean]
    }
}

/// Aggregates `(day, value)` pairs of one quantity in one interval, given in
/// ingestion order. `last` is the value with the greatest day, the latest
/// ingested on ties.
pub fn aggregate_observation(values: &[(i64, f64)]) -> Option<ObservationAgg> {
    let (&(mut last_day, mut last), rest) = values.split_first()?;
    let (mut min, mut max, mut sum) = (last, last, last);
    for &(day, v) in rest {
        if day >= last_day {
            last_day = day;
            last = v;
        }
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    Some(ObservationAgg {
        last,
        min,
        max,
        mean: sum / values.len() as f64,
    })
}

/// Scenario filter on pre-imputation features.
pub fn apply_scenario(raw: &RawFeatures, scenario: Scenario) -> Result<RawFeatures> {
    if raw.scenario != Scenario::All {
        return Err(Error::InvalidInput(format!(
            "scenarios apply to unfiltered features, these are `{}`",
            raw.scenario
        )));
    }
    let mut out = raw.clone();
    out.scenario = scenario;
    match scenario {
        Scenario::All => {}
        Scenario::Gp => {
            out.spec = raw.spec.general_practice();
            let remap = |keep: Vec<bool>| {
                let mut next = 0;
                keep.into_iter()
                    .map(|k| {
                        k.then(|| {
                            next += 1;
                            next - 1
                        })
                    })
                    .collect::<Vec<Option<usize>>>()
            };
            let cmap = remap(raw.spec.conditions.iter().map(|c| !c.acute_care_only).collect());
            let qmap = remap(raw.spec.quantities.iter().map(|q| !q.acute_care_only).collect());
            for p in &mut out.patients {
                p.conditions = p.conditions.iter().filter_map(|&(c, o)| cmap[c].map(|c| (c, o))).collect();
                p.observations = p
                    .observations
                    .iter()
                    .filter_map(|&(q, o, v)| qmap[q].map(|q| (q, o, v)))
                    .collect();
            }
        }
        Scenario::OneDayBefore => {
            for p in &mut out.patients {
                if let (Label::H1, Some(adm)) = (p.label, p.admission_offset) {
                    // calendar-day reading: the whole day before admission goes
                    let cutoff = adm - 1;
                    p.conditions.retain(|&(_, o)| o < cutoff);
                    p.observations.retain(|&(_, o, _)| o < cutoff);
                }
            }
        }
    }
    Ok(out)
}

/// Dense pre-imputation matrices. Missing temporal cells are NaN with source
/// day `i16::MIN`.
#[derive(Debug, Clone)]
pub struct RawMatrix {
    pub patient_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub admission_offsets: Vec<Option<i64>>,
    pub age_known: Vec<bool>,
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
    pub source_day: Array2<i16>,
}

impl RawMatrix {
    pub fn n(&self) -> usize {
        self.patient_ids.len()
    }

    /// Rows with no condition mention and no observed temporal cell.
    pub fn is_empty_row(&self, row: usize, tabular_offset: usize) -> bool {
        self.x1.row(row).iter().skip(tabular_offset).all(|&v| v == 0.0) && self.x2.row(row).iter().all(|v| v.is_nan())
    }
}

struct RowOut {
    x1: Vec<f64>,
    x2: Vec<f64>,
    source: Vec<i16>,
}

impl RawFeatures {
    pub fn t(&self) -> usize {
        self.scheme.len()
    }

    fn materialize_row(&self, p: &PatientEvents) -> Result<RowOut> {
        let spec = &self.spec;
        let scheme = &self.scheme;
        let t = scheme.len();
        let poi = period_of_interest(scheme, p.label, p.admission_offset)?;

        let mut x1 = Vec::with_capacity(spec.h());
        x1.push(f64::from(u8::from(p.male)));
        let bin = p.age.and_then(|a| spec.age_bins.iter().position(|b| b.lo <= a && a < b.hi));
        let known = p.age.is_some() && bin.is_some();
        x1.extend((0..spec.age_bins.len()).map(|i| f64::from(u8::from(bin == Some(i)))));
        x1.push(f64::from(u8::from(!known)));
        let mut offsets: Vec<Vec<i64>> = vec![Vec::new(); spec.conditions.len()];
        for &(c, o) in &p.conditions {
            offsets[c].push(o);
        }
        for (c, cond) in spec.conditions.iter().enumerate() {
            for v in aggregate_boolean(&offsets[c], cond.kind, &poi, scheme) {
                x1.push(f64::from(u8::from(v)));
            }
        }

        let m = spec.m();
        let mut x2 = vec![f64::NAN; m * t];
        let mut source = vec![i16::MIN; m * t];
        let mut cells: Vec<Vec<(i64, f64)>> = vec![Vec::new(); spec.quantities.len() * t];
        for &(q, o, v) in &p.observations {
            if poi.admits(scheme, o) {
                let i = scheme.assign(o).unwrap();
                cells[q * t + i].push((o, v));
            }
        }
        for q in 0..spec.quantities.len() {
            for i in 0..t {
                let values = &cells[q * t + i];
                if let Some(agg) = aggregate_observation(values) {
                    let day = values.iter().map(|&(o, _)| o).max().unwrap();
                    let day = day.clamp(i64::from(i16::MIN + 1), i64::from(i16::MAX)) as i16;
                    for (a, v) in agg.as_array().into_iter().enumerate() {
                        let col = (q * AGGREGATES.len() + a) * t + i;
                        x2[col] = v;
                        source[col] = day;
                    }
                }
            }
        }
        Ok(RowOut { x1, x2, source })
    }

    pub fn materialize(&self) -> Result<RawMatrix> {
        let rows = self
            .patients
            .par_iter()
            .map(|p| self.materialize_row(p))
            .collect::<Result<Vec<_>>>()?;
        let n = rows.len();
        let h = self.spec.h();
        let mt = self.spec.m() * self.t();
        let mut x1 = Array2::zeros((n, h));
        let mut x2 = Array2::zeros((n, mt));
        let mut source_day = Array2::from_elem((n, mt), i16::MIN);
        for (r, row) in rows.into_iter().enumerate() {
            x1.row_mut(r).assign(&ndarray::ArrayView1::from(&row.x1));
            x2.row_mut(r).assign(&ndarray::ArrayView1::from(&row.x2));
            source_day.row_mut(r).assign(&ndarray::ArrayView1::from(&row.source));
        }
        let unknown_col = 1 + self.spec.age_bins.len();
        let age_known = (0..n).map(|r| x1[[r, unknown_col]] == 0.0).collect();
        Ok(RawMatrix {
            patient_ids: self.patients.iter().map(|p| p.patient_id.clone()).collect(),
            labels: self.patients.iter().map(|p| p.label).collect(),
            admission_offsets: self.patients.iter().map(|p| p.admission_offset).collect(),
            age_known,
            x1,
            x2,
            source_day,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::default_interval_scheme;

    fn poi(label: Label, adm: Option<i64>) -> PeriodOfInterest {
        period_of_interest(&default_interval_scheme(), label, adm).unwrap()
    }

    #[test]
    fn chronic_spans_all_history() {
        let s = default_interval_scheme();
        assert_eq!(aggregate_boolean(&[-400], ConditionKind::Chronic, &poi(Label::H0, None), &s), vec![true]);
        // coded during the stay
        assert_eq!(aggregate_boolean(&[7], ConditionKind::Chronic, &poi(Label::H1, Some(6)), &s), vec![false]);
    }

    #[test]
    fn acute_respects_guard() {
        let s = default_interval_scheme();
        assert_eq!(aggregate_boolean(&[10], ConditionKind::Acute, &poi(Label::H1, Some(6)), &s), vec![false]);
        assert_eq!(aggregate_boolean(&[5], ConditionKind::Acute, &poi(Label::H1, Some(6)), &s), vec![true]);
        assert_eq!(aggregate_boolean(&[-20], ConditionKind::Acute, &poi(Label::H0, None), &s), vec![false]);
    }

    #[test]
    fn past_present_split() {
        let s = default_interval_scheme();
        let p = poi(Label::H0, None);
        assert_eq!(aggregate_boolean(&[-100], ConditionKind::PastPresent, &p, &s), vec![true, false]);
        assert_eq!(aggregate_boolean(&[-3], ConditionKind::PastPresent, &p, &s), vec![false, true]);
        assert_eq!(aggregate_boolean(&[], ConditionKind::PastPresent, &p, &s), vec![false, false]);
    }

    #[test]
    fn observation_aggregates() {
        let agg = aggregate_observation(&[(2, 7.1), (4, 5.3)]).unwrap();
        assert_eq!(agg.last, 5.3);
        assert_eq!(agg.min, 5.3);
        assert_eq!(agg.max, 7.1);
        assert!((agg.mean - 6.2).abs() < 1e-12);
        assert_eq!(aggregate_observation(&[(0, 98.0)]).unwrap().as_array(), [98.0; 4]);
        assert!(aggregate_observation(&[]).is_none());
        // same-day tie: latest ingested wins
        assert_eq!(aggregate_observation(&[(3, 1.0), (3, 2.0), (1, 9.0)]).unwrap().last, 2.0);
    }

    #[test]
    fn matcher_routes_by_code_system() {
        let h = CodeHierarchy::builtin();
        let m = ConditionMatcher::new(&["I10".into()], &["hypertension".into(), "hypertensive".into()], &["pulmonary".into()]).unwrap();
        let dx = |sys, code: &str, text: &str| RawRecord::diagnosis("p", 0, sys, code, text);
        assert!(m.matches(&dx(CodeSystem::Icd10, "I10", ""), &h));
        assert!(m.matches(&dx(CodeSystem::Icd10, "I10.9", ""), &h));
        assert!(!m.matches(&dx(CodeSystem::Icd10, "I27", "pulmonary hypertension"), &h));
        assert!(m.matches(&dx(CodeSystem::Snomed, "59621000", ""), &h));
        assert!(!m.matches(&dx(CodeSystem::Snomed, "70995007", ""), &h));
        assert!(m.matches(&dx(CodeSystem::None, "", "Hypertension, essential"), &h));
        assert!(!m.matches(&dx(CodeSystem::None, "", "pulmonary hypertension"), &h));
    }

    fn patient(label: Label, adm: Option<i64>, obs: Vec<(usize, i64, f64)>) -> PatientEvents {
        PatientEvents {
            patient_id: "p".into(),
            label,
            admission_offset: adm,
            age: Some(50),
            male: true,
            conditions: vec![(0, -2)],
            observations: obs,
        }
    }

    fn raw(patients: Vec<PatientEvents>) -> RawFeatures {
        RawFeatures {
            spec: FeatureSpec::default(),
            scheme: default_interval_scheme(),
            scenario: Scenario::All,
            patients,
        }
    }

    #[test]
    fn one_day_before_boundary() {
        // admitted day 3: lab at day 2 dropped, day 1 kept
        let r = raw(vec![patient(Label::H1, Some(3), vec![(0, 1, 80.0), (0, 2, 120.0)])]);
        let one = apply_scenario(&r, Scenario::OneDayBefore).unwrap();
        assert_eq!(one.patients[0].observations, vec![(0, 1, 80.0)]);
        let h0 = raw(vec![patient(Label::H0, None, vec![(0, 1, 80.0), (0, 2, 120.0)])]);
        let same = apply_scenario(&h0, Scenario::OneDayBefore).unwrap();
        assert_eq!(same.patients, h0.patients);
        assert!(apply_scenario(&one, Scenario::Gp).is_err());
    }

    #[test]
    fn gp_drops_columns() {
        let r = raw(vec![patient(Label::H0, None, vec![(20, 1, 500.0), (0, 1, 80.0)])]);
        let gp = apply_scenario(&r, Scenario::Gp).unwrap();
        let before = r.spec.column_names(17).len();
        let after = gp.spec.column_names(17).len();
        assert_eq!(before - after, 16 + 2 * 4 * 17);
        // D-dimer (index 20) observation is gone, HR survives
        assert_eq!(gp.patients[0].observations, vec![(0, 1, 80.0)]);
        // hypertension (index 0) survives the GP filter, pneumonia (index 1) does not
        assert_eq!(gp.spec.conditions[0].name, "hypertension");
        assert_eq!(gp.spec.conditions[1].name, "diabetes");
    }

    #[test]
    fn materialized_cells_carry_provenance() {
        let r = raw(vec![patient(Label::H1, Some(6), vec![(0, 4, 90.0), (0, 6, 130.0), (0, -20, 60.0)])]);
        let m = r.materialize().unwrap();
        let t = 17;
        // HR last in interval [4,5) is 90 from day 4
        assert_eq!(m.x2[[0, 8]], 90.0);
        assert_eq!(m.source_day[[0, 8]], 4);
        // admission-day value and pre-period value are not admissible
        assert!(m.x2[[0, 10]].is_nan());
        assert!(m.x2[[0, 1]].is_nan());
        // min channel mirrors the same cell
        assert_eq!(m.x2[[0, t + 8]], 90.0);
        assert_eq!(m.x1.row(0).len(), 77);
        assert_eq!(m.x1[[0, 0]], 1.0);
    }
}
