//! EHR event model and the newline-delimited record store.
//!
//! Every pipeline stage exchanges events as JSON Lines with the canonical
//! key order `patient_id, kind, day, code_system, code, text, value, unit,
//! result_flag, encounter_type, duration_hours`. Absent optional fields are
//! omitted.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordKind {
    Demographic,
    Diagnosis,
    Observation,
    Encounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "ICD10")]
    Icd10,
    #[serde(rename = "SNOMED")]
    Snomed,
    #[serde(rename = "LOINC")]
    Loinc,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResultFlag {
    Positive,
    Negative,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncounterType {
    Inpatient,
    HospitalEmergencyRoomVisit,
    HospitalEncounter,
    Other,
}

impl EncounterType {
    /// Encounter types that count as a hospital stay when long enough.
    pub fn is_hospital(self) -> bool {
        !matches!(self, EncounterType::Other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

/// One EHR event. `day` is an integer day offset from the data epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub patient_id: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<i64>,
    pub code_system: CodeSystem,
    pub code: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_flag: Option<ResultFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter_type: Option<EncounterType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_hours: Option<f64>,
}

impl RawRecord {
    fn bare(patient_id: &str, kind: RecordKind, day: Option<i64>, code_system: CodeSystem) -> Self {
        RawRecord {
            patient_id: patient_id.to_string(),
            kind,
            day,
            code_system,
            code: String::new(),
            text: String::new(),
            value: None,
            unit: None,
            result_flag: None,
            encounter_type: None,
            duration_hours: None,
        }
    }

    pub fn age(patient_id: &str, years: u32) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Demographic, None, CodeSystem::None);
        r.code = format!("age_years:{years}");
        r
    }

    pub fn gender(patient_id: &str, gender: Gender) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Demographic, None, CodeSystem::None);
        let g = match gender {
            Gender::Female => 'F',
            Gender::Male => 'M',
            Gender::Unknown => 'U',
        };
        r.code = format!("gender:{g}");
        r
    }

    pub fn diagnosis(patient_id: &str, day: i64, system: CodeSystem, code: &str, text: &str) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Diagnosis, Some(day), system);
        r.code = code.to_string();
        r.text = text.to_string();
        r
    }

    pub fn measurement(patient_id: &str, day: i64, loinc: &str, text: &str, value: f64, unit: &str) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Observation, Some(day), CodeSystem::Loinc);
        r.code = loinc.to_string();
        r.text = text.to_string();
        r.value = Some(value);
        r.unit = Some(unit.to_string());
        r
    }

    pub fn test_result(patient_id: &str, day: i64, loinc: &str, text: &str, flag: ResultFlag) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Observation, Some(day), CodeSystem::Loinc);
        r.code = loinc.to_string();
        r.text = text.to_string();
        r.result_flag = Some(flag);
        r
    }

    pub fn encounter(patient_id: &str, day: i64, kind: EncounterType, duration_hours: f64) -> Self {
        let mut r = Self::bare(patient_id, RecordKind::Encounter, Some(day), CodeSystem::None);
        r.code = "encounter".to_string();
        r.encounter_type = Some(kind);
        r.duration_hours = Some(duration_hours);
        r
    }

    /// Checks the per-kind field invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("empty patient_id".into());
        }
        if self.kind != RecordKind::Demographic && self.day.is_none() {
            return Err(format!("{:?} record without day", self.kind));
        }
        match self.kind {
            RecordKind::Demographic => {
                if self.age_years().is_none() && self.gender_value().is_none() {
                    return Err(format!("bad demographic code `{}`", self.code));
                }
            }
            RecordKind::Observation => {
                if self.code_system != CodeSystem::Loinc {
                    return Err("observation must be LOINC-coded".into());
                }
                if self.value.is_some() == self.result_flag.is_some() {
                    return Err("observation needs exactly one of value/result_flag".into());
                }
                if let Some(v) = self.value {
                    if !v.is_finite() {
                        return Err("non-finite observation value".into());
                    }
                }
            }
            RecordKind::Encounter => {
                if self.encounter_type.is_none() {
                    return Err("encounter without encounter_type".into());
                }
                match self.duration_hours {
                    Some(h) if h.is_finite() && h >= 0.0 => {}
                    _ => return Err("encounter needs duration_hours >= 0".into()),
                }
            }
            RecordKind::Diagnosis => {}
        }
        Ok(())
    }

    pub fn age_years(&self) -> Option<u32> {
        if self.kind != RecordKind::Demographic {
            return None;
        }
        self.code.strip_prefix("age_years:")?.parse().ok()
    }

    pub fn gender_value(&self) -> Option<Gender> {
        if self.kind != RecordKind::Demographic {
            return None;
        }
        match self.code.strip_prefix("gender:")? {
            "F" => Some(Gender::Female),
            "M" => Some(Gender::Male),
            "U" => Some(Gender::Unknown),
            _ => None,
        }
    }

    fn dedup_key(&self) -> (String, RecordKind, Option<i64>, String, Option<u64>) {
        (
            self.patient_id.clone(),
            self.kind,
            self.day,
            self.code.clone(),
            self.value.map(f64::to_bits),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub duplicates: usize,
}

/// Records grouped per patient; each group ordered demographics first, then by
/// ascending day, ties kept in ingestion order. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordStore {
    patients: BTreeMap<String, Vec<RawRecord>>,
}

impl RecordStore {
    /// Builds a store from records in ingestion order, dropping duplicates.
    /// Returns the store and the number of duplicates dropped.
    pub fn from_records(records: impl IntoIterator<Item = RawRecord>) -> (Self, usize) {
        let mut seen = HashSet::new();
        let mut duplicates = 0;
        let mut patients: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
        for r in records {
            if !seen.insert(r.dedup_key()) {
                duplicates += 1;
                continue;
            }
            patients.entry(r.patient_id.clone()).or_default().push(r);
        }
        for events in patients.values_mut() {
            // stable sort keeps ingestion order for same-day events
            events.sort_by_key(|r| match r.kind {
                RecordKind::Demographic => (0, 0),
                _ => (1, r.day.unwrap_or(i64::MIN)),
            });
        }
        (RecordStore { patients }, duplicates)
    }

    /// Reads a JSON Lines record file. Malformed or invalid lines are skipped
    /// and logged with their line number.
    pub fn ingest(path: impl AsRef<Path>) -> Result<(Self, IngestReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut report = IngestReport::default();
        let mut records = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RawRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r));
            match parsed {
                Ok(r) => {
                    report.accepted += 1;
                    records.push(r);
                }
                Err(reason) => {
                    report.rejected += 1;
                    log::warn!("{}:{}: skipping record: {reason}", path.display(), lineno + 1);
                }
            }
        }
        let (store, duplicates) = Self::from_records(records);
        report.duplicates = duplicates;
        report.accepted -= duplicates;
        Ok((store, report))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        write_records(&mut out, self.patients.values().flatten()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn patient_timeline(&self, patient_id: &str) -> Result<&[RawRecord]> {
        self.patients
            .get(patient_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::PatientNotFound(patient_id.to_string()))
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.keys().map(String::as_str)
    }

    pub fn timelines(&self) -> impl Iterator<Item = (&str, &[RawRecord])> {
        self.patients.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_records(&self) -> usize {
        self.patients.values().map(Vec::len).sum()
    }
}

/// Writes records as JSON Lines in canonical field order.
pub fn write_records<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = &'a RawRecord>,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
