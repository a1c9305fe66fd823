//! Synthetic COVID-19 EHR cohorts with a planted, known risk model.
//!
//! Each patient gets a planted label first; features are then drawn
//! independently given that label. The exact posterior of such a model is
//! logistic in the Boolean features, so the truth file carries an exact
//! coefficient vector (per-feature log odds ratios) and bias.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{self, ConditionInfo, ConditionKind, Family, QuantityInfo};
use crate::cohort::Label;
use crate::error::{Error, Result};
use crate::records::{write_records, CodeSystem, EncounterType, Gender, RawRecord, ResultFlag};

/// Per-family probability that a patient has any measurement of a quantity.
/// `None` uses the class-specific rates implied by the catalog counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Missingness {
    pub vital: Option<f64>,
    pub lab: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedFeature {
    pub name: String,
    pub log_odds: f64,
}

/// A measurement taken on the last day before admission for every
/// hospitalized patient, drawn from a deteriorated distribution. Controls get
/// the same measurement near the anchor from the usual distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateSignal {
    pub quantity: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub target_prevalence: f64,
    pub seed: u64,
    pub signal_strength: f64,
    pub missingness: Missingness,
    pub noise: f64,
    /// Explicit log odds on named features; every other feature is then
    /// drawn identically for both classes.
    pub planted: Option<Vec<PlantedFeature>>,
    pub late_signal: Option<LateSignal>,
    pub u072_fraction: f64,
    pub text_only_fraction: f64,
    pub snomed_fraction: f64,
    pub ineligible_fraction: f64,
    pub prior_hospitalization_fraction: f64,
    pub age_unknown_fraction: f64,
    /// Fraction of admissions on days 0..=4 after diagnosis.
    pub early_admission_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 2000,
            target_prevalence: 0.125,
            seed: 7,
            signal_strength: 1.0,
            missingness: Missingness::default(),
            noise: 0.0,
            planted: None,
            late_signal: None,
            u072_fraction: 0.2,
            text_only_fraction: 0.1,
            snomed_fraction: 0.15,
            ineligible_fraction: 0.03,
            prior_hospitalization_fraction: 0.02,
            age_unknown_fraction: 0.01,
            early_admission_fraction: 0.8,
        }
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(Error::Config(format!(
                "target_prevalence must lie in (0, 1), got {}",
                self.target_prevalence
            )));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::Config("signal_strength must be a nonnegative number".into()));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("u072_fraction", self.u072_fraction),
            ("text_only_fraction", self.text_only_fraction),
            ("snomed_fraction", self.snomed_fraction),
            ("ineligible_fraction", self.ineligible_fraction),
            ("prior_hospitalization_fraction", self.prior_hospitalization_fraction),
            ("age_unknown_fraction", self.age_unknown_fraction),
            ("early_admission_fraction", self.early_admission_fraction),
        ] {
            check_fraction(name, v)?;
        }
        if self.u072_fraction + self.text_only_fraction > 1.0 {
            return Err(Error::Config("u072_fraction + text_only_fraction exceeds 1".into()));
        }
        if let Some(v) = self.missingness.vital {
            check_fraction("missingness.vital", v)?;
        }
        if let Some(v) = self.missingness.lab {
            check_fraction("missingness.lab", v)?;
        }
        self.planted_prevalence()?;
        if let Some(planted) = &self.planted {
            for p in planted {
                if p.name != catalog::MALE && !boolean_columns().iter().any(|(c, _)| *c == p.name) {
                    return Err(Error::Config(format!("unknown planted feature `{}`", p.name)));
                }
                if !p.log_odds.is_finite() {
                    return Err(Error::Config(format!("planted log odds for `{}` is not finite", p.name)));
                }
            }
        }
        if let Some(late) = &self.late_signal {
            if catalog::quantity(&late.quantity).is_none() {
                return Err(Error::Config(format!("unknown late-signal quantity `{}`", late.quantity)));
            }
            if !(0.0 < late.q1 && late.q1 <= late.median && late.median <= late.q3) {
                return Err(Error::Config("late signal needs 0 < q1 <= median <= q3".into()));
            }
        }
        Ok(())
    }

    /// Prevalence of the planted label such that flipping labels at rate
    /// `noise` yields the target prevalence.
    pub fn planted_prevalence(&self) -> Result<f64> {
        let (t, eta) = (self.target_prevalence, self.noise);
        if eta >= t.min(1.0 - t) {
            return Err(Error::Config(format!(
                "prevalence {t} is unachievable with noise {eta}"
            )));
        }
        Ok((t - eta) / (1.0 - 2.0 * eta))
    }
}

/// Boolean feature columns in catalog order, with the condition and whether
/// the column is the "present" half of a past/present split.
fn boolean_columns() -> Vec<(String, (&'static ConditionInfo, bool))> {
    let mut out = Vec::new();
    for c in catalog::CONDITIONS {
        match c.kind {
            ConditionKind::PastPresent => {
                out.push((format!("{}_past", c.name), (c, false)));
                out.push((format!("{}_present", c.name), (c, true)));
            }
            _ => out.push((c.name.to_string(), (c, false))),
        }
    }
    out
}

/// Class-conditional generation parameters, resolved once per config.
struct Profile {
    /// (column, condition, present half, P(x|H0), P(x|H1))
    booleans: Vec<(String, &'static ConditionInfo, bool, f64, f64)>,
    male: (f64, f64),
    age: (Vec<f64>, Vec<f64>),
    /// (quantity, H0 (mu, sigma), H1 (mu, sigma), P(observed|H0), P(observed|H1))
    quantities: Vec<(&'static QuantityInfo, (f64, f64), (f64, f64), f64, f64)>,
}

fn lognormal_params(median: f64, q1: f64, q3: f64) -> (f64, f64) {
    // quartiles of a normal sit at +-0.6745 sigma
    let sigma = ((q3 / q1).ln() / (2.0 * 0.674_489_750_196_081_7)).max(1e-3);
    (median.ln(), sigma)
}

impl Profile {
    fn new(cfg: &GeneratorConfig) -> Self {
        let s = cfg.signal_strength;
        let planted: Option<BTreeMap<&str, f64>> = cfg
            .planted
            .as_ref()
            .map(|p| p.iter().map(|f| (f.name.as_str(), f.log_odds)).collect());
        let shift = |p0: f64, p1: f64, name: &str| -> (f64, f64) {
            let delta = match &planted {
                Some(map) => map.get(name).map_or(0.0, |beta| s * beta),
                None => s * (logit(p1) - logit(p0)),
            };
            if delta == 0.0 {
                (p0, p0)
            } else {
                (p0, sigmoid(logit(p0) + delta))
            }
        };
        let booleans = boolean_columns()
            .into_iter()
            .map(|(col, (c, present))| {
                let (h0, h1) = if present { c.present_prevalence.unwrap() } else { c.prevalence };
                let (q0, q1) = shift(h0 / 100.0, h1 / 100.0, &col);
                (col, c, present, q0, q1)
            })
            .collect();
        let male = shift(catalog::MALE_PREVALENCE.0 / 100.0, catalog::MALE_PREVALENCE.1 / 100.0, catalog::MALE);

        let p0: Vec<f64> = catalog::AGE_BINS.iter().map(|b| b.3).collect();
        let p1: Vec<f64> = if planted.is_some() {
            p0.clone()
        } else {
            catalog::AGE_BINS.iter().map(|b| b.3.powf(1.0 - s) * b.4.powf(s)).collect()
        };
        let norm = |v: Vec<f64>| {
            let t: f64 = v.iter().sum();
            v.into_iter().map(|x| x / t).collect::<Vec<_>>()
        };

        let table_rates = planted.is_none();
        let quantities = catalog::QUANTITIES
            .iter()
            .map(|q| {
                let h0 = lognormal_params(q.h0.0, q.h0.1, q.h0.2);
                let h1_target = lognormal_params(q.h1.0, q.h1.1, q.h1.2);
                let h1 = if table_rates && q.class_specific {
                    (h0.0 + s * (h1_target.0 - h0.0), h0.1 + s * (h1_target.1 - h0.1))
                } else {
                    h0
                };
                let family = match q.family {
                    Family::Vital => cfg.missingness.vital,
                    Family::Lab => cfg.missingness.lab,
                };
                let rate = |count: f64, total: f64| (count / total).clamp(0.02, 0.95);
                let r0 = rate(q.counts.0, catalog::COHORT_H0);
                let r1 = if table_rates { rate(q.counts.1, catalog::COHORT_H1) } else { r0 };
                let (o0, o1) = match family {
                    Some(p) => (p, p),
                    None => (r0, r1),
                };
                (q, h0, h1, o0, o1)
            })
            .collect();

        Profile {
            booleans,
            male,
            age: (norm(p0), norm(p1)),
            quantities,
        }
    }

    /// Exact logistic posterior: log odds ratio per Boolean feature and age
    /// bin, with a bias that reproduces the planted prevalence.
    fn coefficients(&self, prevalence: f64) -> (f64, Vec<(String, f64)>) {
        let mut bias = logit(prevalence);
        let mut coefs = Vec::new();
        let mut binary = |name: &str, q0: f64, q1: f64, bias: &mut f64| {
            *bias += ((1.0 - q1) / (1.0 - q0)).ln();
            coefs.push((name.to_string(), logit(q1) - logit(q0)));
        };
        binary(catalog::MALE, self.male.0, self.male.1, &mut bias);
        for (col, _, _, q0, q1) in &self.booleans {
            binary(col, *q0, *q1, &mut bias);
        }
        for (i, bin) in catalog::AGE_BINS.iter().enumerate() {
            coefs.push((bin.0.to_string(), (self.age.1[i] / self.age.0[i]).ln()));
        }
        (bias, coefs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthHeader {
    pub seed: u64,
    pub n_patients: usize,
    pub target_prevalence: f64,
    pub planted_prevalence: f64,
    pub signal_strength: f64,
    pub noise: f64,
    pub bias: f64,
    /// Log odds ratio per feature column, in feature order.
    pub coefficients: Vec<(String, f64)>,
    /// Quantities whose value distribution differs by class.
    pub shifted_quantities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthPatient {
    pub patient_id: String,
    /// Planted label before encounter noise.
    pub label: Label,
    /// Admission offset of the materialized hospital stay, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission_offset: Option<i64>,
    /// Whether the encounter materialization flipped the planted label.
    pub flipped: bool,
    /// Whether the patient satisfies the cohort entry rules.
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub header: TruthHeader,
    pub patients: Vec<TruthPatient>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: TruthHeader,
}

impl Truth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            serde_json::to_writer(&mut out, &HeaderLine { header: self.header.clone() })?;
            out.write_all(b"\n")?;
            for p in &self.patients {
                serde_json::to_writer(&mut out, p)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::format(path, "missing header line"))?;
        let header: HeaderLine =
            serde_json::from_str(first).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let patients = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 2))))
            .collect::<Result<_>>()?;
        Ok(Truth {
            header: header.header,
            patients,
        })
    }

    pub fn observed_prevalence(&self) -> f64 {
        let h1 = self.patients.iter().filter(|p| p.admission_offset.is_some()).count();
        h1 as f64 / self.patients.len() as f64
    }
}

/// Features with a nonzero planted coefficient, by |coefficient| descending
/// (ties by name).
pub fn ground_truth_ranking(header: &TruthHeader) -> Vec<String> {
    let mut ranked: Vec<&(String, f64)> = header.coefficients.iter().filter(|(_, c)| *c != 0.0).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(n, _)| n.clone()).collect()
}

pub fn ground_truth_ranking_file(path: &Path) -> Result<Vec<String>> {
    Ok(ground_truth_ranking(&Truth::read(path)?.header))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationSummary {
    pub n_patients: usize,
    pub n_records: usize,
    pub observed_prevalence: f64,
}

/// Generates the record file and truth file.
pub fn generate_cohort(cfg: &GeneratorConfig, records_path: &Path, truth_path: &Path) -> Result<GenerationSummary> {
    let (records, truth) = generate_records(cfg)?;
    let file = File::create(records_path).map_err(|e| Error::io(records_path, e))?;
    let mut out = BufWriter::new(file);
    write_records(&mut out, &records)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(records_path, e))?;
    truth.write(truth_path)?;
    Ok(GenerationSummary {
        n_patients: truth.patients.len(),
        n_records: records.len(),
        observed_prevalence: truth.observed_prevalence(),
    })
}

/// In-memory generation; records are grouped per patient in patient order.
pub fn generate_records(cfg: &GeneratorConfig) -> Result<(Vec<RawRecord>, Truth)> {
    cfg.validate()?;
    let prevalence = cfg.planted_prevalence()?;
    let profile = Profile::new(cfg);
    let (bias, coefficients) = profile.coefficients(prevalence);
    let mut records = Vec::new();
    let mut patients = Vec::with_capacity(cfg.n_patients);
    for index in 0..cfg.n_patients {
        // counter-based stream: patient i's events depend only on (seed, i)
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let mut gen = PatientGen {
            cfg,
            profile: &profile,
            rng: &mut rng,
            pid: format!("P{index:07}"),
            out: Vec::new(),
        };
        patients.push(gen.run(prevalence));
        records.append(&mut gen.out);
    }
    let header = TruthHeader {
        seed: cfg.seed,
        n_patients: cfg.n_patients,
        target_prevalence: cfg.target_prevalence,
        planted_prevalence: prevalence,
        signal_strength: cfg.signal_strength,
        noise: cfg.noise,
        bias,
        coefficients,
        shifted_quantities: profile
            .quantities
            .iter()
            .filter(|(_, h0, h1, _, _)| h0 != h1)
            .map(|(q, ..)| q.name.to_string())
            .collect(),
    };
    Ok((records, Truth { header, patients }))
}

struct PatientGen<'a> {
    cfg: &'a GeneratorConfig,
    profile: &'a Profile,
    rng: &'a mut ChaCha8Rng,
    pid: String,
    out: Vec<RawRecord>,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

impl PatientGen<'_> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    fn run(&mut self, prevalence: f64) -> TruthPatient {
        let cfg = self.cfg;
        let planted_h1 = self.chance(prevalence);
        let flipped = self.chance(cfg.noise);
        let hospitalized = planted_h1 != flipped;
        let cls = usize::from(planted_h1);
        let anchor: i64 = self.rng.random_range(400..=800);

        self.demographics(cls);
        self.covid_evidence(anchor);
        let eligible = !self.chance(cfg.ineligible_fraction);
        self.covid_test(anchor, eligible);

        let admission = hospitalized.then(|| {
            if self.chance(cfg.early_admission_fraction) {
                self.rng.random_range(0..=4)
            } else {
                self.rng.random_range(5..=28)
            }
        });
        let prior = self.chance(cfg.prior_hospitalization_fraction);
        self.encounters(anchor, admission, prior);
        self.conditions(anchor, cls, admission);
        self.measurements(anchor, cls, admission);

        TruthPatient {
            patient_id: self.pid.clone(),
            label: if planted_h1 { Label::H1 } else { Label::H0 },
            admission_offset: admission,
            flipped,
            eligible: eligible && !prior,
        }
    }

    fn demographics(&mut self, cls: usize) {
        if !self.chance(self.cfg.age_unknown_fraction) {
            let weights = if cls == 1 { &self.profile.age.1 } else { &self.profile.age.0 };
            let bin = WeightedIndex::new(weights).expect("age weights are positive").sample(self.rng);
            let (_, lo, hi, _, _) = catalog::AGE_BINS[bin];
            let years = self.rng.random_range(lo..hi);
            self.out.push(RawRecord::age(&self.pid, years));
        }
        let p_male = if cls == 1 { self.profile.male.1 } else { self.profile.male.0 };
        let gender = if self.chance(p_male) { Gender::Male } else { Gender::Female };
        self.out.push(RawRecord::gender(&self.pid, gender));
    }

    fn covid_evidence(&mut self, anchor: i64) {
        // distractors that must never become the anchor
        if self.chance(0.05) {
            let day = anchor - self.rng.random_range(2..=20);
            self.out.push(RawRecord::diagnosis(&self.pid, day, CodeSystem::None, "", "screening for covid-19"));
        }
        if self.chance(0.03) {
            let day = anchor - self.rng.random_range(1..=10);
            self.out.push(RawRecord::diagnosis(&self.pid, day, CodeSystem::Snomed, "840546002", "exposure to sars-cov-2"));
        }
        let u = self.rng.random::<f64>();
        let record = if u < self.cfg.text_only_fraction {
            RawRecord::diagnosis(&self.pid, anchor, CodeSystem::None, "", "suspected covid-19 infection")
        } else if u < self.cfg.text_only_fraction + self.cfg.u072_fraction {
            RawRecord::diagnosis(&self.pid, anchor, CodeSystem::Icd10, catalog::COVID_SUSPECTED_ICD10, "covid-19, virus not identified")
        } else {
            RawRecord::diagnosis(&self.pid, anchor, CodeSystem::Icd10, catalog::COVID_CONFIRMED_ICD10, "covid-19, virus identified")
        };
        self.out.push(record);
        if self.chance(0.3) {
            let day = anchor + self.rng.random_range(1..=20);
            self.out.push(RawRecord::diagnosis(&self.pid, day, CodeSystem::Icd10, catalog::COVID_CONFIRMED_ICD10, "covid-19, virus identified"));
        }
    }

    fn covid_test(&mut self, anchor: i64, eligible: bool) {
        let loinc = catalog::COVID_TEST_LOINC;
        let text = "sars-cov-2 rna panel";
        if self.chance(0.1) {
            let day = anchor - self.rng.random_range(30..=90);
            self.out.push(RawRecord::test_result(&self.pid, day, loinc, text, ResultFlag::Negative));
        }
        if eligible {
            let day = anchor + self.rng.random_range(-3..=5);
            self.out.push(RawRecord::test_result(&self.pid, day, loinc, text, ResultFlag::Positive));
        } else if self.chance(0.5) {
            let offset = self.rng.random_range(29..=60);
            let day = if self.chance(0.5) { anchor + offset } else { anchor - offset };
            self.out.push(RawRecord::test_result(&self.pid, day, loinc, text, ResultFlag::Positive));
        }
    }

    fn encounters(&mut self, anchor: i64, admission: Option<i64>, prior: bool) {
        if prior {
            let day = anchor - self.rng.random_range(1..=28);
            let hours = self.rng.random_range(30.0..200.0_f64).round();
            self.out.push(RawRecord::encounter(&self.pid, day, EncounterType::Inpatient, hours));
        }
        if let Some(adm) = admission {
            let kind = match self.rng.random_range(0..10) {
                0..=6 => EncounterType::Inpatient,
                7 | 8 => EncounterType::HospitalEncounter,
                _ => EncounterType::HospitalEmergencyRoomVisit,
            };
            let hours = self.rng.random_range(30.0..500.0_f64).round();
            self.out.push(RawRecord::encounter(&self.pid, anchor + adm, kind, hours));
        }
        // non-qualifying stays: too short, or not a hospital encounter
        if self.chance(0.15) {
            let day = anchor + self.rng.random_range(0..=28);
            let hours = self.rng.random_range(2.0..=24.0_f64).round();
            self.out.push(RawRecord::encounter(&self.pid, day, EncounterType::HospitalEmergencyRoomVisit, hours));
        }
        if self.chance(0.2) {
            let day = anchor + self.rng.random_range(-28..=28);
            self.out.push(RawRecord::encounter(&self.pid, day, EncounterType::Other, 48.0));
        }
    }

    fn diagnosis_for(&mut self, c: &ConditionInfo, day: i64) -> RawRecord {
        let snomed = catalog::SNOMED_FOR_CONDITION.iter().find(|(n, _)| *n == c.name).map(|(_, id)| *id);
        let text = c.include[0];
        if let Some(id) = snomed.filter(|_| self.chance(self.cfg.snomed_fraction)) {
            let name = catalog::SNOMED_CONCEPTS.iter().find(|(cid, ..)| *cid == id).map(|(_, n, _)| *n).unwrap();
            RawRecord::diagnosis(&self.pid, day, CodeSystem::Snomed, id, name)
        } else if self.chance(0.05) {
            RawRecord::diagnosis(&self.pid, day, CodeSystem::None, "", text)
        } else {
            RawRecord::diagnosis(&self.pid, day, CodeSystem::Icd10, c.icd10[0], text)
        }
    }

    fn conditions(&mut self, anchor: i64, cls: usize, admission: Option<i64>) {
        let profile = self.profile;
        for (_, c, present, q0, q1) in &profile.booleans {
            let p = if cls == 1 { *q1 } else { *q0 };
            if self.chance(p) {
                let offset = match (c.kind, present) {
                    (ConditionKind::Chronic, _) => self.rng.random_range(-700..=-1),
                    (ConditionKind::PastPresent, false) => self.rng.random_range(-700..=-15),
                    _ => self.rng.random_range(-14..=-1),
                };
                let r = self.diagnosis_for(c, anchor + offset);
                self.out.push(r);
            } else if let Some(adm) = admission {
                // coded during the stay; the admission guard must hide it
                if self.chance(0.05) {
                    let offset = adm + self.rng.random_range(0..=3);
                    let r = self.diagnosis_for(c, anchor + offset);
                    self.out.push(r);
                }
            }
        }
    }

    fn value(&mut self, q: &QuantityInfo, (mu, sigma): (f64, f64)) -> f64 {
        let v = LogNormal::new(mu, sigma).expect("valid lognormal").sample(self.rng);
        let v = if q.unit == "%" { v.min(100.0) } else { v };
        round3(v)
    }

    fn measurements(&mut self, anchor: i64, cls: usize, admission: Option<i64>) {
        let profile = self.profile;
        for (q, h0, h1, o0, o1) in &profile.quantities {
            let params = if cls == 1 { *h1 } else { *h0 };
            let observed = self.chance(if cls == 1 { *o1 } else { *o0 });
            if !observed {
                continue;
            }
            let mut days: Vec<i64> = Vec::new();
            if self.chance(0.3) {
                days.push(self.rng.random_range(-365..=-15));
            }
            for _ in 0..self.rng.random_range(1..=2) {
                days.push(self.rng.random_range(-14..=3));
            }
            match admission {
                Some(adm) => {
                    // daily draws during the stay
                    let stay = self.rng.random_range(1..=5);
                    days.extend((0..stay).map(|d| adm + d));
                }
                None => {
                    if self.chance(0.2) {
                        days.push(self.rng.random_range(4..=28));
                    }
                }
            }
            for offset in days {
                let v = self.value(q, params);
                self.out.push(RawRecord::measurement(&self.pid, anchor + offset, q.loinc, q.name, v, q.unit));
            }
        }
        if let Some(late) = &self.cfg.late_signal {
            let q = catalog::quantity(&late.quantity).unwrap();
            let (offset, params) = match admission {
                Some(adm) => (adm - 1, lognormal_params(late.median, late.q1, late.q3)),
                None => (self.rng.random_range(-1..=3), lognormal_params(q.h0.0, q.h0.1, q.h0.2)),
            };
            let v = self.value(q, params);
            self.out.push(RawRecord::measurement(&self.pid, anchor + offset, q.loinc, q.name, v, q.unit));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_cohort, CodeHierarchy, CohortRules, PatternSet};
    use crate::records::RecordStore;

    fn cfg(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            ..Default::default()
        }
    }

    #[test]
    fn zero_patients_is_an_error() {
        assert!(matches!(generate_records(&cfg(0)), Err(Error::Config(_))));
    }

    #[test]
    fn unachievable_prevalence_is_an_error() {
        let c = GeneratorConfig {
            target_prevalence: 0.1,
            noise: 0.1,
            ..cfg(10)
        };
        assert!(generate_records(&c).is_err());
        let ok = GeneratorConfig { noise: 0.05, ..c };
        assert!(generate_records(&ok).is_ok());
    }

    #[test]
    fn invalid_fractions_rejected() {
        let c = GeneratorConfig {
            missingness: Missingness {
                vital: Some(1.5),
                lab: None,
            },
            ..cfg(10)
        };
        assert!(c.validate().is_err());
        let c = GeneratorConfig {
            planted: Some(vec![PlantedFeature {
                name: "not_a_feature".into(),
                log_odds: 1.0,
            }]),
            ..cfg(10)
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let run = |tag: &str| {
            let r = dir.path().join(format!("{tag}.jsonl"));
            let t = dir.path().join(format!("{tag}.truth"));
            generate_cohort(&cfg(200), &r, &t).unwrap();
            (fs::read(r).unwrap(), fs::read(t).unwrap())
        };
        assert_eq!(run("a"), run("b"));
    }

    #[test]
    fn patient_streams_do_not_depend_on_cohort_size() {
        let (small, _) = generate_records(&cfg(20)).unwrap();
        let (large, _) = generate_records(&cfg(40)).unwrap();
        assert_eq!(small[..], large[..small.len()]);
    }

    #[test]
    fn store_round_trip_has_all_patients() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path().join("r.jsonl");
        generate_cohort(&cfg(100), &r, &dir.path().join("t")).unwrap();
        let (store, report) = RecordStore::ingest(&r).unwrap();
        assert_eq!(store.n_patients(), 100);
        assert_eq!(report.rejected, 0);
    }

    #[test]
    fn prevalence_within_one_percent() {
        let (_, truth) = generate_records(&GeneratorConfig {
            n_patients: 10_000,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        assert!((truth.observed_prevalence() - 0.125).abs() < 0.01, "{}", truth.observed_prevalence());
    }

    #[test]
    fn admissions_concentrate_near_diagnosis() {
        let (_, truth) = generate_records(&cfg(4000)).unwrap();
        let offsets: Vec<i64> = truth.patients.iter().filter_map(|p| p.admission_offset).collect();
        let early = offsets.iter().filter(|&&o| o <= 4).count() as f64 / offsets.len() as f64;
        assert!(early >= 0.75, "{early}");
        assert!(offsets.iter().all(|o| (0..=28).contains(o)));
    }

    #[test]
    fn cohort_engine_recovers_labels() {
        let c = GeneratorConfig {
            n_patients: 3000,
            noise: 0.02,
            ..Default::default()
        };
        let (records, truth) = generate_records(&c).unwrap();
        let (store, _) = RecordStore::from_records(records);
        let cohort = build_cohort(
            &store,
            &PatternSet::covid_default(),
            &CodeHierarchy::builtin(),
            &CohortRules::default(),
        );
        let by_id = cohort.by_id();
        let eligible: Vec<&TruthPatient> = truth.patients.iter().filter(|p| p.eligible).collect();
        assert_eq!(cohort.entries.len(), eligible.len());
        let mut disagreements = 0;
        for p in &eligible {
            let entry = by_id[p.patient_id.as_str()];
            assert_eq!(entry.admission_offset, p.admission_offset);
            if entry.label != p.label {
                disagreements += 1;
            }
        }
        let rate = disagreements as f64 / eligible.len() as f64;
        assert!((rate - 0.02).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn coefficients_follow_catalog_direction() {
        let (_, truth) = generate_records(&cfg(1)).unwrap();
        let coef: BTreeMap<_, _> = truth.header.coefficients.iter().cloned().collect();
        let expected = logit(0.7278) - logit(0.3222);
        assert!((coef["hypertension"] - expected).abs() < 1e-12);
        assert!(coef["sore_throat"] < 0.0);
        assert_eq!(coef["obesity"], 0.0);
        assert!(coef["age_ge80"] > 0.0 && coef["age_20_30"] < 0.0);
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let c = GeneratorConfig {
            signal_strength: 0.0,
            ..cfg(1)
        };
        let (_, truth) = generate_records(&c).unwrap();
        assert!(truth.header.coefficients.iter().all(|(_, v)| v.abs() < 1e-12));
        assert!(ground_truth_ranking(&truth.header).is_empty());
        assert!(truth.header.shifted_quantities.is_empty());
    }

    #[test]
    fn planted_ranking() {
        let c = GeneratorConfig {
            planted: Some(vec![
                PlantedFeature { name: "male".into(), log_odds: 0.8 },
                PlantedFeature { name: "hypertension".into(), log_odds: 1.2 },
            ]),
            ..cfg(1)
        };
        let (_, truth) = generate_records(&c).unwrap();
        assert_eq!(ground_truth_ranking(&truth.header), vec!["hypertension", "male"]);
        let single = GeneratorConfig {
            planted: Some(vec![PlantedFeature { name: "pneumonia".into(), log_odds: 2.0 }]),
            ..cfg(1)
        };
        let (_, truth) = generate_records(&single).unwrap();
        assert_eq!(ground_truth_ranking(&truth.header), vec!["pneumonia"]);
    }

    #[test]
    fn ranking_sorts_by_magnitude() {
        let header = TruthHeader {
            seed: 0,
            n_patients: 1,
            target_prevalence: 0.1,
            planted_prevalence: 0.1,
            signal_strength: 1.0,
            noise: 0.0,
            bias: 0.0,
            coefficients: vec![("age_ge80".into(), 0.8), ("zero".into(), 0.0), ("hypertension".into(), -1.2)],
            shifted_quantities: vec![],
        };
        assert_eq!(ground_truth_ranking(&header), vec!["hypertension", "age_ge80"]);
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, truth) = generate_records(&cfg(30)).unwrap();
        let path = dir.path().join("truth.jsonl");
        truth.write(&path).unwrap();
        assert_eq!(Truth::read(&path).unwrap(), truth);
        assert!(ground_truth_ranking_file(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn posterior_is_exactly_logistic() {
        // Monte-Carlo check of P(H1 | hypertension) against the logistic model
        // restricted to that single planted feature.
        let c = GeneratorConfig {
            n_patients: 20_000,
            planted: Some(vec![PlantedFeature { name: "hypertension".into(), log_odds: 2.0 }]),
            ..Default::default()
        };
        let (records, truth) = generate_records(&c).unwrap();
        let (store, _) = RecordStore::from_records(records);
        let coef: BTreeMap<_, _> = truth.header.coefficients.iter().cloned().collect();
        let (mut n1, mut h1) = (0.0, 0.0);
        for p in &truth.patients {
            let timeline = store.patient_timeline(&p.patient_id).unwrap();
            let anchor = timeline
                .iter()
                .filter(|r| r.code.starts_with("U07") || r.text == "suspected covid-19 infection")
                .filter_map(|r| r.day)
                .min()
                .unwrap();
            // in-stay codings come after the anchor
            let has = timeline.iter().any(|r| {
                (r.code == "I10" || r.code == "59621000" || r.text == "hypertension") && r.day.unwrap() < anchor
            });
            if has {
                n1 += 1.0;
                h1 += f64::from(u8::from(p.label == Label::H1));
            }
        }
        let expected = sigmoid(truth.header.bias + coef["hypertension"]);
        assert!((h1 / n1 - expected).abs() < 0.02, "{} vs {expected}", h1 / n1);
    }
}
