//! Built-in catalog of clinical conditions and measured quantities.
//!
//! Prevalences (percent, non-hospitalized vs hospitalized) and lab medians /
//! quartiles reproduce the published COVID-19 cohort statistics; they drive the
//! synthetic generator and the default feature specification.

use serde::{Deserialize, Serialize};

/// How a condition's mentions are aggregated over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionKind {
    /// Comorbidity: any mention before admission counts.
    Chronic,
    /// Symptom or acute condition: only mentions inside the period of interest.
    Acute,
    /// Split into a "past" column (before the period of interest) and a
    /// "present" column (inside it).
    PastPresent,
}

pub struct ConditionInfo {
    pub name: &'static str,
    pub kind: ConditionKind,
    pub icd10: &'static [&'static str],
    pub include: &'static [&'static str],
    pub exclude: &'static [&'static str],
    /// Percent prevalence (H0, H1). For `PastPresent` this is the past column.
    pub prevalence: (f64, f64),
    /// Present-column prevalence for `PastPresent` conditions.
    pub present_prevalence: Option<(f64, f64)>,
    /// Dropped in the general-practitioner scenario.
    pub acute_care_only: bool,
}

const fn cond(
    name: &'static str,
    kind: ConditionKind,
    icd10: &'static [&'static str],
    include: &'static [&'static str],
    exclude: &'static [&'static str],
    prevalence: (f64, f64),
) -> ConditionInfo {
    ConditionInfo {
        name,
        kind,
        icd10,
        include,
        exclude,
        prevalence,
        present_prevalence: None,
        acute_care_only: false,
    }
}

const fn gp(mut c: ConditionInfo) -> ConditionInfo {
    c.acute_care_only = true;
    c
}

const fn split(mut c: ConditionInfo, present: (f64, f64)) -> ConditionInfo {
    c.present_prevalence = Some(present);
    c
}

use ConditionKind::{Acute, Chronic, PastPresent};

pub static CONDITIONS: &[ConditionInfo] = &[
    cond("hypertension", Chronic, &["I10"], &["hypertension", "hypertensive"], &["pulmonary"], (32.22, 72.78)),
    gp(cond("pneumonia", Acute, &["J18"], &["pneumonia"], &[], (5.03, 48.83))),
    cond("diabetes", Chronic, &["E11", "E10"], &["diabetes"], &[], (13.95, 43.40)),
    gp(cond("hypoxia", Acute, &["R09.01"], &["hypoxia"], &[], (1.76, 38.42))),
    cond("dyspnea", Acute, &["R06.0"], &["dyspnea", "shortness of breath"], &[], (10.05, 36.40)),
    gp(cond("heart_disease", Chronic, &["I51.9"], &["heart disease"], &["coronary"], (5.25, 33.76))),
    gp(cond("hypoxemia", Acute, &["R09.02"], &["hypoxemia"], &[], (1.31, 31.36))),
    cond("nicotine_dependence", Chronic, &["F17"], &["nicotine"], &[], (14.63, 31.04)),
    cond("chronic_kidney_disease", Chronic, &["N18"], &["chronic kidney"], &[], (5.29, 27.17)),
    cond("cough", Acute, &["R05.9"], &["cough"], &["dry", "productive", "upper respiratory"], (25.70, 24.21)),
    cond("coronary_heart_disease", Chronic, &["I25"], &["coronary"], &[], (6.15, 23.90)),
    cond("cancer", Chronic, &["C80"], &["cancer", "malignant"], &[], (10.36, 23.57)),
    cond("arrhythmia", Chronic, &["I49"], &["arrhythmia"], &[], (3.44, 22.78)),
    cond("chronic_obstructive_lung_disease", Chronic, &["J44"], &["obstructive"], &[], (5.01, 22.49)),
    gp(cond("renal_failure_syndrome", Acute, &["N19"], &["renal failure"], &["acute"], (1.60, 20.40))),
    cond("asthma", Chronic, &["J45"], &["asthma"], &[], (12.96, 19.46)),
    cond("fever", Acute, &["R50"], &["fever"], &[], (12.32, 18.89)),
    cond("fatigue", Acute, &["R53"], &["fatigue"], &[], (7.13, 17.94)),
    split(
        cond("cerebrovascular_disease", PastPresent, &["I67"], &["cerebrovascular disease"], &[], (4.63, 17.65)),
        (0.66, 4.76),
    ),
    cond("hyperlipidemia", Chronic, &["E78"], &["hyperlipidemia"], &[], (5.16, 17.13)),
    gp(cond("acute_renal_failure_syndrome", Acute, &["N17"], &["acute renal failure", "acute kidney"], &[], (1.31, 17.08))),
    cond("chest_pain", Acute, &["R07"], &["chest pain"], &[], (5.01, 14.52)),
    cond("tachycardia", Acute, &["R00.0"], &["tachycardia"], &[], (1.92, 13.22)),
    gp(cond("acute_disease_of_cardiovascular_system", Acute, &["I24"], &["acute disease of cardiovascular"], &[], (1.60, 11.13))),
    cond("anemia", Chronic, &["D64"], &["anemia"], &[], (1.79, 10.16)),
    cond("heart_failure", Chronic, &["I50"], &["heart failure"], &[], (1.07, 9.43)),
    cond("atrial_fibrillation", Chronic, &["I48"], &["atrial fibrillation"], &[], (1.30, 8.98)),
    cond("nausea", Acute, &["R11.0"], &["nausea"], &[], (4.14, 8.81)),
    cond("diarrhea", Acute, &["R19.7"], &["diarrhea"], &[], (3.54, 8.78)),
    cond("hypokalemia", Acute, &["E87.6"], &["hypokalemia"], &[], (1.06, 8.56)),
    split(
        cond("cerebrovascular_accident", PastPresent, &["I63"], &["cerebrovascular accident", "stroke"], &[], (1.80, 8.47)),
        (0.33, 2.99),
    ),
    cond("chronic_liver_disease", Chronic, &["K76"], &["chronic liver"], &[], (3.83, 7.96)),
    gp(cond("sepsis", Acute, &["A41"], &["sepsis"], &["shock"], (0.67, 7.21))),
    cond("vomiting", Acute, &["R11.1"], &["vomiting"], &[], (1.88, 6.41)),
    cond("abdominal_pain", Acute, &["R10"], &["abdominal pain"], &[], (2.41, 6.06)),
    cond("gastroesophageal_reflux", Chronic, &["K21"], &["reflux"], &[], (2.12, 5.94)),
    gp(cond("embolism", Acute, &["I74"], &["embolism"], &["pulmonary"], (0.56, 4.71))),
    cond("dementia", Chronic, &["F03"], &["dementia"], &[], (0.54, 4.64)),
    cond("headache", Acute, &["R51"], &["headache"], &[], (7.15, 4.43)),
    cond("dizziness", Acute, &["R42"], &["dizziness"], &[], (1.32, 3.31)),
    gp(cond("acute_respiratory_distress_syndrome", Acute, &["J80"], &["respiratory distress"], &[], (0.54, 3.19))),
    cond("syncope", Acute, &["R55"], &["syncope"], &[], (0.54, 3.07)),
    gp(cond("pulmonary_embolism", Acute, &["I26"], &["pulmonary embolism"], &[], (0.28, 2.68))),
    cond("myalgia", Acute, &["M79.1"], &["myalgia"], &["fibromyalgia"], (3.43, 2.64)),
    cond("fibromyalgia", Chronic, &["M79.7"], &["fibromyalgia"], &[], (1.69, 2.62)),
    cond("pregnancy", Acute, &["Z33"], &["pregnan"], &[], (2.26, 2.49)),
    cond("delirium", Acute, &["R41.0"], &["delirium"], &[], (0.14, 2.35)),
    cond("seizure", Acute, &["R56"], &["seizure"], &[], (0.42, 2.34)),
    cond("cirrhosis", Chronic, &["K74"], &["cirrhosis"], &[], (0.62, 2.27)),
    gp(cond("septic_shock", Acute, &["R65.21"], &["septic shock"], &[], (0.17, 1.32))),
    cond("sore_throat", Acute, &["J02"], &["sore throat"], &[], (3.97, 1.04)),
    cond("pulmonary_hypertension", Chronic, &["I27"], &["pulmonary hypertension"], &[], (0.14, 0.86)),
    cond("angina_pectoris", Chronic, &["I20"], &["angina"], &[], (0.17, 0.72)),
    cond("hiv", Chronic, &["B20"], &["hiv", "human immunodeficiency"], &[], (0.38, 0.66)),
    cond("rhinorrhea", Acute, &["J34.89"], &["rhinorrhea"], &[], (1.35, 0.52)),
    cond("viral_uri_with_cough", Acute, &["J06.9"], &["upper respiratory"], &[], (0.85, 0.51)),
    cond("hemoptysis", Acute, &["R04.2"], &["hemoptysis"], &[], (0.11, 0.49)),
    gp(cond("pneumothorax", Acute, &["J93"], &["pneumothorax"], &[], (0.09, 0.36))),
    cond("dry_cough", Acute, &["R05.3"], &["dry cough"], &[], (0.25, 0.24)),
    gp(cond("thromboembolic_disorder", Acute, &["I82"], &["thromboembolic", "thrombosis"], &[], (0.05, 0.22))),
    cond("productive_cough", Acute, &["R05.8"], &["productive cough"], &[], (0.18, 0.21)),
    gp(cond("myocarditis", Acute, &["I40"], &["myocarditis"], &[], (0.02, 0.16))),
    gp(cond("acute_hepatic_failure", Acute, &["K72.0"], &["hepatic failure"], &[], (0.01, 0.07))),
    cond("obesity", Chronic, &["E66"], &["obesity"], &[], (15.0, 15.0)),
];

/// SNOMED concepts the generator may emit instead of ICD-10 codes, with the
/// child-to-parent edges of the default hierarchy.
pub static SNOMED_CONCEPTS: &[(&str, &str, Option<&str>)] = &[
    // (concept id, name, parent id)
    ("404684003", "clinical finding", None),
    ("64572001", "disease", Some("404684003")),
    ("233604007", "pneumonia", Some("64572001")),
    ("75570004", "viral pneumonia", Some("233604007")),
    ("882784691000119100", "pneumonia caused by sars-cov-2", Some("75570004")),
    ("38341003", "hypertensive disorder", Some("64572001")),
    ("59621000", "essential hypertension", Some("38341003")),
    ("70995007", "pulmonary hypertension", Some("64572001")),
    ("73211009", "diabetes mellitus", Some("64572001")),
    ("44054006", "type 2 diabetes mellitus", Some("73211009")),
    ("195967001", "asthma", Some("64572001")),
    ("49727002", "cough", Some("404684003")),
    ("186747009", "coronavirus infection", Some("64572001")),
    ("840539006", "disease caused by sars-cov-2", Some("186747009")),
    ("840544004", "suspected disease caused by sars-cov-2", Some("840539006")),
    ("840546002", "exposure to sars-cov-2", Some("186747009")),
];

/// Condition name -> SNOMED concept the generator can use for it.
pub static SNOMED_FOR_CONDITION: &[(&str, &str)] = &[
    ("pneumonia", "75570004"),
    ("hypertension", "59621000"),
    ("diabetes", "44054006"),
    ("asthma", "195967001"),
    ("cough", "49727002"),
    ("pulmonary_hypertension", "70995007"),
];

/// Measurement family; controls generator missingness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Vital,
    Lab,
}

pub struct QuantityInfo {
    pub name: &'static str,
    pub loinc: &'static str,
    pub unit: &'static str,
    pub family: Family,
    /// (median, q1, q3) in non-hospitalized patients.
    pub h0: (f64, f64, f64),
    /// (median, q1, q3) in hospitalized patients.
    pub h1: (f64, f64, f64),
    /// Measurement counts (H0, H1) in a cohort of 97082 / 13914 patients.
    pub counts: (f64, f64),
    /// Whether the generator draws class-specific values (otherwise H0 values
    /// are used for both classes).
    pub class_specific: bool,
    pub acute_care_only: bool,
}

const fn qty(
    name: &'static str,
    loinc: &'static str,
    unit: &'static str,
    family: Family,
    h0: (f64, f64, f64),
    h1: (f64, f64, f64),
    counts: (f64, f64),
) -> QuantityInfo {
    QuantityInfo {
        name,
        loinc,
        unit,
        family,
        h0,
        h1,
        counts,
        class_specific: false,
        acute_care_only: false,
    }
}

const fn shifted(mut q: QuantityInfo) -> QuantityInfo {
    q.class_specific = true;
    q
}

const fn gp_lab(mut q: QuantityInfo) -> QuantityInfo {
    q.acute_care_only = true;
    q
}

use Family::{Lab, Vital};

pub const COHORT_H0: f64 = 97082.0;
pub const COHORT_H1: f64 = 13914.0;

pub static QUANTITIES: &[QuantityInfo] = &[
    qty("HR", "8867-4", "beats/min", Vital, (85.0, 75.0, 96.0), (84.0, 73.0, 95.0), (49366.0, 14469.0)),
    qty("SBP", "8480-6", "mmHg", Vital, (130.0, 118.0, 141.0), (129.0, 115.0, 143.0), (46500.0, 14070.0)),
    qty("DBP", "8462-4", "mmHg", Vital, (78.0, 69.0, 85.0), (71.0, 63.0, 81.0), (46494.0, 14064.0)),
    qty("T", "8310-5", "Cel", Vital, (36.9, 36.7, 37.2), (37.0, 36.7, 37.4), (50027.0, 13696.0)),
    qty("BMI", "39156-5", "kg/m2", Vital, (29.12, 24.70, 34.45), (30.52, 25.93, 36.50), (40873.0, 12993.0)),
    qty("RR", "9279-1", "breaths/min", Vital, (18.0, 16.0, 19.0), (18.0, 18.0, 20.0), (39226.0, 12809.0)),
    qty("Hb", "718-7", "g/dL", Lab, (13.2, 11.9, 14.4), (12.9, 11.5, 14.2), (12417.0, 11053.0)),
    qty("Crea", "2160-0", "mg/dL", Lab, (0.95, 0.80, 1.23), (1.05, 0.80, 1.46), (12369.0, 10898.0)),
    shifted(qty("PLT", "777-3", "10*3/uL", Lab, (210.0, 165.0, 262.0), (200.0, 157.0, 256.0), (11658.0, 10662.0))),
    shifted(qty("WBC", "6690-2", "10*3/uL", Lab, (5.83, 4.50, 7.81), (6.31, 4.74, 8.54), (11566.0, 10661.0))),
    qty("K", "2823-3", "mmol/L", Lab, (4.0, 3.7, 4.3), (3.9, 3.6, 4.3), (11831.0, 10481.0)),
    qty("BUN", "3094-0", "mg/dL", Lab, (15.0, 11.0, 21.0), (17.0, 12.0, 27.0), (11682.0, 10327.0)),
    shifted(qty("ALB", "1751-7", "g/dL", Lab, (3.8, 3.3, 4.2), (3.6, 3.2, 4.0), (10794.0, 10075.0))),
    shifted(qty("AST", "1920-8", "U/L", Lab, (30.0, 21.0, 45.0), (34.0, 24.0, 50.0), (10416.0, 9683.0))),
    shifted(qty("SpO2", "59408-5", "%", Vital, (98.0, 96.0, 99.0), (96.0, 94.0, 98.0), (13798.0, 7131.0))),
    qty("Na", "2951-2", "mmol/L", Lab, (138.0, 135.0, 140.0), (137.0, 134.0, 139.0), (5944.0, 6414.0)),
    qty("Glucose", "2345-7", "mg/dL", Lab, (114.0, 97.0, 156.0), (122.0, 103.25, 167.0), (7815.0, 5286.0)),
    shifted(qty("CRP", "1988-5", "mg/dL", Lab, (5.30, 1.56, 12.60), (7.10, 3.10, 13.30), (3075.0, 4894.0))),
    shifted(qty("Ferritin", "2276-4", "ng/mL", Lab, (386.0, 160.0, 917.0), (475.0, 213.0, 964.5), (2528.0, 4143.0))),
    shifted(qty("LDH", "2532-0", "U/L", Lab, (318.0, 223.0, 487.5), (335.0, 244.0, 477.25), (2227.0, 3888.0))),
    gp_lab(qty("D-dimer", "48065-7", "ng/mL", Lab, (726.5, 410.0, 1539.25), (870.0, 520.0, 1678.5), (2120.0, 3296.0))),
    gp_lab(qty("hsTnT", "67151-1", "ng/mL", Lab, (0.03, 0.01, 0.07), (0.03, 0.01, 0.06), (2019.0, 2452.0))),
];

/// Age bins (label, lower inclusive, upper exclusive) and Table-style percent
/// distribution per class. The unknown-age bin is appended separately.
pub static AGE_BINS: &[(&str, u32, u32, f64, f64)] = &[
    ("age_lt10", 0, 10, 2.65, 0.27),
    ("age_10_20", 10, 20, 7.94, 0.83),
    ("age_20_30", 20, 30, 17.05, 3.62),
    ("age_30_40", 30, 40, 16.87, 6.08),
    ("age_40_50", 40, 50, 15.61, 10.09),
    ("age_50_60", 50, 60, 16.75, 17.50),
    ("age_60_70", 60, 70, 13.03, 23.45),
    ("age_70_80", 70, 80, 6.85, 20.60),
    ("age_ge80", 80, 100, 3.25, 17.55),
];

pub const AGE_UNKNOWN: &str = "age_unknown";
pub const MALE: &str = "male";
/// Percent male (H0, H1).
pub const MALE_PREVALENCE: (f64, f64) = (43.82, 49.55);

pub const COVID_TEST_LOINC: &str = "94500-6";
pub const COVID_CONFIRMED_ICD10: &str = "U07.1";
pub const COVID_SUSPECTED_ICD10: &str = "U07.2";

pub fn condition(name: &str) -> Option<&'static ConditionInfo> {
    CONDITIONS.iter().find(|c| c.name == name)
}

pub fn quantity(name: &str) -> Option<&'static QuantityInfo> {
    QUANTITIES.iter().find(|q| q.name == name)
}

/// Boolean column names produced by a condition (two for past/present splits).
pub fn condition_columns(c: &ConditionInfo) -> Vec<String> {
    match c.kind {
        ConditionKind::PastPresent => vec![format!("{}_past", c.name), format!("{}_present", c.name)],
        _ => vec![c.name.to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_counts_match_published_dimensions() {
        let booleans: usize = CONDITIONS.iter().map(|c| condition_columns(c).len()).sum();
        assert_eq!(booleans, 66);
        assert_eq!(booleans + AGE_BINS.len() + 1 + 1, 77);
        assert_eq!(QUANTITIES.len() * 4, 88);
    }

    #[test]
    fn icd10_codes_do_not_prefix_each_other() {
        let codes: Vec<(&str, &str)> = CONDITIONS
            .iter()
            .flat_map(|c| c.icd10.iter().map(move |code| (c.name, *code)))
            .collect();
        for (a_name, a) in &codes {
            for (b_name, b) in &codes {
                if a_name != b_name {
                    assert!(!b.starts_with(a), "{a} ({a_name}) prefixes {b} ({b_name})");
                }
            }
        }
    }

    #[test]
    fn age_distributions_sum_to_100() {
        let h0: f64 = AGE_BINS.iter().map(|b| b.3).sum();
        let h1: f64 = AGE_BINS.iter().map(|b| b.4).sum();
        assert!((h0 - 100.0).abs() < 0.05, "{h0}");
        assert!((h1 - 100.0).abs() < 0.05, "{h1}");
    }

    #[test]
    fn general_practice_drop_list() {
        let dropped: Vec<_> = CONDITIONS.iter().filter(|c| c.acute_care_only).map(|c| c.name).collect();
        assert_eq!(dropped.len(), 16);
        let labs: Vec<_> = QUANTITIES.iter().filter(|q| q.acute_care_only).map(|q| q.name).collect();
        assert_eq!(labs, vec!["D-dimer", "hsTnT"]);
    }
}
