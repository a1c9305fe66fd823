//! Interval features: time partitioning, per-interval aggregation with the
//! admission guard, scenario filtering, imputation and normalization.

mod container;
mod extract;
mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{self, ConditionKind};
use crate::cohort::Label;
use crate::error::{Error, Result};

pub use container::{read_features, write_features};
pub use extract::{
    aggregate_boolean, aggregate_observation, apply_scenario, extract_features, ConditionMatcher, ObservationAgg,
    PatientEvents, RawFeatures, RawMatrix,
};
pub use transform::{fit_transform, FusedFeatures, NormalizationStats, SplitConfig};

/// Number of intervals in every scheme.
pub const N_INTERVALS: usize = 17;

/// Aggregates computed per measured quantity and interval.
pub const AGGREGATES: [&str; 4] = ["last", "min", "max", "mean"];

/// Start of the period of interest relative to the anchor.
pub const PERIOD_START: i64 = -14;

/// Upper limit of follow-up; offsets beyond it are out of range.
pub const FOLLOW_UP_END: i64 = 29;

/// Contiguous half-open day ranges relative to the anchor. The first range
/// starts at minus infinity; `boundaries[i]` is the exclusive end of range i.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct IntervalScheme {
    boundaries: Vec<i64>,
}

impl TryFrom<Vec<i64>> for IntervalScheme {
    type Error = Error;

    fn try_from(boundaries: Vec<i64>) -> Result<Self> {
        IntervalScheme::new(boundaries)
    }
}

impl From<IntervalScheme> for Vec<i64> {
    fn from(s: IntervalScheme) -> Self {
        s.boundaries
    }
}

impl Default for IntervalScheme {
    fn default() -> Self {
        IntervalScheme::new(vec![-28, -14, -7, 0, 1, 2, 3, 4, 5, 6, 7, 10, 14, 18, 22, 26, FOLLOW_UP_END])
            .expect("default scheme is valid")
    }
}

pub fn default_interval_scheme() -> IntervalScheme {
    IntervalScheme::default()
}

impl IntervalScheme {
    pub fn new(boundaries: Vec<i64>) -> Result<Self> {
        if boundaries.len() != N_INTERVALS {
            return Err(Error::Config(format!(
                "interval scheme needs {N_INTERVALS} ranges, got {}",
                boundaries.len()
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("interval boundaries must increase strictly".into()));
        }
        if *boundaries.last().unwrap() != FOLLOW_UP_END {
            return Err(Error::Config(format!("last interval must end at {FOLLOW_UP_END}")));
        }
        Ok(IntervalScheme { boundaries })
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// `[start, end)` of interval `i`; `None` start means minus infinity.
    pub fn range(&self, i: usize) -> (Option<i64>, i64) {
        let start = (i > 0).then(|| self.boundaries[i - 1]);
        (start, self.boundaries[i])
    }

    /// Index of the interval containing `offset`, or `None` past the end.
    pub fn assign(&self, offset: i64) -> Option<usize> {
        let i = self.boundaries.partition_point(|&end| end <= offset);
        (i < self.boundaries.len()).then_some(i)
    }
}

pub fn assign_interval(offset: i64, scheme: &IntervalScheme) -> Option<usize> {
    scheme.assign(offset)
}

/// Which intervals and events may feed a patient's features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodOfInterest {
    pub admissible: Vec<bool>,
    /// Events on or after this offset are never admissible.
    pub guard: Option<i64>,
    pub upper: i64,
}

impl PeriodOfInterest {
    pub fn admits(&self, scheme: &IntervalScheme, offset: i64) -> bool {
        if self.guard.is_some_and(|g| offset >= g) {
            return false;
        }
        scheme.assign(offset).is_some_and(|i| self.admissible[i])
    }
}

pub fn period_of_interest(scheme: &IntervalScheme, label: Label, admission_offset: Option<i64>) -> Result<PeriodOfInterest> {
    let (upper, guard) = match (label, admission_offset) {
        (Label::H1, Some(adm)) => (adm, Some(adm)),
        (Label::H1, None) => {
            return Err(Error::InvalidInput("H1 patient without an admission offset".into()));
        }
        (Label::H0, _) => (FOLLOW_UP_END, None),
    };
    let admissible = (0..scheme.len())
        .map(|i| {
            let (start, end) = scheme.range(i);
            start.is_none_or(|s| s < upper) && end > PERIOD_START && PERIOD_START < upper
        })
        .collect();
    Ok(PeriodOfInterest { admissible, guard, upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    All,
    Gp,
    OneDayBefore,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::All, Scenario::Gp, Scenario::OneDayBefore];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::All => "all",
            Scenario::Gp => "gp",
            Scenario::OneDayBefore => "one-day-before",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scenario::All),
            "gp" => Ok(Scenario::Gp),
            "one-day-before" => Ok(Scenario::OneDayBefore),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    pub kind: ConditionKind,
    pub icd10: Vec<String>,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
    pub acute_care_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySpec {
    pub name: String,
    pub loinc: String,
    pub acute_care_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    pub name: String,
    pub lo: u32,
    pub hi: u32,
}

/// Feature layout. Tabular columns are `male`, the age one-hots (including
/// unknown), then the condition columns; temporal channels are
/// quantity-major with the four aggregates inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub conditions: Vec<ConditionSpec>,
    pub quantities: Vec<QuantitySpec>,
    pub age_bins: Vec<AgeBin>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        FeatureSpec {
            conditions: catalog::CONDITIONS
                .iter()
                .map(|c| ConditionSpec {
                    name: c.name.to_string(),
                    kind: c.kind,
                    icd10: strings(c.icd10),
                    include: strings(c.include),
                    exclude: strings(c.exclude),
                    acute_care_only: c.acute_care_only,
                })
                .collect(),
            quantities: catalog::QUANTITIES
                .iter()
                .map(|q| QuantitySpec {
                    name: q.name.to_string(),
                    loinc: q.loinc.to_string(),
                    acute_care_only: q.acute_care_only,
                })
                .collect(),
            age_bins: catalog::AGE_BINS
                .iter()
                .map(|b| AgeBin {
                    name: b.0.to_string(),
                    lo: b.1,
                    hi: b.2,
                })
                .collect(),
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for n in self.tabular_names().into_iter().chain(self.temporal_channel_names()) {
            if !names.insert(n.clone()) {
                return Err(Error::Config(format!("duplicate feature name `{n}`")));
            }
        }
        for c in &self.conditions {
            if c.icd10.is_empty() && c.include.is_empty() {
                return Err(Error::Config(format!("condition `{}` has no codes or patterns", c.name)));
            }
        }
        Ok(())
    }

    pub fn boolean_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.conditions {
            match c.kind {
                ConditionKind::PastPresent => {
                    out.push(format!("{}_past", c.name));
                    out.push(format!("{}_present", c.name));
                }
                _ => out.push(c.name.clone()),
            }
        }
        out
    }

    pub fn tabular_names(&self) -> Vec<String> {
        let mut out = vec![catalog::MALE.to_string()];
        out.extend(self.age_bins.iter().map(|b| b.name.clone()));
        out.push(catalog::AGE_UNKNOWN.to_string());
        out.extend(self.boolean_names());
        out
    }

    /// Channel names `quantity_aggregate`, in channel order.
    pub fn temporal_channel_names(&self) -> Vec<String> {
        self.quantities
            .iter()
            .flat_map(|q| AGGREGATES.iter().map(move |a| format!("{}_{a}", q.name)))
            .collect()
    }

    pub fn h(&self) -> usize {
        1 + self.age_bins.len() + 1 + self.boolean_names().len()
    }

    pub fn m(&self) -> usize {
        AGGREGATES.len() * self.quantities.len()
    }

    /// Early-fusion column names: channel-major temporal columns, then tabular.
    pub fn column_names(&self, t: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .temporal_channel_names()
            .into_iter()
            .flat_map(|c| (0..t).map(move |i| format!("{c}_t{i:02}")))
            .collect();
        out.extend(self.tabular_names());
        out
    }

    /// Drops the acute-care-only conditions and quantities.
    pub fn general_practice(&self) -> FeatureSpec {
        FeatureSpec {
            conditions: self.conditions.iter().filter(|c| !c.acute_care_only).cloned().collect(),
            quantities: self.quantities.iter().filter(|q| !q.acute_care_only).cloned().collect(),
            age_bins: self.age_bins.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: linear scan over explicit ranges.
    fn scan(offset: i64) -> Option<usize> {
        let ranges: [(i64, i64); 17] = [
            (i64::MIN, -28),
            (-28, -14),
            (-14, -7),
            (-7, 0),
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (6, 7),
            (7, 10),
            (10, 14),
            (14, 18),
            (18, 22),
            (22, 26),
            (26, 29),
        ];
        ranges.iter().position(|&(s, e)| s <= offset && offset < e)
    }

    #[test]
    fn default_scheme_layout() {
        let s = default_interval_scheme();
        assert_eq!(s.len(), 17);
        assert_eq!(assign_interval(-30, &s), Some(0));
        assert_eq!(assign_interval(0, &s), Some(4));
        assert_eq!(assign_interval(28, &s), Some(16));
        assert_eq!(assign_interval(9, &s), Some(11));
        assert_eq!(assign_interval(-7, &s), Some(3));
        assert_eq!(assign_interval(29, &s), None);
    }

    #[test]
    fn assign_matches_range_scan() {
        let s = default_interval_scheme();
        for offset in -1000..=40 {
            assert_eq!(s.assign(offset), scan(offset), "offset {offset}");
        }
    }

    #[test]
    fn scheme_validation() {
        assert!(IntervalScheme::new(vec![0, 1, 2]).is_err());
        let mut b: Vec<i64> = Vec::from(default_interval_scheme());
        b.swap(3, 4);
        assert!(IntervalScheme::new(b).is_err());
        let mut b: Vec<i64> = Vec::from(default_interval_scheme());
        *b.last_mut().unwrap() = 40;
        assert!(IntervalScheme::new(b).is_err());
    }

    #[test]
    fn period_of_interest_examples() {
        let s = default_interval_scheme();
        let poi = period_of_interest(&s, Label::H1, Some(6)).unwrap();
        assert!((-14..=5).all(|o| poi.admits(&s, o)));
        assert!(!poi.admits(&s, 6));
        assert!(!poi.admits(&s, -15));

        let poi = period_of_interest(&s, Label::H0, None).unwrap();
        assert!((-14..=28).all(|o| poi.admits(&s, o)));
        assert!(!poi.admits(&s, 29));

        let poi = period_of_interest(&s, Label::H1, Some(0)).unwrap();
        assert!((0..=28).all(|o| !poi.admits(&s, o)));
        assert!(poi.admits(&s, -1));

        assert!(period_of_interest(&s, Label::H1, None).is_err());
    }

    #[test]
    fn default_dimensions() {
        let spec = FeatureSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.h(), 77);
        assert_eq!(spec.m(), 88);
        assert_eq!(spec.column_names(17).len(), 88 * 17 + 77);
        let gp = spec.general_practice();
        assert_eq!(spec.h() - gp.h(), 16);
        assert_eq!(spec.m() - gp.m(), 8);
    }

    #[test]
    fn scenario_parsing() {
        for s in Scenario::ALL {
            assert_eq!(s.as_str().parse::<Scenario>().unwrap(), s);
        }
        assert!("icu".parse::<Scenario>().is_err());
    }
}
