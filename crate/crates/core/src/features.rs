//! Per-admission predictors.
//!
//! Every extractor is a pure function of one admission and the member's own
//! records. Window features (medications, procedures, comorbidities) only look
//! at claims inside the admission span; history features only count events
//! strictly before the admission start.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

use crate::claims::{
    DemographicRecord, Ethnicity, Gender, MedicalClaim, PharmacyClaim, SchemeType,
};
use crate::codes::{CodeMappingConfig, Comorbidity};
use crate::episodes::{AdmissionSet, Episode, LabeledAdmission};
use crate::icd9::BodySystem;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no demographics record for user `{0}`")]
    MissingDemographics(String),
    #[error("features file: {0}")]
    Csv(#[from] csv::Error),
    #[error("features file line {line}: {message}")]
    BadRow { line: u64, message: String },
}

/// Generational age bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeGroup {
    /// [0, 20)
    Touch,
    /// [20, 37)
    Millennials,
    /// [37, 49)
    GenX,
    /// [49, 68)
    Boomers,
    /// 68 and over
    Swing,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 5] = [
        AgeGroup::Touch,
        AgeGroup::Millennials,
        AgeGroup::GenX,
        AgeGroup::Boomers,
        AgeGroup::Swing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Touch => "Touch",
            AgeGroup::Millennials => "Millennials",
            AgeGroup::GenX => "GenX",
            AgeGroup::Boomers => "Boomers",
            AgeGroup::Swing => "Swing",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeGroup::ALL
            .iter()
            .copied()
            .find(|g| g.label() == s)
            .ok_or_else(|| format!("unknown age group `{s}`"))
    }
}

pub fn age_group(age: u32) -> AgeGroup {
    match age {
        0..=19 => AgeGroup::Touch,
        20..=36 => AgeGroup::Millennials,
        37..=48 => AgeGroup::GenX,
        49..=67 => AgeGroup::Boomers,
        _ => AgeGroup::Swing,
    }
}

/// The nine predictor families of one admission.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdmissionFeatures {
    pub comorbidities: BTreeSet<Comorbidity>,
    pub gender: Gender,
    pub age_group: AgeGroup,
    pub ethnicity: Ethnicity,
    pub scheme_type: SchemeType,
    pub los_days: u32,
    /// Two-digit NDC prefixes, 0..=99.
    pub medication_categories: BTreeSet<u8>,
    pub n_prev_admissions: u32,
    pub n_prev_ed_admissions: u32,
    pub admitting_diagnosis: BodySystem,
    pub n_prev_hospital_visits: u32,
    /// CCS procedure category ids.
    pub procedure_categories: BTreeSet<u16>,
}

/// Features plus identity and target of one retained admission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user_id: String,
    pub admission_id: String,
    pub features: AdmissionFeatures,
    pub readmitted_within_30d: bool,
}

/// Comorbidities coded on the secondary diagnoses of the admission's claims.
/// Primary diagnoses are not consulted.
pub fn extract_comorbidities(
    episode: &Episode,
    config: &CodeMappingConfig,
) -> BTreeSet<Comorbidity> {
    episode
        .claims
        .iter()
        .flat_map(|c| c.other_diagnoses.iter())
        .filter_map(|code| config.comorbidity_map.lookup(code))
        .flat_map(|set| set.iter().copied())
        .collect()
}

/// Inclusive day count of the admission span.
pub fn length_of_stay(episode: &Episode) -> u32 {
    ((episode.end - episode.start).num_days() + 1) as u32
}

pub fn extract_medications(episode: &Episode, pharmacy: &[PharmacyClaim]) -> BTreeSet<u8> {
    pharmacy
        .iter()
        .filter(|p| p.user_id == episode.user_id && within(p.service_date, episode))
        .map(PharmacyClaim::category)
        .collect()
}

fn within(day: NaiveDate, episode: &Episode) -> bool {
    episode.start <= day && day <= episode.end
}

/// Retained admissions that started before this one. Removed readmissions
/// are not in `retained` and so never count.
pub fn count_previous_admissions(episode: &Episode, retained: &[LabeledAdmission]) -> u32 {
    retained
        .iter()
        .filter(|a| a.user_id() == episode.user_id && a.start() < episode.start)
        .count() as u32
}

pub fn count_previous_ed_admissions(episode: &Episode, retained: &[LabeledAdmission]) -> u32 {
    retained
        .iter()
        .filter(|a| {
            a.user_id() == episode.user_id && a.start() < episode.start && a.is_ed_admission
        })
        .count() as u32
}

/// Body system of the primary diagnosis billed on the admission day.
pub fn admitting_diagnosis(episode: &Episode) -> BodySystem {
    episode
        .claims
        .iter()
        .filter(|c| c.service_start == episode.start)
        .min_by(|a, b| (a.service_end, &a.claim_id).cmp(&(b.service_end, &b.claim_id)))
        .map_or(BodySystem::Others, |c| {
            BodySystem::of_code(&c.primary_diagnosis)
        })
}

/// Hospital-visit claims (not episodes) that ended before the admission start.
pub fn count_previous_hospital_visits(
    episode: &Episode,
    medical: &[MedicalClaim],
    config: &CodeMappingConfig,
) -> u32 {
    medical
        .iter()
        .filter(|c| {
            c.user_id == episode.user_id
                && c.service_end < episode.start
                && config.hospital_visit_cpt.contains(&c.cpt_code)
        })
        .count() as u32
}

pub fn extract_procedures(episode: &Episode, config: &CodeMappingConfig) -> BTreeSet<u16> {
    episode
        .claims
        .iter()
        .filter(|c| within(c.service_start, episode))
        .filter_map(|c| config.ccs_map.lookup(&c.cpt_code))
        .collect()
}

/// A member's records as seen by the extractors.
#[derive(Debug, Clone, Copy)]
pub struct MemberRecords<'a> {
    pub demographics: &'a DemographicRecord,
    pub medical: &'a [MedicalClaim],
    pub pharmacy: &'a [PharmacyClaim],
    pub admissions: &'a [LabeledAdmission],
}

pub fn extract_all(
    admission: &LabeledAdmission,
    member: &MemberRecords<'_>,
    config: &CodeMappingConfig,
) -> AdmissionFeatures {
    let episode = &admission.episode;
    let demo = member.demographics;
    AdmissionFeatures {
        comorbidities: extract_comorbidities(episode, config),
        gender: demo.gender,
        age_group: age_group(demo.age),
        ethnicity: demo.ethnicity,
        scheme_type: demo.scheme_type,
        los_days: length_of_stay(episode),
        medication_categories: extract_medications(episode, member.pharmacy),
        n_prev_admissions: count_previous_admissions(episode, member.admissions),
        n_prev_ed_admissions: count_previous_ed_admissions(episode, member.admissions),
        admitting_diagnosis: admitting_diagnosis(episode),
        n_prev_hospital_visits: count_previous_hospital_visits(episode, member.medical, config),
        procedure_categories: extract_procedures(episode, config),
    }
}

fn group_by_user<'a, T>(
    items: &'a [T],
    key: impl Fn(&'a T) -> &'a str,
) -> BTreeMap<&'a str, Vec<&'a T>> {
    let mut map: BTreeMap<&str, Vec<&T>> = BTreeMap::new();
    for item in items {
        map.entry(key(item)).or_default().push(item);
    }
    map
}

/// Extracts features for every retained admission, in admission order.
pub fn build_feature_rows(
    set: &AdmissionSet,
    medical: &[MedicalClaim],
    pharmacy: &[PharmacyClaim],
    demographics: &[DemographicRecord],
    config: &CodeMappingConfig,
) -> Result<Vec<FeatureRow>, FeatureError> {
    let demo: BTreeMap<&str, &DemographicRecord> = demographics
        .iter()
        .map(|d| (d.user_id.as_str(), d))
        .collect();
    let medical_by_user = group_by_user(medical, |c| c.user_id.as_str());
    let pharmacy_by_user = group_by_user(pharmacy, |c| c.user_id.as_str());

    let mut rows = Vec::with_capacity(set.admissions.len());
    let mut start = 0;
    while start < set.admissions.len() {
        let user = set.admissions[start].user_id();
        let end = start
            + set.admissions[start..]
                .iter()
                .take_while(|a| a.user_id() == user)
                .count();
        let member_admissions = &set.admissions[start..end];
        let demographics = *demo
            .get(user)
            .ok_or_else(|| FeatureError::MissingDemographics(user.to_string()))?;
        let medical: Vec<MedicalClaim> = medical_by_user
            .get(user)
            .map(|v| v.iter().map(|c| (*c).clone()).collect())
            .unwrap_or_default();
        let pharmacy: Vec<PharmacyClaim> = pharmacy_by_user
            .get(user)
            .map(|v| v.iter().map(|c| (*c).clone()).collect())
            .unwrap_or_default();
        let member = MemberRecords {
            demographics,
            medical: &medical,
            pharmacy: &pharmacy,
            admissions: member_admissions,
        };
        for admission in member_admissions {
            rows.push(FeatureRow {
                user_id: user.to_string(),
                admission_id: admission.admission_id.clone(),
                features: extract_all(admission, &member, config),
                readmitted_within_30d: admission.readmitted_within_30d,
            });
        }
        start = end;
    }
    Ok(rows)
}

pub const FEATURES_HEADER: [&str; 15] = [
    "user_id",
    "admission_id",
    "comorbidities",
    "gender",
    "age_group",
    "ethnicity",
    "scheme_type",
    "los_days",
    "medication_categories",
    "n_prev_admissions",
    "n_prev_ed_admissions",
    "admitting_diagnosis",
    "n_prev_hospital_visits",
    "procedure_categories",
    "readmitted_within_30d",
];

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join(";")
}

pub fn write_features<W: Write>(sink: W, rows: &[FeatureRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(FEATURES_HEADER)?;
    for r in rows {
        let f = &r.features;
        out.write_record([
            r.user_id.clone(),
            r.admission_id.clone(),
            join(&f.comorbidities, |c| c.name().to_string()),
            f.gender.label().to_string(),
            f.age_group.label().to_string(),
            f.ethnicity.label().to_string(),
            f.scheme_type.label().to_string(),
            f.los_days.to_string(),
            join(&f.medication_categories, |m| format!("{m:02}")),
            f.n_prev_admissions.to_string(),
            f.n_prev_ed_admissions.to_string(),
            f.admitting_diagnosis.key().to_string(),
            f.n_prev_hospital_visits.to_string(),
            join(&f.procedure_categories, |p| p.to_string()),
            (if r.readmitted_within_30d { "1" } else { "0" }).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn split_set<T: Ord>(
    field: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<BTreeSet<T>, String> {
    field
        .split(';')
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

pub fn read_features<R: Read>(source: R) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != FEATURES_HEADER {
        return Err(FeatureError::BadRow {
            line: 1,
            message: format!("header must be `{}`", FEATURES_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let line = r.position().map_or(0, |p| p.line());
        let bad = |message: String| FeatureError::BadRow { line, message };
        if r.len() != FEATURES_HEADER.len() {
            return Err(bad(format!("expected {} columns", FEATURES_HEADER.len())));
        }
        let count = |i: usize| -> Result<u32, FeatureError> {
            r[i].parse()
                .map_err(|_| bad(format!("{} `{}` is not a count", FEATURES_HEADER[i], &r[i])))
        };
        let features = AdmissionFeatures {
            comorbidities: split_set(&r[2], |s| s.parse()).map_err(bad)?,
            gender: r[3].parse().map_err(bad)?,
            age_group: r[4].parse().map_err(bad)?,
            ethnicity: r[5].parse().map_err(bad)?,
            scheme_type: r[6].parse().map_err(bad)?,
            los_days: count(7)?,
            medication_categories: split_set(&r[8], |s| {
                s.parse::<u8>()
                    .ok()
                    .filter(|m| *m < 100 && s.len() == 2)
                    .ok_or_else(|| format!("medication category `{s}`"))
            })
            .map_err(bad)?,
            n_prev_admissions: count(9)?,
            n_prev_ed_admissions: count(10)?,
            admitting_diagnosis: BodySystem::from_key(&r[11])
                .ok_or_else(|| bad(format!("unknown admitting diagnosis `{}`", &r[11])))?,
            n_prev_hospital_visits: count(12)?,
            procedure_categories: split_set(&r[13], |s| {
                s.parse::<u16>()
                    .map_err(|_| format!("procedure category `{s}`"))
            })
            .map_err(bad)?,
        };
        let target = match &r[14] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("target `{other}` is not 0/1"))),
        };
        rows.push(FeatureRow {
            user_id: r[0].to_string(),
            admission_id: r[1].to_string(),
            features,
            readmitted_within_30d: target,
        });
    }
    Ok(rows)
}
