//! Seeded synthetic claims with a controllable readmission signal.
//!
//! Each member gets a run of index admissions laid out far enough apart that
//! the episode builder keeps every one of them. Every index admission reserves
//! a slot 10 to 30 days after discharge; a labelled admission gets a short
//! inpatient stay in that slot, which the builder then removes and counts as
//! its readmission.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{
    write_demographics, write_medical_claims, write_pharmacy_claims, DemographicRecord, Ethnicity,
    Gender, MedicalClaim, PharmacyClaim, SchemeType,
};
use crate::codes::{CodeMappingConfig, Comorbidity, CptCode};
use crate::icd9::BodySystem;

pub const MEDICAL_FILE: &str = "medical_claims.csv";
pub const PHARMACY_FILE: &str = "pharmacy_claims.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const TRUTH_FILE: &str = "truth_admissions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const MAX_LOS: u64 = 30;
const READMIT_MAX_LOS: u64 = 7;
/// Days from an index discharge to the earliest next index admission.
const BLOCK_TAIL: u64 = 30 + READMIT_MAX_LOS + 10;
const MAX_EXTRA_GAP: u64 = 90;
const MAX_FIRST_OFFSET: u64 = 180;
const BACKGROUND_PROCEDURE_RATE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Increase,
    Decrease,
}

/// A feature the generator plants at claim level and links to the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedFeature {
    /// A secondary diagnosis code from the comorbidity's group.
    Comorbidity {
        comorbidity: Comorbidity,
    },
    /// A pharmacy fill of the two-digit NDC category.
    Medication {
        category: u8,
    },
    /// A claim with a CPT code from the CCS category.
    Procedure {
        ccs: u16,
    },
    /// Count of earlier index admissions.
    PreviousAdmissions,
    /// Count of earlier index admissions that came through the ED.
    PreviousEdAdmissions,
    LengthOfStay,
}

impl PlantedFeature {
    /// Name of the encoded column carrying this feature.
    pub fn column(&self) -> String {
        match self {
            PlantedFeature::Comorbidity { comorbidity } => format!("com_{}", comorbidity.name()),
            PlantedFeature::Medication { category } => format!("med_{category:02}"),
            PlantedFeature::Procedure { ccs } => format!("ccs_{ccs}"),
            PlantedFeature::PreviousAdmissions => "n_prev_admissions".into(),
            PlantedFeature::PreviousEdAdmissions => "n_prev_ed_admissions".into(),
            PlantedFeature::LengthOfStay => "los_days".into(),
        }
    }

    fn is_binary(&self) -> bool {
        matches!(
            self,
            PlantedFeature::Comorbidity { .. }
                | PlantedFeature::Medication { .. }
                | PlantedFeature::Procedure { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub feature: PlantedFeature,
    pub effect: Effect,
    /// Log-odds change per unit of the feature.
    pub strength: f64,
    /// Share of index admissions carrying a binary feature.
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
}

fn default_prevalence() -> f64 {
    0.3
}

impl Signal {
    /// A signal whose per-unit odds ratio is `odds_ratio`.
    pub fn with_odds_ratio(feature: PlantedFeature, odds_ratio: f64) -> Signal {
        Signal {
            feature,
            effect: if odds_ratio >= 1.0 {
                Effect::Increase
            } else {
                Effect::Decrease
            },
            strength: odds_ratio.ln().abs(),
            prevalence: default_prevalence(),
        }
    }

    fn coefficient(&self) -> f64 {
        match self.effect {
            Effect::Increase => self.strength,
            Effect::Decrease => -self.strength,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// At least 1; the draw is 1 + Poisson(mean - 1), truncated by the date range.
    pub mean_admissions_per_user: f64,
    /// Readmissions over all admissions, readmissions included.
    pub readmission_fraction: f64,
    pub mean_los_days: f64,
    pub ed_fraction: f64,
    /// Expected outpatient claims per member outside any admission.
    pub noise_claims_per_user: f64,
    /// Share of noise claims coded as hospital visits rather than office visits.
    pub hospital_visit_noise_fraction: f64,
    pub signals: Vec<Signal>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 1000,
            start_date: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2017, 12, 31).expect("valid date"),
            mean_admissions_per_user: 2.5,
            readmission_fraction: 0.0465,
            mean_los_days: 4.0,
            ed_fraction: 0.3,
            noise_claims_per_user: 2.0,
            hospital_visit_noise_fraction: 0.5,
            signals: Vec::new(),
            seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> GeneratorError {
    GeneratorError::InvalidConfig(msg.into())
}

fn in_unit(name: &str, v: f64, open_low: bool) -> Result<(), GeneratorError> {
    let ok = if open_low {
        v > 0.0 && v < 1.0
    } else {
        (0.0..=1.0).contains(&v)
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} = {v} is outside the unit interval"
        )))
    }
}

impl GeneratorConfig {
    pub fn validate(&self, codes: &CodeTables) -> Result<(), GeneratorError> {
        if self.n_users == 0 {
            return Err(invalid("n_users must be at least 1"));
        }
        if self.end_date < self.start_date {
            return Err(invalid("end_date precedes start_date"));
        }
        if !(self.mean_los_days >= 1.0 && self.mean_los_days <= MAX_LOS as f64) {
            return Err(invalid(format!("mean_los_days must lie in [1, {MAX_LOS}]")));
        }
        let span = (self.end_date - self.start_date).num_days() + 1;
        if (span as f64) < self.mean_los_days {
            return Err(invalid(format!(
                "date range of {span} days is shorter than the mean length of stay"
            )));
        }
        if !(self.mean_admissions_per_user >= 1.0 && self.mean_admissions_per_user.is_finite()) {
            return Err(invalid("mean_admissions_per_user must be at least 1"));
        }
        in_unit("readmission_fraction", self.readmission_fraction, true)?;
        if self.readmission_fraction >= 0.5 {
            // at most one readmission per index admission
            return Err(invalid("readmission_fraction must be below 0.5"));
        }
        in_unit("ed_fraction", self.ed_fraction, false)?;
        in_unit(
            "hospital_visit_noise_fraction",
            self.hospital_visit_noise_fraction,
            false,
        )?;
        if !(self.noise_claims_per_user >= 0.0 && self.noise_claims_per_user.is_finite()) {
            return Err(invalid("noise_claims_per_user must be non-negative"));
        }
        let mut seen = BTreeSet::new();
        for s in &self.signals {
            if !(s.strength >= 0.0 && s.strength.is_finite()) {
                return Err(invalid(format!(
                    "signal strength {} must be finite and non-negative",
                    s.strength
                )));
            }
            if !seen.insert(s.feature.column()) {
                return Err(invalid(format!(
                    "feature {} is planted twice",
                    s.feature.column()
                )));
            }
            if s.feature.is_binary() {
                in_unit("signal prevalence", s.prevalence, true)?;
            }
            match s.feature {
                PlantedFeature::Comorbidity { comorbidity }
                    if codes.comorbidity_code(comorbidity).is_none() =>
                {
                    return Err(invalid(format!(
                        "no diagnosis code maps to {} alone",
                        comorbidity.name()
                    )));
                }
                PlantedFeature::Medication { category } if category > 99 => {
                    return Err(invalid(format!(
                        "medication category {category} exceeds 99"
                    )));
                }
                PlantedFeature::Procedure { ccs } if codes.procedure_code(ccs).is_none() => {
                    return Err(invalid(format!("CCS category {ccs} has no CPT range")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Codes the generator writes, derived from the mapping tables.
#[derive(Debug, Clone)]
pub struct CodeTables {
    /// A diagnosis code whose comorbidity lookup is exactly one group.
    comorbidity: Vec<(Comorbidity, String)>,
    /// The lowest CPT code of each CCS category.
    procedure: Vec<(u16, CptCode)>,
    /// One primary diagnosis code per body system.
    admitting: Vec<String>,
}

impl CodeTables {
    pub fn new(config: &CodeMappingConfig) -> CodeTables {
        let map = &config.comorbidity_map;
        let mut comorbidity = Vec::new();
        for c in Comorbidity::ALL {
            let code = map
                .entries()
                .filter(|(_, m)| *m == c)
                .map(|(p, _)| p)
                .find(|p| {
                    crate::icd9::normalize(p).as_deref() == Some(*p)
                        && map
                            .lookup(p)
                            .is_some_and(|set| set.len() == 1 && set.contains(&c))
                });
            if let Some(code) = code {
                comorbidity.push((c, code.to_string()));
            }
        }
        let mut procedure: Vec<(u16, CptCode)> = Vec::new();
        for (range, id) in config.ccs_map.ranges() {
            if !procedure.iter().any(|(p, _)| *p == id) {
                procedure.push((id, range.low.clone()));
            }
        }
        procedure.sort_by_key(|(id, _)| *id);
        let mut candidates: Vec<String> = (1..1000).map(|n| format!("{n:03}")).collect();
        candidates.push("V700".into());
        candidates.push("E8889".into());
        let mut admitting = Vec::new();
        for b in BodySystem::ALL {
            if let Some(code) = candidates
                .iter()
                .find(|c| BodySystem::of_code(c) == b && map.lookup(c).is_none())
            {
                admitting.push(code.clone());
            }
        }
        CodeTables {
            comorbidity,
            procedure,
            admitting,
        }
    }

    pub fn comorbidity_code(&self, c: Comorbidity) -> Option<&str> {
        self.comorbidity
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, code)| code.as_str())
    }

    pub fn procedure_code(&self, ccs: u16) -> Option<&CptCode> {
        self.procedure
            .iter()
            .find(|(k, _)| *k == ccs)
            .map(|(_, code)| code)
    }
}

/// One planted index admission as the pipeline should recover it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthAdmission {
    pub user_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub is_ed: bool,
    pub readmitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedData {
    pub medical: Vec<MedicalClaim>,
    pub pharmacy: Vec<PharmacyClaim>,
    pub demographics: Vec<DemographicRecord>,
    /// Index admissions ordered by (user id, start).
    pub truth: Vec<TruthAdmission>,
    /// Logistic intercept solved to hit the target readmission fraction.
    pub intercept: f64,
}

impl GeneratedData {
    pub fn readmissions(&self) -> usize {
        self.truth.iter().filter(|t| t.readmitted).count()
    }

    /// Readmissions over all admissions, readmissions included.
    pub fn readmission_fraction(&self) -> f64 {
        let r = self.readmissions();
        r as f64 / (self.truth.len() + r).max(1) as f64
    }
}

struct IndexDraft {
    start: NaiveDate,
    end: NaiveDate,
    is_ed: bool,
    eta: f64,
    u: f64,
    readmission: MedicalClaim,
}

struct UserDraft {
    demographics: DemographicRecord,
    medical: Vec<MedicalClaim>,
    pharmacy: Vec<PharmacyClaim>,
    admissions: Vec<IndexDraft>,
}

fn day(d: NaiveDate, offset: u64) -> NaiveDate {
    d.checked_add_days(Days::new(offset))
        .expect("date within range")
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn claim(
    user: &str,
    start: NaiveDate,
    end: NaiveDate,
    dx: &str,
    other: Vec<String>,
    cpt: &str,
) -> MedicalClaim {
    MedicalClaim {
        user_id: user.to_string(),
        claim_id: String::new(),
        service_start: start,
        service_end: end,
        primary_diagnosis: dx.to_string(),
        other_diagnoses: other,
        cpt_code: CptCode::new(cpt).expect("generator CPT code"),
    }
}

fn ndc<R: Rng>(rng: &mut R, category: u8) -> String {
    format!("{category:02}{:08}", rng.random_range(0..100_000_000u32))
}

fn draw_user(config: &GeneratorConfig, codes: &CodeTables, index: usize) -> UserDraft {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let user = format!("U{:06}", index + 1);
    let demographics = DemographicRecord {
        user_id: user.clone(),
        gender: *Gender::ALL.choose(&mut rng).expect("non-empty"),
        age: rng.random_range(0..=90),
        ethnicity: *Ethnicity::ALL.choose(&mut rng).expect("non-empty"),
        scheme_type: *SchemeType::ALL.choose(&mut rng).expect("non-empty"),
    };

    let planted_comorbidity: BTreeSet<Comorbidity> = config
        .signals
        .iter()
        .filter_map(|s| match s.feature {
            PlantedFeature::Comorbidity { comorbidity } => Some(comorbidity),
            _ => None,
        })
        .collect();
    let planted_med: BTreeSet<u8> = config
        .signals
        .iter()
        .filter_map(|s| match s.feature {
            PlantedFeature::Medication { category } => Some(category),
            _ => None,
        })
        .collect();
    let planted_ccs: BTreeSet<u16> = config
        .signals
        .iter()
        .filter_map(|s| match s.feature {
            PlantedFeature::Procedure { ccs } => Some(ccs),
            _ => None,
        })
        .collect();
    let background_com: Vec<&str> = codes
        .comorbidity
        .iter()
        .filter(|(c, _)| !planted_comorbidity.contains(c))
        .map(|(_, code)| code.as_str())
        .collect();
    let background_med: Vec<u8> = (0..100).filter(|m| !planted_med.contains(m)).collect();
    let background_ccs: Vec<&CptCode> = codes
        .procedure
        .iter()
        .filter(|(id, _)| !planted_ccs.contains(id))
        .map(|(_, code)| code)
        .collect();

    let k = 1 + poisson(&mut rng, config.mean_admissions_per_user - 1.0);
    let noise_mean = config.noise_claims_per_user / (k + 1) as f64;
    let mut medical = Vec::new();
    let mut pharmacy = Vec::new();
    let mut admissions: Vec<IndexDraft> = Vec::new();
    let mut cursor = day(config.start_date, rng.random_range(0..=MAX_FIRST_OFFSET));
    let mut prev_ed = 0u32;

    let place_noise =
        |rng: &mut ChaCha8Rng, cursor: &mut NaiveDate, medical: &mut Vec<MedicalClaim>| {
            for _ in 0..poisson(rng, noise_mean) {
                if *cursor > config.end_date {
                    return;
                }
                let cpt = if rng.random_bool(config.hospital_visit_noise_fraction) {
                    *["99220", "99252"].choose(rng).expect("non-empty")
                } else {
                    "99213"
                };
                let dx = codes.admitting.choose(rng).expect("admitting codes");
                medical.push(claim(&user, *cursor, *cursor, dx, Vec::new(), cpt));
                *cursor = day(*cursor, 10 + rng.random_range(0..=20));
            }
        };

    for i in 0..k {
        place_noise(&mut rng, &mut cursor, &mut medical);
        let los = (1 + poisson(&mut rng, config.mean_los_days - 1.0)).min(MAX_LOS);
        let start = cursor;
        let end = day(start, los - 1);
        if day(end, 30 + READMIT_MAX_LOS) > config.end_date {
            break;
        }
        let is_ed = rng.random_bool(config.ed_fraction);
        let dx = codes
            .admitting
            .choose(&mut rng)
            .expect("admitting codes")
            .clone();

        let mut eta = 0.0;
        let mut other: Vec<String> = Vec::new();
        let mut meds: BTreeSet<u8> = BTreeSet::new();
        let mut procs: Vec<CptCode> = Vec::new();
        for s in &config.signals {
            let value = match s.feature {
                PlantedFeature::PreviousAdmissions => i as f64,
                PlantedFeature::PreviousEdAdmissions => f64::from(prev_ed),
                PlantedFeature::LengthOfStay => los as f64,
                _ => {
                    let present = rng.random_bool(s.prevalence);
                    if present {
                        match s.feature {
                            PlantedFeature::Comorbidity { comorbidity } => other.push(
                                codes
                                    .comorbidity_code(comorbidity)
                                    .expect("validated")
                                    .to_string(),
                            ),
                            PlantedFeature::Medication { category } => {
                                meds.insert(category);
                            }
                            PlantedFeature::Procedure { ccs } => {
                                procs.push(codes.procedure_code(ccs).expect("validated").clone())
                            }
                            _ => unreachable!(),
                        }
                    }
                    f64::from(u8::from(present))
                }
            };
            eta += s.coefficient() * value;
        }
        for _ in 0..rng.random_range(0..=3usize) {
            if let Some(code) = background_com.choose(&mut rng) {
                if !other.iter().any(|o| o == code) {
                    other.push(code.to_string());
                }
            }
        }
        for _ in 0..rng.random_range(0..=2usize) {
            meds.insert(*background_med.choose(&mut rng).expect("non-empty"));
        }
        if rng.random_bool(BACKGROUND_PROCEDURE_RATE) {
            if let Some(code) = background_ccs.choose(&mut rng) {
                procs.push((*code).clone());
            }
        }

        let admit_cpt = if is_ed { "99284" } else { "99232" };
        medical.push(claim(&user, start, start, &dx, other, admit_cpt));
        if los > 1 {
            medical.push(claim(&user, day(start, 1), end, &dx, Vec::new(), "99233"));
            medical.push(claim(&user, end, end, &dx, Vec::new(), "99238"));
        }
        for cpt in procs {
            let d = day(start, rng.random_range(0..los));
            medical.push(claim(&user, d, d, &dx, Vec::new(), cpt.as_str()));
        }
        for m in meds {
            pharmacy.push(PharmacyClaim {
                user_id: user.clone(),
                claim_id: String::new(),
                service_date: day(start, rng.random_range(0..los)),
                ndc_code: ndc(&mut rng, m),
            });
        }

        let gap = rng.random_range(10..=30);
        let readmit_los = rng.random_range(1..=READMIT_MAX_LOS);
        let r_start = day(end, gap);
        let readmit_dx = codes.admitting.choose(&mut rng).expect("admitting codes");
        let readmission = claim(
            &user,
            r_start,
            day(r_start, readmit_los - 1),
            readmit_dx,
            Vec::new(),
            "99231",
        );
        admissions.push(IndexDraft {
            start,
            end,
            is_ed,
            eta,
            u: rng.random(),
            readmission,
        });
        if is_ed {
            prev_ed += 1;
        }
        cursor = day(end, BLOCK_TAIL + rng.random_range(0..=MAX_EXTRA_GAP));
    }
    place_noise(&mut rng, &mut cursor, &mut medical);

    UserDraft {
        demographics,
        medical,
        pharmacy,
        admissions,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intercept `a` with mean sigmoid(a + eta) equal to `target`.
fn solve_intercept(eta: &[f64], target: f64) -> f64 {
    if eta.is_empty() {
        return (target / (1.0 - target)).ln();
    }
    let mean = |a: f64| eta.iter().map(|e| sigmoid(a + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates members, claims and ground truth.
pub fn generate(
    config: &GeneratorConfig,
    mappings: &CodeMappingConfig,
) -> Result<GeneratedData, GeneratorError> {
    let codes = CodeTables::new(mappings);
    config.validate(&codes)?;
    let drafts: Vec<UserDraft> = (0..config.n_users)
        .into_par_iter()
        .map(|i| draw_user(config, &codes, i))
        .collect();

    // share of index admissions that must be readmitted
    let f = config.readmission_fraction;
    let target = f / (1.0 - f);
    let eta: Vec<f64> = drafts
        .iter()
        .flat_map(|d| d.admissions.iter().map(|a| a.eta))
        .collect();
    let intercept = solve_intercept(&eta, target);

    let mut data = GeneratedData {
        medical: Vec::new(),
        pharmacy: Vec::new(),
        demographics: Vec::with_capacity(drafts.len()),
        truth: Vec::new(),
        intercept,
    };
    for mut d in drafts {
        for a in d.admissions {
            let readmitted = a.u < sigmoid(intercept + a.eta);
            if readmitted {
                d.medical.push(a.readmission);
            }
            data.truth.push(TruthAdmission {
                user_id: d.demographics.user_id.clone(),
                start: a.start,
                end: a.end,
                is_ed: a.is_ed,
                readmitted,
            });
        }
        d.medical.sort_by(|a, b| {
            (a.service_start, a.service_end, a.cpt_code.as_str()).cmp(&(
                b.service_start,
                b.service_end,
                b.cpt_code.as_str(),
            ))
        });
        d.pharmacy
            .sort_by(|a, b| (a.service_date, &a.ndc_code).cmp(&(b.service_date, &b.ndc_code)));
        data.medical.extend(d.medical);
        data.pharmacy.extend(d.pharmacy);
        data.demographics.push(d.demographics);
    }
    for (i, c) in data.medical.iter_mut().enumerate() {
        c.claim_id = format!("M{:08}", i + 1);
    }
    for (i, c) in data.pharmacy.iter_mut().enumerate() {
        c.claim_id = format!("R{:08}", i + 1);
    }
    Ok(data)
}

/// Counts and settings recorded next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSummary {
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub users: usize,
    pub medical_claims: usize,
    pub pharmacy_claims: usize,
    pub index_admissions: usize,
    pub readmissions: usize,
    pub readmission_fraction: f64,
    pub intercept: f64,
}

impl GeneratedData {
    pub fn summary(&self, config: &GeneratorConfig) -> GeneratorSummary {
        GeneratorSummary {
            generator: config.clone(),
            seed: config.seed,
            users: self.demographics.len(),
            medical_claims: self.medical.len(),
            pharmacy_claims: self.pharmacy.len(),
            index_admissions: self.truth.len(),
            readmissions: self.readmissions(),
            readmission_fraction: self.readmission_fraction(),
            intercept: self.intercept,
        }
    }
}

pub fn write_truth<W: Write>(sink: W, truth: &[TruthAdmission]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["user_id", "start", "end", "is_ed", "readmitted"])?;
    for t in truth {
        out.write_record([
            t.user_id.clone(),
            t.start.to_string(),
            t.end.to_string(),
            t.is_ed.to_string(),
            t.readmitted.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the three input tables and the ground truth into `dir`, returning
/// the file names.
pub fn write_tables(dir: &Path, data: &GeneratedData) -> std::io::Result<[&'static str; 4]> {
    use std::fs::File;
    use std::io::BufWriter;
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
    write_medical_claims(create(MEDICAL_FILE)?, &data.medical).map_err(std::io::Error::other)?;
    write_pharmacy_claims(create(PHARMACY_FILE)?, &data.pharmacy).map_err(std::io::Error::other)?;
    write_demographics(create(DEMOGRAPHICS_FILE)?, &data.demographics)
        .map_err(std::io::Error::other)?;
    write_truth(create(TRUTH_FILE)?, &data.truth).map_err(std::io::Error::other)?;
    Ok([MEDICAL_FILE, PHARMACY_FILE, DEMOGRAPHICS_FILE, TRUTH_FILE])
}

/// [`write_tables`] plus a JSON manifest of the config and counts.
pub fn write_dataset(
    dir: &Path,
    data: &GeneratedData,
    config: &GeneratorConfig,
) -> std::io::Result<()> {
    write_tables(dir, data)?;
    let mut sink = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut sink, &data.summary(config))
        .map_err(std::io::Error::other)?;
    sink.write_all(b"\n")?;
    sink.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{build_admissions, DEFAULT_GAP_DAYS, DEFAULT_WINDOW_DAYS};
    use crate::features::build_feature_rows;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_users: 300,
            seed,
            signals: vec![
                Signal::with_odds_ratio(PlantedFeature::PreviousAdmissions, 3.0),
                Signal::with_odds_ratio(
                    PlantedFeature::Comorbidity {
                        comorbidity: Comorbidity::Chf,
                    },
                    2.0,
                ),
                Signal::with_odds_ratio(PlantedFeature::Medication { category: 42 }, 0.5),
                Signal::with_odds_ratio(PlantedFeature::Procedure { ccs: 44 }, 2.0),
            ],
            readmission_fraction: 0.2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let mappings = CodeMappingConfig::default();
        let bytes = |seed| {
            let d = generate(&small(seed), &mappings).unwrap();
            let mut buf = Vec::new();
            write_medical_claims(&mut buf, &d.medical).unwrap();
            write_pharmacy_claims(&mut buf, &d.pharmacy).unwrap();
            write_demographics(&mut buf, &d.demographics).unwrap();
            buf
        };
        assert_eq!(bytes(5), bytes(5));
        assert_ne!(bytes(5), bytes(6));
    }

    #[test]
    fn pipeline_recovers_planted_admissions() {
        let mappings = CodeMappingConfig::default();
        for seed in 0..4 {
            let data = generate(&small(seed), &mappings).unwrap();
            let set = build_admissions(
                &data.medical,
                &mappings,
                DEFAULT_GAP_DAYS,
                DEFAULT_WINDOW_DAYS,
            );
            assert_eq!(set.admissions.len(), data.truth.len());
            assert_eq!(set.readmissions.len(), data.readmissions());
            for (a, t) in set.admissions.iter().zip(&data.truth) {
                assert_eq!(
                    (a.user_id(), a.start(), a.end()),
                    (t.user_id.as_str(), t.start, t.end)
                );
                assert_eq!(a.readmitted_within_30d, t.readmitted);
                assert_eq!(a.is_ed_admission, t.is_ed);
            }
            let rows = build_feature_rows(
                &set,
                &data.medical,
                &data.pharmacy,
                &data.demographics,
                &mappings,
            )
            .unwrap();
            let mut prev = ("", 0u32);
            for r in &rows {
                let expected = if r.user_id == prev.0 { prev.1 + 1 } else { 0 };
                assert_eq!(r.features.n_prev_admissions, expected);
                prev = (r.user_id.as_str(), expected);
            }
        }
    }

    #[test]
    fn planted_codes_decode_to_the_planted_features() {
        let mappings = CodeMappingConfig::default();
        let codes = CodeTables::new(&mappings);
        for c in Comorbidity::ALL {
            if let Some(code) = codes.comorbidity_code(c) {
                assert_eq!(
                    mappings
                        .comorbidity_map
                        .lookup(code)
                        .unwrap()
                        .iter()
                        .collect::<Vec<_>>(),
                    vec![&c]
                );
            }
        }
        for id in mappings.ccs_map.category_ids() {
            assert_eq!(
                mappings.ccs_map.lookup(codes.procedure_code(id).unwrap()),
                Some(id)
            );
        }
        assert_eq!(codes.admitting.len(), BodySystem::ALL.len());
    }

    #[test]
    fn zero_signal_hits_target_rate() {
        let config = GeneratorConfig {
            n_users: 4200,
            readmission_fraction: 0.05,
            seed: 11,
            ..GeneratorConfig::default()
        };
        let data = generate(&config, &CodeMappingConfig::default()).unwrap();
        assert!(data.truth.len() >= 10_000, "{}", data.truth.len());
        let rate = data.readmission_fraction();
        assert!((rate - 0.05).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn intercept_matches_target() {
        let eta = [0.0, 1.0, -2.0, 0.5];
        let a = solve_intercept(&eta, 0.1);
        let mean = eta.iter().map(|e| sigmoid(a + e)).sum::<f64>() / 4.0;
        assert!((mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let m = CodeMappingConfig::default();
        let d = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let cases = [
            GeneratorConfig {
                n_users: 0,
                ..GeneratorConfig::default()
            },
            GeneratorConfig {
                readmission_fraction: 0.0,
                ..GeneratorConfig::default()
            },
            GeneratorConfig {
                readmission_fraction: 0.6,
                ..GeneratorConfig::default()
            },
            GeneratorConfig {
                start_date: d,
                end_date: d,
                mean_los_days: 4.0,
                ..GeneratorConfig::default()
            },
            GeneratorConfig {
                end_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
                ..GeneratorConfig::default()
            },
            GeneratorConfig {
                signals: vec![Signal::with_odds_ratio(
                    PlantedFeature::Procedure { ccs: 9999 },
                    2.0,
                )],
                ..GeneratorConfig::default()
            },
        ];
        for c in cases {
            assert!(generate(&c, &m).is_err(), "{c:?}");
        }
    }

    #[test]
    fn written_files_parse_back() {
        use crate::claims::{
            parse_demographics, parse_medical_claims, parse_pharmacy_claims, ParseMode,
        };
        let config = small(2);
        let data = generate(&config, &CodeMappingConfig::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("readmit-synth-{}", std::process::id()));
        write_dataset(&dir, &data, &config).unwrap();
        let open = |n: &str| std::fs::File::open(dir.join(n)).unwrap();
        let med =
            parse_medical_claims(open(MEDICAL_FILE), MEDICAL_FILE, ParseMode::Strict).unwrap();
        let ph =
            parse_pharmacy_claims(open(PHARMACY_FILE), PHARMACY_FILE, ParseMode::Strict).unwrap();
        let demo = parse_demographics(
            open(DEMOGRAPHICS_FILE),
            DEMOGRAPHICS_FILE,
            ParseMode::Strict,
        )
        .unwrap();
        assert_eq!(med.records, data.medical);
        assert_eq!(ph.records, data.pharmacy);
        assert_eq!(demo.records, data.demographics);
        let manifest: serde_json::Value = serde_json::from_reader(open(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest["seed"], 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
