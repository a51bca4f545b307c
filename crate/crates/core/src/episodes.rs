//! Episode grouping, admission detection and 30-day readmission labelling.
//!
//! Claims of one member are sorted and merged into episodes whenever the next
//! claim starts less than `gap_days` after the latest end date seen so far.
//! Episodes containing an inpatient E&M code are admissions. Admissions are
//! then swept in date order: one that starts within `window_days` of the last
//! *retained* admission's end is removed as a readmission and flips that
//! retained admission's label to positive.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use thiserror::Error;

use crate::claims::MedicalClaim;
use crate::codes::CodeMappingConfig;

pub const DEFAULT_GAP_DAYS: i64 = 10;
pub const DEFAULT_WINDOW_DAYS: i64 = 30;

pub const ADMISSIONS_HEADER: [&str; 7] = [
    "user_id",
    "admission_id",
    "start",
    "end",
    "is_ed",
    "readmitted_within_30d",
    "removed_readmission_count",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub user_id: String,
    /// 1-based position of the episode within the member's history.
    pub episode_id: u32,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Member claims in (start, end, claim id) order.
    pub claims: Vec<MedicalClaim>,
}

impl Episode {
    pub fn member_claim_ids(&self) -> Vec<&str> {
        self.claims.iter().map(|c| c.claim_id.as_str()).collect()
    }
}

/// A retained (index) admission with its readmission target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledAdmission {
    pub episode: Episode,
    pub admission_id: String,
    pub is_ed_admission: bool,
    pub readmitted_within_30d: bool,
    /// Episode ids of the readmissions attributed to this admission.
    pub removed_readmission_ids: Vec<u32>,
}

impl LabeledAdmission {
    pub fn user_id(&self) -> &str {
        &self.episode.user_id
    }

    pub fn start(&self) -> NaiveDate {
        self.episode.start
    }

    pub fn end(&self) -> NaiveDate {
        self.episode.end
    }
}

fn sort_key(c: &MedicalClaim) -> (NaiveDate, NaiveDate, &str) {
    (c.service_start, c.service_end, c.claim_id.as_str())
}

/// Groups one member's claims into episodes.
///
/// A claim joins the open episode iff its start minus the episode's running
/// maximum end date is strictly less than `gap_days`.
pub fn group_claims_into_episodes(claims: &[MedicalClaim], gap_days: i64) -> Vec<Episode> {
    debug_assert!(claims.windows(2).all(|w| w[0].user_id == w[1].user_id));
    let mut sorted: Vec<&MedicalClaim> = claims.iter().collect();
    sorted.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));

    let mut episodes: Vec<Episode> = Vec::new();
    for claim in sorted {
        match episodes.last_mut() {
            Some(open) if (claim.service_start - open.end).num_days() < gap_days => {
                open.end = open.end.max(claim.service_end);
                open.claims.push(claim.clone());
            }
            _ => episodes.push(Episode {
                user_id: claim.user_id.clone(),
                episode_id: episodes.len() as u32 + 1,
                start: claim.service_start,
                end: claim.service_end,
                claims: vec![claim.clone()],
            }),
        }
    }
    episodes
}

/// Keeps the episodes with at least one inpatient CPT code.
pub fn filter_admissions(episodes: Vec<Episode>, config: &CodeMappingConfig) -> Vec<Episode> {
    episodes
        .into_iter()
        .filter(|e| {
            e.claims
                .iter()
                .any(|c| config.inpatient_cpt.contains(&c.cpt_code))
        })
        .collect()
}

/// Sweeps one member's admissions (sorted by start) and splits them into
/// retained index admissions and removed readmissions.
pub fn label_readmissions(
    admissions: Vec<Episode>,
    config: &CodeMappingConfig,
    window_days: i64,
) -> (Vec<LabeledAdmission>, Vec<Episode>) {
    let mut retained: Vec<LabeledAdmission> = Vec::new();
    let mut removed = Vec::new();
    for episode in admissions {
        if let Some(last) = retained.last_mut() {
            if (episode.start - last.episode.end).num_days() <= window_days {
                last.readmitted_within_30d = true;
                last.removed_readmission_ids.push(episode.episode_id);
                removed.push(episode);
                continue;
            }
        }
        let is_ed_admission = episode
            .claims
            .iter()
            .any(|c| config.ed_cpt.contains(&c.cpt_code));
        retained.push(LabeledAdmission {
            admission_id: format!("{}#{}", episode.user_id, episode.episode_id),
            episode,
            is_ed_admission,
            readmitted_within_30d: false,
            removed_readmission_ids: Vec::new(),
        });
    }
    (retained, removed)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("readmission rate is undefined without admissions")]
pub struct NoAdmissions;

/// Readmissions over all admissions (retained plus removed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadmissionRate {
    pub readmissions: usize,
    pub total: usize,
}

impl ReadmissionRate {
    pub fn new(readmissions: usize, total: usize) -> Result<ReadmissionRate, NoAdmissions> {
        if total == 0 {
            return Err(NoAdmissions);
        }
        assert!(readmissions <= total, "more readmissions than admissions");
        Ok(ReadmissionRate {
            readmissions,
            total,
        })
    }

    pub fn fraction(&self) -> f64 {
        self.readmissions as f64 / self.total as f64
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.fraction()
    }
}

impl fmt::Display for ReadmissionRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%", self.percent())
    }
}

pub fn readmission_rate(retained: usize, removed: usize) -> Result<ReadmissionRate, NoAdmissions> {
    ReadmissionRate::new(removed, retained + removed)
}

/// Output of the episode stage over every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionSet {
    /// Retained admissions ordered by (user id, start), numbered `A1`, `A2`, ...
    pub admissions: Vec<LabeledAdmission>,
    pub readmissions: Vec<Episode>,
    pub episode_count: usize,
}

impl AdmissionSet {
    pub fn rate(&self) -> Result<ReadmissionRate, NoAdmissions> {
        readmission_rate(self.admissions.len(), self.readmissions.len())
    }
}

/// Runs grouping, filtering and labelling for all members.
pub fn build_admissions(
    claims: &[MedicalClaim],
    config: &CodeMappingConfig,
    gap_days: i64,
    window_days: i64,
) -> AdmissionSet {
    let mut by_user: BTreeMap<&str, Vec<MedicalClaim>> = BTreeMap::new();
    for c in claims {
        by_user
            .entry(c.user_id.as_str())
            .or_default()
            .push(c.clone());
    }
    let per_user: Vec<(usize, Vec<LabeledAdmission>, Vec<Episode>)> = by_user
        .into_par_iter()
        .map(|(_, user_claims)| {
            let episodes = group_claims_into_episodes(&user_claims, gap_days);
            let count = episodes.len();
            let (kept, removed) =
                label_readmissions(filter_admissions(episodes, config), config, window_days);
            (count, kept, removed)
        })
        .collect();

    let mut set = AdmissionSet {
        admissions: Vec::new(),
        readmissions: Vec::new(),
        episode_count: 0,
    };
    for (count, kept, removed) in per_user {
        set.episode_count += count;
        set.admissions.extend(kept);
        set.readmissions.extend(removed);
    }
    for (i, a) in set.admissions.iter_mut().enumerate() {
        a.admission_id = format!("A{}", i + 1);
    }
    set
}

/// One row of `admissions.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionRow {
    pub user_id: String,
    pub admission_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub is_ed: bool,
    pub readmitted_within_30d: bool,
    pub removed_readmission_count: usize,
}

impl From<&LabeledAdmission> for AdmissionRow {
    fn from(a: &LabeledAdmission) -> Self {
        AdmissionRow {
            user_id: a.episode.user_id.clone(),
            admission_id: a.admission_id.clone(),
            start: a.episode.start,
            end: a.episode.end,
            is_ed: a.is_ed_admission,
            readmitted_within_30d: a.readmitted_within_30d,
            removed_readmission_count: a.removed_readmission_ids.len(),
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_admissions<W: Write>(sink: W, admissions: &[LabeledAdmission]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(ADMISSIONS_HEADER)?;
    for a in admissions {
        let row = AdmissionRow::from(a);
        out.write_record([
            row.user_id.as_str(),
            row.admission_id.as_str(),
            &row.start.to_string(),
            &row.end.to_string(),
            flag(row.is_ed),
            flag(row.readmitted_within_30d),
            &row.removed_readmission_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_admissions<R: Read>(source: R) -> Result<Vec<AdmissionRow>, String> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ADMISSIONS_HEADER {
        return Err(format!(
            "admissions header must be `{}`",
            ADMISSIONS_HEADER.join(",")
        ));
    }
    let parse_flag = |s: &str| match s {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("expected 0 or 1, found `{other}`")),
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| e.to_string())?;
        let line = r.position().map_or(0, |p| p.line());
        let err = |m: String| format!("admissions line {line}: {m}");
        let date = |s: &str| s.parse::<NaiveDate>().map_err(|e| err(format!("{s}: {e}")));
        rows.push(AdmissionRow {
            user_id: r[0].to_string(),
            admission_id: r[1].to_string(),
            start: date(&r[2])?,
            end: date(&r[3])?,
            is_ed: parse_flag(&r[4]).map_err(err)?,
            readmitted_within_30d: parse_flag(&r[5]).map_err(err)?,
            removed_readmission_count: r[6]
                .parse()
                .map_err(|_| err(format!("bad count `{}`", &r[6])))?,
        });
    }
    Ok(rows)
}
