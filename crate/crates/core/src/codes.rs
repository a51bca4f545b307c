//! Code tables: comorbidity prefixes, CCS procedure categories and the CPT
//! sets that mark inpatient, emergency, hospital-visit and discharge services.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

use crate::icd9;

const DEFAULT_COMORBIDITY_MAP: &str = include_str!("../data/comorbidity_map.csv");
const DEFAULT_CCS_MAP: &str = include_str!("../data/ccs_map.csv");

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("{file}: cannot read: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: header must be `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}: map is empty")]
    Empty { file: String },
    #[error("{file} line {line}: unknown comorbidity `{name}`")]
    UnknownComorbidity {
        file: String,
        line: u64,
        name: String,
    },
    #[error("{file} line {line}: invalid ICD-9 prefix `{prefix}`")]
    BadPrefix {
        file: String,
        line: u64,
        prefix: String,
    },
    #[error("{file} line {line}: invalid CPT code `{code}`")]
    BadCpt {
        file: String,
        line: u64,
        code: String,
    },
    #[error("{file} line {line}: {message}")]
    BadRow {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{set}: ranges {a} and {b} overlap")]
    Overlap {
        set: String,
        a: CptRange,
        b: CptRange,
    },
}

/// The Elixhauser comorbidity categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comorbidity {
    Chf,
    Valvular,
    Phtn,
    Pvd,
    Htn,
    HtnCx,
    Paralysis,
    NeuroOther,
    Pulmonary,
    Dm,
    DmCx,
    Hypothyroid,
    Renal,
    Liver,
    Pud,
    Hiv,
    Lymphoma,
    Mets,
    Tumor,
    Rheumatic,
    Coagulopathy,
    Obesity,
    WeightLoss,
    FluidsLytes,
    BloodLoss,
    Anemia,
    Alcohol,
    Drugs,
    Psychoses,
    Depression,
}

impl Comorbidity {
    pub const ALL: [Comorbidity; 30] = [
        Comorbidity::Chf,
        Comorbidity::Valvular,
        Comorbidity::Phtn,
        Comorbidity::Pvd,
        Comorbidity::Htn,
        Comorbidity::HtnCx,
        Comorbidity::Paralysis,
        Comorbidity::NeuroOther,
        Comorbidity::Pulmonary,
        Comorbidity::Dm,
        Comorbidity::DmCx,
        Comorbidity::Hypothyroid,
        Comorbidity::Renal,
        Comorbidity::Liver,
        Comorbidity::Pud,
        Comorbidity::Hiv,
        Comorbidity::Lymphoma,
        Comorbidity::Mets,
        Comorbidity::Tumor,
        Comorbidity::Rheumatic,
        Comorbidity::Coagulopathy,
        Comorbidity::Obesity,
        Comorbidity::WeightLoss,
        Comorbidity::FluidsLytes,
        Comorbidity::BloodLoss,
        Comorbidity::Anemia,
        Comorbidity::Alcohol,
        Comorbidity::Drugs,
        Comorbidity::Psychoses,
        Comorbidity::Depression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comorbidity::Chf => "CHF",
            Comorbidity::Valvular => "Valvular",
            Comorbidity::Phtn => "PHTN",
            Comorbidity::Pvd => "PVD",
            Comorbidity::Htn => "HTN",
            Comorbidity::HtnCx => "HTNcx",
            Comorbidity::Paralysis => "Paralysis",
            Comorbidity::NeuroOther => "NeuroOther",
            Comorbidity::Pulmonary => "Pulmonary",
            Comorbidity::Dm => "DM",
            Comorbidity::DmCx => "DMcx",
            Comorbidity::Hypothyroid => "Hypothyroid",
            Comorbidity::Renal => "Renal",
            Comorbidity::Liver => "Liver",
            Comorbidity::Pud => "PUD",
            Comorbidity::Hiv => "HIV",
            Comorbidity::Lymphoma => "Lymphoma",
            Comorbidity::Mets => "Mets",
            Comorbidity::Tumor => "Tumor",
            Comorbidity::Rheumatic => "Rheumatic",
            Comorbidity::Coagulopathy => "Coagulopathy",
            Comorbidity::Obesity => "Obesity",
            Comorbidity::WeightLoss => "WeightLoss",
            Comorbidity::FluidsLytes => "FluidsLytes",
            Comorbidity::BloodLoss => "BloodLoss",
            Comorbidity::Anemia => "Anemia",
            Comorbidity::Alcohol => "Alcohol",
            Comorbidity::Drugs => "Drugs",
            Comorbidity::Psychoses => "Psychoses",
            Comorbidity::Depression => "Depression",
        }
    }
}

impl fmt::Display for Comorbidity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Comorbidity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Comorbidity::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown comorbidity `{s}`"))
    }
}

/// A five-character CPT/HCPCS code. Ordering is lexicographic, which for the
/// all-digit codes used here coincides with numeric order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CptCode(String);

impl CptCode {
    pub fn new(raw: &str) -> Option<CptCode> {
        let code = raw.trim().to_ascii_uppercase();
        (code.len() == 5 && code.chars().all(|c| c.is_ascii_alphanumeric()))
            .then_some(CptCode(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CptCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inclusive CPT range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CptRange {
    pub low: CptCode,
    pub high: CptCode,
}

impl CptRange {
    pub fn new(low: &str, high: &str) -> Option<CptRange> {
        let (low, high) = (CptCode::new(low)?, CptCode::new(high)?);
        (low <= high).then_some(CptRange { low, high })
    }

    pub fn contains(&self, code: &CptCode) -> bool {
        &self.low <= code && code <= &self.high
    }
}

impl fmt::Display for CptRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.low == self.high {
            write!(f, "{}", self.low)
        } else {
            write!(f, "{}-{}", self.low, self.high)
        }
    }
}

/// A set of CPT codes held as sorted, non-overlapping inclusive ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CptSet {
    ranges: Vec<CptRange>,
}

impl CptSet {
    pub fn from_ranges(name: &str, mut ranges: Vec<CptRange>) -> Result<CptSet, MappingError> {
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].low <= pair[0].high {
                return Err(MappingError::Overlap {
                    set: name.to_string(),
                    a: pair[0].clone(),
                    b: pair[1].clone(),
                });
            }
        }
        Ok(CptSet { ranges })
    }

    fn from_static(name: &str, ranges: &[(&str, &str)]) -> CptSet {
        let ranges = ranges
            .iter()
            .map(|(lo, hi)| CptRange::new(lo, hi).expect("built-in CPT range"))
            .collect();
        CptSet::from_ranges(name, ranges).expect("built-in CPT ranges are disjoint")
    }

    pub fn contains(&self, code: &CptCode) -> bool {
        let idx = self.ranges.partition_point(|r| &r.high < code);
        self.ranges.get(idx).is_some_and(|r| r.contains(code))
    }

    pub fn ranges(&self) -> &[CptRange] {
        &self.ranges
    }
}

/// ICD-9 prefix table mapping diagnosis codes to comorbidities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComorbidityMap {
    by_prefix: BTreeMap<String, BTreeSet<Comorbidity>>,
    max_len: usize,
}

impl ComorbidityMap {
    pub fn from_entries<I>(entries: I) -> ComorbidityMap
    where
        I: IntoIterator<Item = (String, Comorbidity)>,
    {
        let mut by_prefix: BTreeMap<String, BTreeSet<Comorbidity>> = BTreeMap::new();
        for (prefix, c) in entries {
            by_prefix.entry(prefix).or_default().insert(c);
        }
        let max_len = by_prefix.keys().map(String::len).max().unwrap_or(0);
        ComorbidityMap { by_prefix, max_len }
    }

    /// Comorbidities of the longest prefix matching `code`. Several names
    /// come back only when the file lists the same prefix more than once.
    pub fn lookup(&self, code: &str) -> Option<&BTreeSet<Comorbidity>> {
        let code = icd9::normalize(code)?;
        (1..=code.len().min(self.max_len))
            .rev()
            .find_map(|n| self.by_prefix.get(&code[..n]))
    }

    pub fn len(&self) -> usize {
        self.by_prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_prefix.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Comorbidity)> {
        self.by_prefix
            .iter()
            .flat_map(|(p, cs)| cs.iter().map(move |c| (p.as_str(), *c)))
    }
}

/// One CCS procedure category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcsCategory {
    pub id: u16,
    pub label: String,
}

/// CPT range to CCS category table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcsMap {
    ranges: Vec<(CptRange, u16)>,
    labels: BTreeMap<u16, String>,
}

impl CcsMap {
    pub fn lookup(&self, code: &CptCode) -> Option<u16> {
        let idx = self.ranges.partition_point(|(r, _)| &r.high < code);
        self.ranges
            .get(idx)
            .filter(|(r, _)| r.contains(code))
            .map(|(_, id)| *id)
    }

    pub fn label(&self, id: u16) -> Option<&str> {
        self.labels.get(&id).map(String::as_str)
    }

    /// Category ids present in the table, ascending.
    pub fn category_ids(&self) -> Vec<u16> {
        self.labels.keys().copied().collect()
    }

    pub fn ranges(&self) -> impl Iterator<Item = (&CptRange, u16)> {
        self.ranges.iter().map(|(r, id)| (r, *id))
    }
}

/// All code tables used by episode building and feature extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMappingConfig {
    pub comorbidity_map: ComorbidityMap,
    pub ccs_map: CcsMap,
    pub inpatient_cpt: CptSet,
    pub ed_cpt: CptSet,
    pub hospital_visit_cpt: CptSet,
    pub discharge_cpt: CptSet,
}

/// Optional overrides for the bundled tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPaths {
    pub comorbidity: Option<PathBuf>,
    pub ccs: Option<PathBuf>,
}

pub fn default_inpatient_cpt() -> CptSet {
    CptSet::from_static(
        "inpatient",
        &[
            ("99231", "99236"),
            ("99224", "99226"),
            ("99281", "99285"),
            ("99291", "99292"),
        ],
    )
}

pub fn default_discharge_cpt() -> CptSet {
    CptSet::from_static(
        "discharge",
        &[("99238", "99238"), ("99239", "99239"), ("99217", "99217")],
    )
}

pub fn default_ed_cpt() -> CptSet {
    CptSet::from_static("emergency", &[("99281", "99285")])
}

pub fn default_hospital_visit_cpt() -> CptSet {
    CptSet::from_static("hospital visit", &[("99218", "99223"), ("99251", "99254")])
}

impl Default for CodeMappingConfig {
    fn default() -> Self {
        CodeMappingConfig {
            comorbidity_map: parse_comorbidity_map(DEFAULT_COMORBIDITY_MAP.as_bytes(), "<bundled>")
                .expect("bundled comorbidity map"),
            ccs_map: parse_ccs_map(DEFAULT_CCS_MAP.as_bytes(), "<bundled>")
                .expect("bundled CCS map"),
            inpatient_cpt: default_inpatient_cpt(),
            ed_cpt: default_ed_cpt(),
            hospital_visit_cpt: default_hospital_visit_cpt(),
            discharge_cpt: default_discharge_cpt(),
        }
    }
}

/// Loads the code tables, falling back to the bundled defaults for any path
/// left unset.
pub fn load_code_mappings(paths: &MappingPaths) -> Result<CodeMappingConfig, MappingError> {
    let mut config = CodeMappingConfig::default();
    if let Some(path) = &paths.comorbidity {
        config.comorbidity_map = parse_comorbidity_map(open(path)?, &path.display().to_string())?;
    }
    if let Some(path) = &paths.ccs {
        config.ccs_map = parse_ccs_map(open(path)?, &path.display().to_string())?;
    }
    Ok(config)
}

fn open(path: &Path) -> Result<std::fs::File, MappingError> {
    std::fs::File::open(path).map_err(|source| MappingError::Io {
        file: path.display().to_string(),
        source,
    })
}

fn reader_with_header<R: Read>(
    source: R,
    file: &str,
    expected: &[&str],
) -> Result<csv::Reader<R>, MappingError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(|source| MappingError::Csv {
        file: file.to_string(),
        source,
    })?;
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(MappingError::Header {
            file: file.to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(reader)
}

/// Parses `icd9_prefix,comorbidity` rows.
pub fn parse_comorbidity_map<R: Read>(
    source: R,
    file: &str,
) -> Result<ComorbidityMap, MappingError> {
    let mut reader = reader_with_header(source, file, &["icd9_prefix", "comorbidity"])?;
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| MappingError::Csv {
            file: file.to_string(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let prefix: String = record[0]
            .chars()
            .filter(|c| *c != '.')
            .collect::<String>()
            .to_ascii_uppercase();
        let valid = !prefix.is_empty()
            && prefix.len() <= 5
            && prefix
                .chars()
                .enumerate()
                .all(|(i, c)| c.is_ascii_digit() || (i == 0 && (c == 'V' || c == 'E')));
        if !valid {
            return Err(MappingError::BadPrefix {
                file: file.to_string(),
                line,
                prefix: record[0].to_string(),
            });
        }
        let name =
            record[1]
                .parse::<Comorbidity>()
                .map_err(|_| MappingError::UnknownComorbidity {
                    file: file.to_string(),
                    line,
                    name: record[1].to_string(),
                })?;
        entries.push((prefix, name));
    }
    if entries.is_empty() {
        return Err(MappingError::Empty {
            file: file.to_string(),
        });
    }
    Ok(ComorbidityMap::from_entries(entries))
}

/// Parses `cpt_low,cpt_high,ccs_id,ccs_label` rows.
pub fn parse_ccs_map<R: Read>(source: R, file: &str) -> Result<CcsMap, MappingError> {
    let mut reader = reader_with_header(
        source,
        file,
        &["cpt_low", "cpt_high", "ccs_id", "ccs_label"],
    )?;
    let mut ranges = Vec::new();
    let mut labels: BTreeMap<u16, String> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|source| MappingError::Csv {
            file: file.to_string(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let range = CptRange::new(&record[0], &record[1]).ok_or_else(|| MappingError::BadCpt {
            file: file.to_string(),
            line,
            code: format!("{}-{}", &record[0], &record[1]),
        })?;
        let id: u16 = record[2].parse().map_err(|_| MappingError::BadRow {
            file: file.to_string(),
            line,
            message: format!("ccs_id `{}` is not a category number", &record[2]),
        })?;
        let label = record[3].to_string();
        if let Some(existing) = labels.get(&id) {
            if *existing != label {
                return Err(MappingError::BadRow {
                    file: file.to_string(),
                    line,
                    message: format!("category {id} labelled both `{existing}` and `{label}`"),
                });
            }
        }
        labels.insert(id, label);
        ranges.push((range, id));
    }
    if ranges.is_empty() {
        return Err(MappingError::Empty {
            file: file.to_string(),
        });
    }
    ranges.sort();
    for pair in ranges.windows(2) {
        if pair[1].0.low <= pair[0].0.high {
            return Err(MappingError::Overlap {
                set: file.to_string(),
                a: pair[0].0.clone(),
                b: pair[1].0.clone(),
            });
        }
    }
    Ok(CcsMap { ranges, labels })
}
