//! Typed records for the three input feeds and their CSV readers/writers.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

use crate::codes::CptCode;
use crate::icd9;

pub const MEDICAL_HEADER: [&str; 7] = [
    "user_id",
    "claim_id",
    "service_start",
    "service_end",
    "primary_diagnosis",
    "other_diagnoses",
    "cpt_code",
];
pub const PHARMACY_HEADER: [&str; 4] = ["user_id", "claim_id", "service_date", "ndc_code"];
pub const DEMOGRAPHICS_HEADER: [&str; 5] = ["user_id", "gender", "age", "ethnicity", "scheme_type"];

/// Placeholder used in `other_diagnoses` when a claim carries no secondary code.
pub const NO_DIAGNOSIS: &str = "00000";

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum ParseError {
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
    #[error("{file}: {error}")]
    Row { file: String, error: RowError },
}

/// A rejected data row.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ParseMode {
    /// First bad row aborts the parse.
    #[default]
    Strict,
    /// Bad rows are skipped and reported.
    Lenient,
}

/// Records accepted by a parse together with the rows skipped in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MedicalClaim {
    pub user_id: String,
    pub claim_id: String,
    pub service_start: NaiveDate,
    pub service_end: NaiveDate,
    /// Normalized ICD-9 code (no decimal point).
    pub primary_diagnosis: String,
    /// Normalized ICD-9 codes; empty when the feed carried the `00000` placeholder.
    pub other_diagnoses: Vec<String>,
    pub cpt_code: CptCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PharmacyClaim {
    pub user_id: String,
    pub claim_id: String,
    pub service_date: NaiveDate,
    /// Ten digits, left-padded with zeros.
    pub ndc_code: String,
}

impl PharmacyClaim {
    /// Medication category: the first two digits of the NDC.
    pub fn category(&self) -> u8 {
        self.ndc_code[..2].parse().expect("NDC validated as digits")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ethnicity {
    White,
    Asian,
    Hispanic,
    Black,
}

/// Urban-rural classification of the member's county.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeType {
    LargeCentralMetro,
    LargeFringeMetro,
    MediumMetro,
    SmallMetro,
    Micropolitan,
    Noncore,
}

macro_rules! labelled_enum {
    ($ty:ident { $($variant:ident => $label:expr, $key:expr;)+ }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $($ty::$variant => $label),+ }
            }

            /// Identifier used in encoded column names.
            pub fn key(self) -> &'static str {
                match self { $($ty::$variant => $key),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let squash = |v: &str| -> String {
                    v.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
                };
                let wanted = squash(s);
                $ty::ALL
                    .iter()
                    .copied()
                    .find(|v| squash(v.label()) == wanted)
                    .ok_or_else(|| {
                        let allowed: Vec<&str> = $ty::ALL.iter().map(|v| v.label()).collect();
                        format!("`{}` is not one of: {}", s, allowed.join(", "))
                    })
            }
        }
    };
}

labelled_enum!(Gender {
    M => "M", "M";
    F => "F", "F";
});

labelled_enum!(Ethnicity {
    White => "White", "white";
    Asian => "Asian", "asian";
    Hispanic => "Hispanic", "hispanic";
    Black => "Black", "black";
});

labelled_enum!(SchemeType {
    LargeCentralMetro => "Large Central Metro", "large_central_metro";
    LargeFringeMetro => "Large Fringe Metro", "large_fringe_metro";
    MediumMetro => "Medium Metro", "medium_metro";
    SmallMetro => "Small Metro", "small_metro";
    Micropolitan => "Micropolitan", "micropolitan";
    Noncore => "Noncore", "noncore";
});

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub user_id: String,
    pub gender: Gender,
    pub age: u32,
    pub ethnicity: Ethnicity,
    pub scheme_type: SchemeType,
}

fn parse_date(field: &str, raw: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(raw, DATE_FORMAT)
        .map_err(|_| format!("{field} `{raw}` is not a YYYY-MM-DD date"))
}

fn non_empty(field: &str, raw: &str) -> Result<String, String> {
    if raw.is_empty() {
        Err(format!("{field} is empty"))
    } else {
        Ok(raw.to_string())
    }
}

fn diagnosis(field: &str, raw: &str) -> Result<String, String> {
    icd9::normalize(raw).ok_or_else(|| format!("{field} `{raw}` is not an ICD-9 code"))
}

/// Shared driver: header check, per-row conversion, strict/lenient handling.
fn parse_rows<R, T, F>(
    source: R,
    file: &str,
    header: &[&str],
    mode: ParseMode,
    mut convert: F,
) -> Result<Parsed<T>, ParseError>
where
    R: Read,
    F: FnMut(&csv::StringRecord) -> Result<T, String>,
{
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let found = reader.headers().map_err(|source| ParseError::Csv {
        file: file.to_string(),
        source,
    })?;
    if found.iter().collect::<Vec<_>>() != header {
        return Err(ParseError::Header {
            file: file.to_string(),
            expected: header.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| ParseError::Csv {
            file: file.to_string(),
            source,
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let outcome = if row.len() != header.len() {
            Err(format!(
                "expected {} columns, found {}",
                header.len(),
                row.len()
            ))
        } else {
            convert(&row)
        };
        match outcome {
            Ok(record) => records.push(record),
            Err(message) => {
                let error = RowError { line, message };
                match mode {
                    ParseMode::Strict => {
                        return Err(ParseError::Row {
                            file: file.to_string(),
                            error,
                        })
                    }
                    ParseMode::Lenient => skipped.push(error),
                }
            }
        }
    }
    Ok(Parsed { records, skipped })
}

pub fn parse_medical_claims<R: Read>(
    source: R,
    file: &str,
    mode: ParseMode,
) -> Result<Parsed<MedicalClaim>, ParseError> {
    parse_rows(source, file, &MEDICAL_HEADER, mode, |row| {
        let service_start = parse_date("service_start", &row[2])?;
        let service_end = parse_date("service_end", &row[3])?;
        if service_start > service_end {
            return Err(format!(
                "service_start {service_start} is after service_end {service_end}"
            ));
        }
        let mut other_diagnoses = Vec::new();
        for code in row[5].split(';').map(str::trim).filter(|c| !c.is_empty()) {
            if code != NO_DIAGNOSIS {
                other_diagnoses.push(diagnosis("other_diagnoses", code)?);
            }
        }
        Ok(MedicalClaim {
            user_id: non_empty("user_id", &row[0])?,
            claim_id: non_empty("claim_id", &row[1])?,
            service_start,
            service_end,
            primary_diagnosis: diagnosis("primary_diagnosis", &row[4])?,
            other_diagnoses,
            cpt_code: CptCode::new(&row[6])
                .ok_or_else(|| format!("cpt_code `{}` is not a 5-character code", &row[6]))?,
        })
    })
}

/// Left-pads a numeric NDC to ten digits.
pub fn normalize_ndc(raw: &str) -> Result<String, String> {
    let raw = raw.trim();
    if raw.is_empty() || !raw.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("ndc_code `{raw}` is not numeric"));
    }
    if raw.len() > 10 {
        return Err(format!("ndc_code `{raw}` has more than 10 digits"));
    }
    Ok(format!("{raw:0>10}"))
}

pub fn parse_pharmacy_claims<R: Read>(
    source: R,
    file: &str,
    mode: ParseMode,
) -> Result<Parsed<PharmacyClaim>, ParseError> {
    parse_rows(source, file, &PHARMACY_HEADER, mode, |row| {
        Ok(PharmacyClaim {
            user_id: non_empty("user_id", &row[0])?,
            claim_id: non_empty("claim_id", &row[1])?,
            service_date: parse_date("service_date", &row[2])?,
            ndc_code: normalize_ndc(&row[3])?,
        })
    })
}

pub fn parse_demographics<R: Read>(
    source: R,
    file: &str,
    mode: ParseMode,
) -> Result<Parsed<DemographicRecord>, ParseError> {
    let mut seen = HashSet::new();
    parse_rows(source, file, &DEMOGRAPHICS_HEADER, mode, |row| {
        let user_id = non_empty("user_id", &row[0])?;
        let age: i64 = row[2]
            .parse()
            .map_err(|_| format!("age `{}` is not an integer", &row[2]))?;
        let age =
            u32::try_from(age).map_err(|_| format!("age {age} is negative or out of range"))?;
        let record = DemographicRecord {
            gender: row[1].parse().map_err(|e| format!("gender {e}"))?,
            age,
            ethnicity: row[3].parse().map_err(|e| format!("ethnicity {e}"))?,
            scheme_type: row[4].parse().map_err(|e| format!("scheme_type {e}"))?,
            user_id,
        };
        if !seen.insert(record.user_id.clone()) {
            return Err(format!(
                "duplicate demographics for user `{}`",
                record.user_id
            ));
        }
        Ok(record)
    })
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(sink)
}

pub fn write_medical_claims<W: Write>(sink: W, claims: &[MedicalClaim]) -> csv::Result<()> {
    let mut out = writer(sink);
    out.write_record(MEDICAL_HEADER)?;
    for c in claims {
        let other = if c.other_diagnoses.is_empty() {
            NO_DIAGNOSIS.to_string()
        } else {
            c.other_diagnoses.join(";")
        };
        out.write_record([
            c.user_id.as_str(),
            c.claim_id.as_str(),
            &c.service_start.format(DATE_FORMAT).to_string(),
            &c.service_end.format(DATE_FORMAT).to_string(),
            c.primary_diagnosis.as_str(),
            &other,
            c.cpt_code.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pharmacy_claims<W: Write>(sink: W, claims: &[PharmacyClaim]) -> csv::Result<()> {
    let mut out = writer(sink);
    out.write_record(PHARMACY_HEADER)?;
    for c in claims {
        out.write_record([
            c.user_id.as_str(),
            c.claim_id.as_str(),
            &c.service_date.format(DATE_FORMAT).to_string(),
            c.ndc_code.as_str(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_demographics<W: Write>(sink: W, records: &[DemographicRecord]) -> csv::Result<()> {
    let mut out = writer(sink);
    out.write_record(DEMOGRAPHICS_HEADER)?;
    for r in records {
        out.write_record([
            r.user_id.as_str(),
            r.gender.label(),
            &r.age.to_string(),
            r.ethnicity.label(),
            r.scheme_type.label(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
