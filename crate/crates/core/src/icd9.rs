//! ICD-9-CM diagnosis code handling.
//!
//! Codes are stored without the decimal point, so `402.01` and `40201` are the
//! same code. Prefix lookups (comorbidities) and chapter lookups (admitting
//! diagnosis) both run on this normalized form.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Strips the decimal point and upper-cases a raw diagnosis code.
///
/// Returns `None` unless the result is a plausible ICD-9 code: 3 to 5 digits,
/// `V` followed by 2 to 4 digits, or `E` followed by 3 or 4 digits.
pub fn normalize(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    if trimmed.matches('.').count() > 1 {
        return None;
    }
    let code: String = trimmed
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let (head, digits) = match code.chars().next()? {
        'V' | 'E' => code.split_at(1),
        _ => ("", code.as_str()),
    };
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let ok = match head {
        "" => (3..=5).contains(&digits.len()),
        "V" => (2..=4).contains(&digits.len()),
        "E" => (3..=4).contains(&digits.len()),
        _ => false,
    };
    ok.then_some(code)
}

/// The eighteen ICD-9 body-system chapters plus a catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BodySystem {
    Infectious,
    Neoplasms,
    Endocrine,
    Blood,
    Mental,
    Nervous,
    Circulatory,
    Respiratory,
    Digestive,
    Genitourinary,
    Pregnancy,
    Skin,
    Musculoskeletal,
    Congenital,
    Perinatal,
    Symptoms,
    Injury,
    HealthFactors,
    Others,
}

impl BodySystem {
    pub const ALL: [BodySystem; 19] = [
        BodySystem::Infectious,
        BodySystem::Neoplasms,
        BodySystem::Endocrine,
        BodySystem::Blood,
        BodySystem::Mental,
        BodySystem::Nervous,
        BodySystem::Circulatory,
        BodySystem::Respiratory,
        BodySystem::Digestive,
        BodySystem::Genitourinary,
        BodySystem::Pregnancy,
        BodySystem::Skin,
        BodySystem::Musculoskeletal,
        BodySystem::Congenital,
        BodySystem::Perinatal,
        BodySystem::Symptoms,
        BodySystem::Injury,
        BodySystem::HealthFactors,
        BodySystem::Others,
    ];

    /// Human-readable chapter name.
    pub fn label(self) -> &'static str {
        match self {
            BodySystem::Infectious => "Infectious and parasitic disease",
            BodySystem::Neoplasms => "Neoplasms",
            BodySystem::Endocrine => "Endocrine, nutritional, metabolic, immunity disorders",
            BodySystem::Blood => "Blood and blood-forming organs",
            BodySystem::Mental => "Mental disorders",
            BodySystem::Nervous => "Nervous system and sense organs",
            BodySystem::Circulatory => "Circulatory system",
            BodySystem::Respiratory => "Respiratory system",
            BodySystem::Digestive => "Digestive system",
            BodySystem::Genitourinary => "Genitourinary system",
            BodySystem::Pregnancy => "Complications of pregnancy, childbirth and the puerperium",
            BodySystem::Skin => "Skin and subcutaneous tissue",
            BodySystem::Musculoskeletal => "Musculoskeletal system",
            BodySystem::Congenital => "Congenital anomalies",
            BodySystem::Perinatal => "Certain conditions originating in the perinatal period",
            BodySystem::Symptoms => "Symptoms, signs and ill-defined conditions",
            BodySystem::Injury => "Injury and poisoning",
            BodySystem::HealthFactors => {
                "Factors influencing health status and contact with health services"
            }
            BodySystem::Others => "Others",
        }
    }

    /// Short identifier used in column names and CSV cells.
    pub fn key(self) -> &'static str {
        match self {
            BodySystem::Infectious => "infectious",
            BodySystem::Neoplasms => "neoplasms",
            BodySystem::Endocrine => "endocrine",
            BodySystem::Blood => "blood",
            BodySystem::Mental => "mental",
            BodySystem::Nervous => "nervous",
            BodySystem::Circulatory => "circulatory",
            BodySystem::Respiratory => "respiratory",
            BodySystem::Digestive => "digestive",
            BodySystem::Genitourinary => "genitourinary",
            BodySystem::Pregnancy => "pregnancy",
            BodySystem::Skin => "skin",
            BodySystem::Musculoskeletal => "musculoskeletal",
            BodySystem::Congenital => "congenital",
            BodySystem::Perinatal => "perinatal",
            BodySystem::Symptoms => "symptoms",
            BodySystem::Injury => "injury",
            BodySystem::HealthFactors => "health_factors",
            BodySystem::Others => "others",
        }
    }

    pub fn from_key(key: &str) -> Option<BodySystem> {
        BodySystem::ALL.iter().copied().find(|b| b.key() == key)
    }

    /// Chapter of a diagnosis code. E-codes and anything that does not
    /// normalize fall into `Others`.
    pub fn of_code(raw: &str) -> BodySystem {
        let Some(code) = normalize(raw) else {
            return BodySystem::Others;
        };
        if code.starts_with('V') {
            return BodySystem::HealthFactors;
        }
        if code.starts_with('E') {
            return BodySystem::Others;
        }
        let category: u32 = match code[..3].parse() {
            Ok(n) => n,
            Err(_) => return BodySystem::Others,
        };
        match category {
            1..=139 => BodySystem::Infectious,
            140..=239 => BodySystem::Neoplasms,
            240..=279 => BodySystem::Endocrine,
            280..=289 => BodySystem::Blood,
            290..=319 => BodySystem::Mental,
            320..=389 => BodySystem::Nervous,
            390..=459 => BodySystem::Circulatory,
            460..=519 => BodySystem::Respiratory,
            520..=579 => BodySystem::Digestive,
            580..=629 => BodySystem::Genitourinary,
            630..=679 => BodySystem::Pregnancy,
            680..=709 => BodySystem::Skin,
            710..=739 => BodySystem::Musculoskeletal,
            740..=759 => BodySystem::Congenital,
            760..=779 => BodySystem::Perinatal,
            780..=799 => BodySystem::Symptoms,
            800..=999 => BodySystem::Injury,
            _ => BodySystem::Others,
        }
    }
}

impl fmt::Display for BodySystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_decimal() {
        assert_eq!(normalize("682.50").as_deref(), Some("68250"));
        assert_eq!(normalize("70890").as_deref(), Some("70890"));
        assert_eq!(normalize("v42.2").as_deref(), Some("V422"));
        assert_eq!(normalize("E800.0").as_deref(), Some("E8000"));
    }

    #[test]
    fn normalize_rejects_garbage() {
        assert_eq!(normalize("ZZZ"), None);
        assert_eq!(normalize("12"), None);
        assert_eq!(normalize("123456"), None);
        assert_eq!(normalize("1.2.3"), None);
        assert_eq!(normalize(""), None);
    }

    #[test]
    fn chapter_lookup() {
        assert_eq!(BodySystem::of_code("37234"), BodySystem::Nervous);
        assert_eq!(BodySystem::of_code("V5789"), BodySystem::HealthFactors);
        assert_eq!(BodySystem::of_code("ZZZ"), BodySystem::Others);
        assert_eq!(BodySystem::of_code("E8120"), BodySystem::Others);
        assert_eq!(BodySystem::of_code("041.12"), BodySystem::Infectious);
        assert_eq!(BodySystem::of_code("995.29"), BodySystem::Injury);
        assert_eq!(BodySystem::of_code("00000"), BodySystem::Others);
    }

    #[test]
    fn chapter_boundaries() {
        let cases = [
            ("139", BodySystem::Infectious),
            ("140", BodySystem::Neoplasms),
            ("319", BodySystem::Mental),
            ("320", BodySystem::Nervous),
            ("389", BodySystem::Nervous),
            ("390", BodySystem::Circulatory),
            ("779", BodySystem::Perinatal),
            ("780", BodySystem::Symptoms),
            ("800", BodySystem::Injury),
            ("999", BodySystem::Injury),
        ];
        for (code, system) in cases {
            assert_eq!(BodySystem::of_code(code), system, "{code}");
        }
    }

    #[test]
    fn keys_round_trip() {
        for b in BodySystem::ALL {
            assert_eq!(BodySystem::from_key(b.key()), Some(b));
        }
    }
}
