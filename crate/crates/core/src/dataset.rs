//! Design-matrix encoding, train/test split and stratified folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use thiserror::Error;

use crate::claims::{Ethnicity, Gender, SchemeType};
use crate::codes::Comorbidity;
use crate::features::{AdmissionFeatures, AgeGroup, FeatureRow};
use crate::icd9::BodySystem;
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("no feature rows to encode")]
    Empty,
    #[error("admission {admission}: {message}")]
    OutOfDomain { admission: String, message: String },
    #[error("row does not decode: {0}")]
    Decode(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid split: {0}")]
    Split(String),
}

/// Identity of one matrix row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowId {
    pub user_id: String,
    pub admission_id: String,
}

/// Numeric design matrix with binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    pub x: Matrix,
    pub target: Vec<bool>,
    pub row_ids: Vec<RowId>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.cols()
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|t| **t).count()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            column_names: self.column_names.clone(),
            x: self.x.select_rows(rows),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Restricts to the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(
        &self,
        names: &[S],
    ) -> Result<FeatureMatrix, DatasetError> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| DatasetError::UnknownColumn(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureMatrix {
            column_names: names.iter().map(|n| n.as_ref().to_string()).collect(),
            x: self.x.select_cols(&idx),
            target: self.target.clone(),
            row_ids: self.row_ids.clone(),
        })
    }
}

/// Fixed column layout: every declared level of every categorical gets an
/// indicator whether or not it occurs in the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    ccs_ids: Vec<u16>,
}

impl FeatureEncoder {
    /// `ccs_ids` are the procedure categories present in the CCS table.
    pub fn new(mut ccs_ids: Vec<u16>) -> FeatureEncoder {
        ccs_ids.sort_unstable();
        ccs_ids.dedup();
        FeatureEncoder { ccs_ids }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend(Comorbidity::ALL.iter().map(|c| format!("com_{}", c.name())));
        names.extend(Gender::ALL.iter().map(|g| format!("gender_{}", g.key())));
        names.extend(AgeGroup::ALL.iter().map(|a| format!("age_{}", a.label())));
        names.extend(Ethnicity::ALL.iter().map(|e| format!("eth_{}", e.key())));
        names.extend(
            SchemeType::ALL
                .iter()
                .map(|s| format!("scheme_{}", s.key())),
        );
        names.push("los_days".into());
        names.extend((0..100).map(|m| format!("med_{m:02}")));
        names.push("n_prev_admissions".into());
        names.push("n_prev_ed_admissions".into());
        names.extend(
            BodySystem::ALL
                .iter()
                .map(|b| format!("adm_dx_{}", b.key())),
        );
        names.push("n_prev_hospital_visits".into());
        names.extend(self.ccs_ids.iter().map(|id| format!("ccs_{id}")));
        names
    }

    pub fn n_columns(&self) -> usize {
        Comorbidity::ALL.len()
            + Gender::ALL.len()
            + AgeGroup::ALL.len()
            + Ethnicity::ALL.len()
            + SchemeType::ALL.len()
            + 1
            + 100
            + 2
            + BodySystem::ALL.len()
            + 1
            + self.ccs_ids.len()
    }

    fn one_hot<T: PartialEq>(out: &mut Vec<f64>, levels: &[T], value: &T) {
        out.extend(levels.iter().map(|l| if l == value { 1.0 } else { 0.0 }));
    }

    pub fn encode_features(&self, f: &AdmissionFeatures) -> Result<Vec<f64>, String> {
        let mut out = Vec::with_capacity(self.n_columns());
        out.extend(
            Comorbidity::ALL
                .iter()
                .map(|c| f64::from(u8::from(f.comorbidities.contains(c)))),
        );
        Self::one_hot(&mut out, Gender::ALL, &f.gender);
        Self::one_hot(&mut out, &AgeGroup::ALL, &f.age_group);
        Self::one_hot(&mut out, Ethnicity::ALL, &f.ethnicity);
        Self::one_hot(&mut out, SchemeType::ALL, &f.scheme_type);
        out.push(f64::from(f.los_days));
        if let Some(bad) = f.medication_categories.iter().find(|m| **m >= 100) {
            return Err(format!("medication category {bad} outside 00..99"));
        }
        out.extend((0..100u8).map(|m| f64::from(u8::from(f.medication_categories.contains(&m)))));
        out.push(f64::from(f.n_prev_admissions));
        out.push(f64::from(f.n_prev_ed_admissions));
        Self::one_hot(&mut out, &BodySystem::ALL, &f.admitting_diagnosis);
        out.push(f64::from(f.n_prev_hospital_visits));
        if let Some(bad) = f
            .procedure_categories
            .iter()
            .find(|p| self.ccs_ids.binary_search(p).is_err())
        {
            return Err(format!("procedure category {bad} is not in the CCS table"));
        }
        out.extend(
            self.ccs_ids
                .iter()
                .map(|id| f64::from(u8::from(f.procedure_categories.contains(id)))),
        );
        Ok(out)
    }

    pub fn encode(&self, rows: &[FeatureRow]) -> Result<FeatureMatrix, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let cols = self.n_columns();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let encoded =
                self.encode_features(&r.features)
                    .map_err(|message| DatasetError::OutOfDomain {
                        admission: r.admission_id.clone(),
                        message,
                    })?;
            data.extend(encoded);
        }
        Ok(FeatureMatrix {
            column_names: self.column_names(),
            x: Matrix::from_vec(rows.len(), cols, data),
            target: rows.iter().map(|r| r.readmitted_within_30d).collect(),
            row_ids: rows
                .iter()
                .map(|r| RowId {
                    user_id: r.user_id.clone(),
                    admission_id: r.admission_id.clone(),
                })
                .collect(),
        })
    }

    /// Inverse of [`FeatureEncoder::encode_features`].
    pub fn decode(&self, row: &[f64]) -> Result<AdmissionFeatures, DatasetError> {
        if row.len() != self.n_columns() {
            return Err(DatasetError::Decode(format!(
                "expected {} values, found {}",
                self.n_columns(),
                row.len()
            )));
        }
        let mut cursor = Cursor { row, pos: 0 };
        let comorbidities = cursor.flags(&Comorbidity::ALL)?;
        let gender = cursor.single(Gender::ALL, "gender")?;
        let age_group = cursor.single(&AgeGroup::ALL, "age group")?;
        let ethnicity = cursor.single(Ethnicity::ALL, "ethnicity")?;
        let scheme_type = cursor.single(SchemeType::ALL, "scheme type")?;
        let los_days = cursor.count()?;
        let meds: Vec<u8> = (0..100).collect();
        let medication_categories = cursor.flags(&meds)?;
        let n_prev_admissions = cursor.count()?;
        let n_prev_ed_admissions = cursor.count()?;
        let admitting_diagnosis = cursor.single(&BodySystem::ALL, "admitting diagnosis")?;
        let n_prev_hospital_visits = cursor.count()?;
        let procedure_categories = cursor.flags(&self.ccs_ids)?;
        Ok(AdmissionFeatures {
            comorbidities,
            gender,
            age_group,
            ethnicity,
            scheme_type,
            los_days,
            medication_categories,
            n_prev_admissions,
            n_prev_ed_admissions,
            admitting_diagnosis,
            n_prev_hospital_visits,
            procedure_categories,
        })
    }
}

struct Cursor<'a> {
    row: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> &[f64] {
        let s = &self.row[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn flags<T: Copy + Ord>(&mut self, levels: &[T]) -> Result<BTreeSet<T>, DatasetError> {
        let vals = self.take(levels.len()).to_vec();
        let mut set = BTreeSet::new();
        for (l, v) in levels.iter().zip(vals) {
            if v == 1.0 {
                set.insert(*l);
            } else if v != 0.0 {
                return Err(DatasetError::Decode(format!("indicator value {v}")));
            }
        }
        Ok(set)
    }

    fn single<T: Copy + Ord>(&mut self, levels: &[T], what: &str) -> Result<T, DatasetError> {
        let set = self.flags(levels)?;
        match set.len() {
            1 => Ok(*set.first().unwrap()),
            n => Err(DatasetError::Decode(format!("{what}: {n} levels set"))),
        }
    }

    fn count(&mut self) -> Result<u32, DatasetError> {
        let v = self.take(1)[0];
        if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(DatasetError::Decode(format!("count value {v}")))
        }
    }
}

pub fn write_matrix<W: Write>(sink: W, m: &FeatureMatrix) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let mut header = vec!["user_id".to_string(), "admission_id".to_string()];
    header.extend(m.column_names.iter().cloned());
    header.push("readmitted_within_30d".into());
    out.write_record(&header)?;
    for i in 0..m.n_rows() {
        let mut rec = vec![
            m.row_ids[i].user_id.clone(),
            m.row_ids[i].admission_id.clone(),
        ];
        rec.extend(m.x.row(i).iter().map(|v| v.to_string()));
        rec.push(if m.target[i] { "1".into() } else { "0".into() });
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub fold_count: usize,
    /// Keep every admission of a member on the same side of the split.
    pub user_level: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            fold_count: 10,
            user_level: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DatasetError::Split(format!(
                "train fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        if self.fold_count < 2 {
            return Err(DatasetError::Split(format!(
                "fold count {} is below 2",
                self.fold_count
            )));
        }
        Ok(())
    }
}

/// Row indices on each side of a train/test split, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation split: the first `ceil(fraction * n)` permuted rows train.
pub fn train_test_split(
    m: &FeatureMatrix,
    spec: &SplitSpec,
) -> Result<TrainTestSplit, DatasetError> {
    spec.validate()?;
    let n = m.n_rows();
    let n_train = (spec.train_fraction * n as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = if spec.user_level {
        let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in m.row_ids.iter().enumerate() {
            by_user.entry(id.user_id.as_str()).or_default().push(i);
        }
        let mut users: Vec<Vec<usize>> = by_user.into_values().collect();
        users.shuffle(&mut rng);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for rows in users {
            if train.len() < n_train {
                train.extend(rows);
            } else {
                test.extend(rows);
            }
        }
        (train, test)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let test = order.split_off(n_train.min(n));
        (order, test)
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok(TrainTestSplit { train, test })
}

/// One cross-validation fold: indices into the matrix being folded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fit: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified k-fold assignment. Positives are dealt round-robin first and
/// negatives continue the same rotation, so both per-fold positive counts and
/// per-fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    if k < 2 {
        return Err(DatasetError::Split(format!("fold count {k} is below 2")));
    }
    if k > labels.len() {
        return Err(DatasetError::Split(format!(
            "{k} folds for {} rows",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let mut assignment = vec![0usize; labels.len()];
    for (slot, &i) in positives.iter().chain(negatives.iter()).enumerate() {
        assignment[i] = slot % k;
    }
    Ok((0..k)
        .map(|f| {
            let (validation, fit): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { fit, validation }
        })
        .collect())
}

/// Writes the row ids of `rows` as a two-column manifest.
pub fn write_row_ids<W: Write>(sink: W, m: &FeatureMatrix, rows: &[usize]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["user_id", "admission_id"])?;
    for &i in rows {
        out.write_record([&m.row_ids[i].user_id, &m.row_ids[i].admission_id])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_row_ids<R: std::io::Read>(source: R) -> Result<Vec<RowId>, csv::Error> {
    let mut reader = csv::Reader::from_reader(source);
    reader
        .records()
        .map(|r| {
            r.map(|r| RowId {
                user_id: r[0].to_string(),
                admission_id: r[1].to_string(),
            })
        })
        .collect()
}

/// Maps row ids back to positions in `m`.
pub fn locate_rows(m: &FeatureMatrix, ids: &[RowId]) -> Result<Vec<usize>, DatasetError> {
    let index: HashMap<&RowId, usize> = m
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    ids.iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| {
                DatasetError::Split(format!(
                    "row {}/{} not in matrix",
                    id.user_id, id.admission_id
                ))
            })
        })
        .collect()
}
