//! The six-variant metric table and its ROC point files.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::dataset::FeatureMatrix;
use crate::eval::{auc, roc_curve, write_roc, Confusion, RocPoint};
use crate::models::{ModelError, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    LrAll,
    LrSelected,
    PcaLr,
    PcaLrSelected,
    RfBest,
    SvmBest,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::LrAll,
        Variant::LrSelected,
        Variant::PcaLr,
        Variant::PcaLrSelected,
        Variant::RfBest,
        Variant::SvmBest,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::LrAll => "LR-all",
            Variant::LrSelected => "LR-selected",
            Variant::PcaLr => "PCA-LR",
            Variant::PcaLrSelected => "PCA-LR-selected",
            Variant::RfBest => "RF-best",
            Variant::SvmBest => "SVM-best",
        }
    }

    /// File-name form.
    pub fn key(self) -> &'static str {
        match self {
            Variant::LrAll => "lr_all",
            Variant::LrSelected => "lr_selected",
            Variant::PcaLr => "pca_lr",
            Variant::PcaLrSelected => "pca_lr_selected",
            Variant::RfBest => "rf_best",
            Variant::SvmBest => "svm_best",
        }
    }

    pub fn from_key(key: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.key() == key)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Cut-off for probability scores.
    pub threshold: f64,
    /// Cut-off for SVM decision values.
    pub svm_threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            threshold: 0.5,
            svm_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub auc: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub variant: Variant,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub options: ReportOptions,
    pub rows: Vec<ModelMetrics>,
}

pub const REPORT_HEADER: [&str; 7] = [
    "model",
    "train_auc",
    "test_auc",
    "train_specificity",
    "test_specificity",
    "train_sensitivity",
    "test_sensitivity",
];

fn metric(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| x.to_string())
}

impl EvaluationReport {
    pub fn row(&self, variant: Variant) -> Option<&ModelMetrics> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(sink);
        out.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.variant.label().to_string(),
                r.train.auc.to_string(),
                r.test.auc.to_string(),
                metric(r.train.specificity),
                metric(r.test.specificity),
                metric(r.train.sensitivity),
                metric(r.test.sensitivity),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `roc_<variant>_<train|test>.csv` for every row into `dir`.
    pub fn write_roc_files(&self, dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        for r in &self.rows {
            for (split, m) in [("train", &r.train), ("test", &r.test)] {
                let path = dir.join(format!("roc_{}_{split}.csv", r.variant.key()));
                let file = std::fs::File::create(&path)?;
                write_roc(std::io::BufWriter::new(file), &m.roc).map_err(std::io::Error::other)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

fn split_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<SplitMetrics, ModelError> {
    let roc = roc_curve(scores, labels)?;
    let c = Confusion::at_threshold(scores, labels, threshold);
    Ok(SplitMetrics {
        auc: auc(&roc),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
        roc,
    })
}

pub fn evaluate_model(
    variant: Variant,
    model: &TrainedModel,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    options: &ReportOptions,
) -> Result<ModelMetrics, ModelError> {
    let threshold = match model {
        TrainedModel::Svm { .. } => options.svm_threshold,
        _ => options.threshold,
    };
    Ok(ModelMetrics {
        variant,
        train: split_metrics(&model.score(train)?, &train.target, threshold)?,
        test: split_metrics(&model.score(test)?, &test.target, threshold)?,
    })
}

/// Evaluates each model on the train and test rows. The two row sets must
/// not share an admission.
pub fn build_report(
    models: &[(Variant, TrainedModel)],
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    options: &ReportOptions,
) -> Result<EvaluationReport, ModelError> {
    let train_ids: BTreeSet<_> = train.row_ids.iter().collect();
    if let Some(shared) = test.row_ids.iter().find(|id| train_ids.contains(id)) {
        return Err(ModelError::InvalidParameter(format!(
            "admission {}/{} is in both train and test rows",
            shared.user_id, shared.admission_id
        )));
    }
    let rows = models
        .iter()
        .map(|(v, m)| evaluate_model(*v, m, train, test, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationReport {
        options: *options,
        rows,
    })
}
