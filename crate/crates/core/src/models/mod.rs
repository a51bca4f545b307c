//! Classifiers fitted from scratch: penalized logistic regression with
//! likelihood-ratio forward selection, PCA, random forest and a linear SVM,
//! plus the cross-validated grid search that tunes the latter two.

pub mod forest;
pub mod grid;
pub mod logistic;
pub mod pca;
pub mod persist;
pub mod select;
pub mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::eval::EvalError;
use crate::matrix::Matrix;

pub use forest::{
    fit_random_forest, rf_importances, rf_predict_proba, ForestParams, RandomForestModel,
};
pub use grid::{
    grid_search, ForestGrid, GridSearchResult, ModelConfig, ModelFamily, ParamGrid, SvmGrid,
};
pub use logistic::{fit_logistic, predict_proba, LogisticConfig, LogisticModel};
pub use pca::{fit_pca, pca_transform, PcaTransform};
pub use persist::{read_model, write_model};
pub use select::{loglik_feature_select, Selection};
pub use svm::{fit_linear_svm, LinearSvmModel, SvmParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    Empty,
    #[error("training labels hold a single class")]
    SingleClass,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("objective became non-finite at iteration {0} (likely separable data; raise the L2 penalty)")]
    NonFinite(usize),
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub(crate) fn check_training(x: &Matrix, y: &[bool]) -> Result<(), ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(ModelError::Empty);
    }
    if y.iter().all(|v| *v) || y.iter().all(|v| !*v) {
        return Err(ModelError::SingleClass);
    }
    if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "non-finite value at row {}, column {}",
            i / x.cols().max(1),
            i % x.cols().max(1)
        )));
    }
    Ok(())
}

pub(crate) fn check_width(x: &Matrix, expected: usize) -> Result<(), ModelError> {
    if x.cols() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            found: x.cols(),
        });
    }
    Ok(())
}

/// A fitted classifier together with the named input columns it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Logistic {
        columns: Vec<String>,
        model: LogisticModel,
    },
    /// Logistic regression on principal-component scores; `components`
    /// indexes the retained components the regression reads.
    PcaLogistic {
        columns: Vec<String>,
        pca: PcaTransform,
        components: Vec<usize>,
        model: LogisticModel,
    },
    Forest {
        columns: Vec<String>,
        model: RandomForestModel,
    },
    Svm {
        columns: Vec<String>,
        model: LinearSvmModel,
    },
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Logistic { .. } => "logistic",
            TrainedModel::PcaLogistic { .. } => "pca_logistic",
            TrainedModel::Forest { .. } => "random_forest",
            TrainedModel::Svm { .. } => "linear_svm",
        }
    }

    pub fn columns(&self) -> &[String] {
        match self {
            TrainedModel::Logistic { columns, .. }
            | TrainedModel::PcaLogistic { columns, .. }
            | TrainedModel::Forest { columns, .. }
            | TrainedModel::Svm { columns, .. } => columns,
        }
    }

    /// Ranking scores: probabilities, or raw decision values for the SVM.
    pub fn score_matrix(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        match self {
            TrainedModel::Logistic { model, .. } => predict_proba(model, x),
            TrainedModel::PcaLogistic {
                pca,
                components,
                model,
                ..
            } => predict_proba(model, &pca_transform(pca, x)?.select_cols(components)),
            TrainedModel::Forest { model, .. } => rf_predict_proba(model, x),
            TrainedModel::Svm { model, .. } => model.decision_function(x),
        }
    }

    /// Scores the rows of `m`, reading columns by name.
    pub fn score(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        let idx = self
            .columns()
            .iter()
            .map(|c| {
                m.column_index(c).ok_or_else(|| {
                    ModelError::InvalidParameter(format!("feature matrix lacks column `{c}`"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.score_matrix(&m.x.select_cols(&idx))
    }
}
