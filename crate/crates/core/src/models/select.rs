//! Forward selection driven by likelihood-ratio tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::logistic::{fit_logistic, fit_logistic_from, LogisticConfig, LogisticModel};
use super::ModelError;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub column: usize,
    /// `2 * (nll_before - nll_after)`.
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Selection {
    /// Selected column indices in inclusion order.
    pub columns: Vec<usize>,
    pub steps: Vec<SelectionStep>,
    /// Constant columns never offered as candidates.
    pub skipped_constant: Vec<usize>,
}

fn is_constant(x: &Matrix, j: usize) -> bool {
    let first = x.get(0, j);
    (1..x.rows()).all(|i| x.get(i, j) == first)
}

/// Greedy forward selection. Each round refits the current model plus every
/// remaining candidate, keeps the one with the largest likelihood-ratio
/// statistic and stops once its 1-dof chi-square p-value reaches
/// `significance`. Equal statistics go to the lower column index.
pub fn loglik_feature_select(
    x: &Matrix,
    y: &[bool],
    significance: f64,
    config: &LogisticConfig,
) -> Result<Selection, ModelError> {
    if !(significance > 0.0 && significance <= 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "significance {significance} must lie in (0, 1]"
        )));
    }
    let mut selection = Selection::default();
    if x.cols() == 0 {
        return Ok(selection);
    }
    let null_x = Matrix::zeros(x.rows(), 0);
    let mut current: LogisticModel = fit_logistic(&null_x, y, config)?;
    let (candidates, skipped): (Vec<usize>, Vec<usize>) =
        (0..x.cols()).partition(|&j| !is_constant(x, j));
    selection.skipped_constant = skipped;
    let mut remaining = candidates;
    let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");

    while !remaining.is_empty() {
        let fits: Vec<(usize, LogisticModel)> = remaining
            .par_iter()
            .map(|&j| {
                let mut cols = selection.columns.clone();
                cols.push(j);
                let sub = x.select_cols(&cols);
                let mut start = current.weights.clone();
                start.push(0.0);
                fit_logistic_from(&sub, y, config, Some((&start, current.intercept)))
                    .map(|m| (j, m))
            })
            .collect::<Result<_, _>>()?;
        let mut best: Option<(usize, f64, &LogisticModel)> = None;
        for (j, m) in &fits {
            let stat = (2.0 * (current.log.neg_log_likelihood - m.log.neg_log_likelihood)).max(0.0);
            if best.is_none_or(|(_, s, _)| stat > s) {
                best = Some((*j, stat, m));
            }
        }
        let (column, statistic, model) = best.expect("non-empty candidate set");
        let p_value = chi2.sf(statistic);
        if p_value >= significance {
            break;
        }
        selection.columns.push(column);
        selection.steps.push(SelectionStep {
            column,
            statistic,
            p_value,
        });
        current = model.clone();
        remaining.retain(|&j| j != column);
    }
    Ok(selection)
}
