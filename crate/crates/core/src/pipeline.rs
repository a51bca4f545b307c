//! Training of the six reported model variants from one training matrix.

use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_kfold, FeatureMatrix, Fold};
use crate::matrix::Matrix;
use crate::models::{
    fit_linear_svm, fit_logistic, fit_pca, fit_random_forest, grid_search, loglik_feature_select,
    pca_transform, ForestGrid, GridSearchResult, LogisticConfig, LogisticModel, ModelConfig,
    ModelError, ParamGrid, SvmGrid, TrainedModel,
};
use crate::report::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrder {
    /// Select input columns, then run PCA on the survivors.
    #[default]
    SelectThenPca,
    /// Run PCA on every column, then select among the component scores.
    PcaThenSelect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub logistic: LogisticConfig,
    pub significance: f64,
    pub variance_target: f64,
    pub selection_order: SelectionOrder,
    pub forest_grid: ForestGrid,
    pub svm_grid: SvmGrid,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            logistic: LogisticConfig::default(),
            significance: 0.05,
            variance_target: 0.95,
            selection_order: SelectionOrder::default(),
            forest_grid: ForestGrid::default(),
            svm_grid: SvmGrid::default(),
            folds: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    /// One model per variant, in report order.
    pub models: Vec<(Variant, TrainedModel)>,
    /// Columns picked by likelihood-ratio selection, in inclusion order.
    pub selected_columns: Vec<String>,
    pub folds: Vec<Fold>,
    pub forest_search: GridSearchResult,
    pub svm_search: GridSearchResult,
}

fn logistic_on(columns: Vec<String>, model: LogisticModel) -> TrainedModel {
    TrainedModel::Logistic { columns, model }
}

fn pca_logistic(
    train: &FeatureMatrix,
    columns: Vec<String>,
    opts: &TrainOptions,
    select_components: bool,
) -> Result<TrainedModel, ModelError> {
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| train.column_index(c).expect("known column"))
        .collect();
    let x = train.x.select_cols(&idx);
    let pca = fit_pca(&x, opts.variance_target)?;
    let scores = pca_transform(&pca, &x)?;
    let components: Vec<usize> = if select_components {
        loglik_feature_select(&scores, &train.target, opts.significance, &opts.logistic)?.columns
    } else {
        (0..pca.n_components()).collect()
    };
    let model = fit_logistic(
        &scores.select_cols(&components),
        &train.target,
        &opts.logistic,
    )?;
    Ok(TrainedModel::PcaLogistic {
        columns,
        pca,
        components,
        model,
    })
}

/// The four logistic variants, in report order, with the columns chosen by
/// likelihood-ratio selection.
pub fn fit_logistic_variants(
    train: &FeatureMatrix,
    opts: &TrainOptions,
) -> Result<(Vec<(Variant, TrainedModel)>, Vec<String>), ModelError> {
    let y = &train.target;
    let all = train.column_names.clone();

    let lr_all = fit_logistic(&train.x, y, &opts.logistic)?;
    let selection = loglik_feature_select(&train.x, y, opts.significance, &opts.logistic)?;
    let selected_columns: Vec<String> = selection.columns.iter().map(|&j| all[j].clone()).collect();
    let lr_selected = fit_logistic(&train.x.select_cols(&selection.columns), y, &opts.logistic)?;

    let pca_lr = pca_logistic(train, all.clone(), opts, false)?;
    let pca_lr_selected = match opts.selection_order {
        SelectionOrder::PcaThenSelect => pca_logistic(train, all.clone(), opts, true)?,
        SelectionOrder::SelectThenPca if selected_columns.is_empty() => {
            // nothing to project: the regression is intercept-only
            logistic_on(
                Vec::new(),
                fit_logistic(&Matrix::zeros(train.n_rows(), 0), y, &opts.logistic)?,
            )
        }
        SelectionOrder::SelectThenPca => {
            pca_logistic(train, selected_columns.clone(), opts, false)?
        }
    };
    let models = vec![
        (Variant::LrAll, logistic_on(all, lr_all)),
        (
            Variant::LrSelected,
            logistic_on(selected_columns.clone(), lr_selected),
        ),
        (Variant::PcaLr, pca_lr),
        (Variant::PcaLrSelected, pca_lr_selected),
    ];
    Ok((models, selected_columns))
}

/// Fits LR on all columns and on the selected ones, both PCA regressions,
/// and the grid-searched forest and SVM refitted on all training rows.
pub fn train_variants(
    train: &FeatureMatrix,
    opts: &TrainOptions,
) -> Result<TrainingOutcome, ModelError> {
    let y = &train.target;
    let all = train.column_names.clone();
    let (mut models, selected_columns) = fit_logistic_variants(train, opts)?;

    let folds = stratified_kfold(y, opts.folds, opts.seed)
        .map_err(|e| ModelError::InvalidParameter(e.to_string()))?;
    let forest_search = grid_search(
        &train.x,
        y,
        &ParamGrid::Forest(opts.forest_grid.clone()),
        &folds,
        opts.seed,
    )?;
    let svm_search = grid_search(
        &train.x,
        y,
        &ParamGrid::Svm(opts.svm_grid.clone()),
        &folds,
        opts.seed,
    )?;
    let ModelConfig::Forest(rf_params) = forest_search.winner().config else {
        unreachable!("forest grid yields forest configurations")
    };
    let ModelConfig::Svm(svm_params) = svm_search.winner().config else {
        unreachable!("SVM grid yields SVM configurations")
    };
    let rf = fit_random_forest(&train.x, y, rf_params, opts.seed)?;
    let svm = fit_linear_svm(&train.x, y, svm_params, opts.seed)?;
    models.push((
        Variant::RfBest,
        TrainedModel::Forest {
            columns: all.clone(),
            model: rf,
        },
    ));
    models.push((
        Variant::SvmBest,
        TrainedModel::Svm {
            columns: all,
            model: svm,
        },
    ));

    Ok(TrainingOutcome {
        models,
        selected_columns,
        folds,
        forest_search,
        svm_search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RowId;
    use crate::report::{build_report, ReportOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(seed: u64, n: usize, offset: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let x = Matrix::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| f64::from(rng.random_range(0u8..3)))
                .collect(),
        );
        let target = x
            .iter_rows()
            .map(|r| rng.random::<f64>() < 0.1 + 0.2 * r[1])
            .collect();
        FeatureMatrix {
            column_names: (0..d).map(|j| format!("f{j}")).collect(),
            x,
            target,
            row_ids: (0..n)
                .map(|i| RowId {
                    user_id: format!("U{}", i + offset),
                    admission_id: "A1".into(),
                })
                .collect(),
        }
    }

    fn small_options() -> TrainOptions {
        TrainOptions {
            forest_grid: ForestGrid {
                ntree: vec![10, 5],
                mtry: vec![2],
                nodesize: vec![3],
                maxnodes: vec![10],
            },
            svm_grid: SvmGrid {
                c: vec![0.1, 1.0],
                epochs: 3,
            },
            folds: 3,
            seed: 4,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn six_variants_and_report_shape() {
        let train = matrix(1, 300, 0);
        let test = matrix(2, 100, 1000);
        let out = train_variants(&train, &small_options()).unwrap();
        let variants: Vec<Variant> = out.models.iter().map(|m| m.0).collect();
        assert_eq!(variants, Variant::ALL.to_vec());
        assert_eq!(out.selected_columns.first().map(String::as_str), Some("f1"));
        let report = build_report(&out.models, &train, &test, &ReportOptions::default()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
        for r in &report.rows {
            for m in [&r.train, &r.test] {
                assert!((0.0..=1.0).contains(&m.auc));
                assert!(m
                    .roc
                    .windows(2)
                    .all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
            }
        }
        let rerun = train_variants(&train, &small_options()).unwrap();
        let again = build_report(&rerun.models, &train, &test, &ReportOptions::default()).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn overlapping_rows_are_refused() {
        let train = matrix(1, 120, 0);
        let out = train_variants(&train, &small_options()).unwrap();
        assert!(build_report(
            &out.models,
            &train,
            &train.subset(&(0..20).collect::<Vec<_>>()),
            &ReportOptions::default()
        )
        .is_err());
    }

    #[test]
    fn alternative_selection_order() {
        let train = matrix(3, 200, 0);
        let opts = TrainOptions {
            selection_order: SelectionOrder::PcaThenSelect,
            ..small_options()
        };
        let out = train_variants(&train, &opts).unwrap();
        let TrainedModel::PcaLogistic {
            columns,
            components,
            pca,
            ..
        } = &out.models[3].1
        else {
            panic!("expected a PCA model")
        };
        assert_eq!(columns.len(), 5);
        assert!(components.iter().all(|&c| c < pca.n_components()));
    }
}
