//! Exhaustive cross-validated grid search for the forest and the SVM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

use super::forest::{fit_random_forest, ForestParams, RandomForestModel};
use super::svm::{fit_linear_svm, SvmParams};
use super::ModelError;
use crate::dataset::Fold;
use crate::eval::roc_auc;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    RandomForest,
    LinearSvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGrid {
    pub ntree: Vec<usize>,
    pub mtry: Vec<usize>,
    pub nodesize: Vec<usize>,
    pub maxnodes: Vec<usize>,
}

impl Default for ForestGrid {
    /// The published parameter lists, `ntree` kept exactly as printed.
    fn default() -> Self {
        ForestGrid {
            ntree: vec![500, 1000, 150],
            mtry: vec![20, 30, 40, 50],
            nodesize: vec![1, 3, 7, 9],
            maxnodes: vec![200, 300],
        }
    }
}

impl ForestGrid {
    /// Cartesian product, `ntree` varying slowest and `maxnodes` fastest.
    pub fn configs(&self) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &ntree in &self.ntree {
            for &mtry in &self.mtry {
                for &nodesize in &self.nodesize {
                    for &maxnodes in &self.maxnodes {
                        out.push(ForestParams {
                            ntree,
                            mtry,
                            nodesize,
                            maxnodes: Some(maxnodes),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmGrid {
    pub c: Vec<f64>,
    pub epochs: usize,
}

impl Default for SvmGrid {
    fn default() -> Self {
        SvmGrid {
            c: vec![0.001, 0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0],
            epochs: SvmParams::default().epochs,
        }
    }
}

impl SvmGrid {
    pub fn configs(&self) -> Vec<SvmParams> {
        self.c
            .iter()
            .map(|&c| SvmParams {
                c,
                epochs: self.epochs,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamGrid {
    Forest(ForestGrid),
    Svm(SvmGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelConfig {
    Forest(ForestParams),
    Svm(SvmParams),
}

impl ParamGrid {
    pub fn family(&self) -> ModelFamily {
        match self {
            ParamGrid::Forest(_) => ModelFamily::RandomForest,
            ParamGrid::Svm(_) => ModelFamily::LinearSvm,
        }
    }

    pub fn configs(&self) -> Vec<ModelConfig> {
        match self {
            ParamGrid::Forest(g) => g.configs().into_iter().map(ModelConfig::Forest).collect(),
            ParamGrid::Svm(g) => g.configs().into_iter().map(ModelConfig::Svm).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config: ModelConfig,
    /// Validation AUC per fold, in fold order.
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: ModelFamily,
    /// One entry per configuration, in grid order.
    pub scores: Vec<ConfigScore>,
    /// Index of the winning configuration.
    pub best: usize,
}

impl GridSearchResult {
    pub fn winner(&self) -> &ConfigScore {
        &self.scores[self.best]
    }

    /// One row per configuration with per-fold and mean AUC.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let k = self.scores.first().map_or(0, |s| s.fold_auc.len());
        let mut out = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = vec!["config".into()];
        header.extend(
            match self.family {
                ModelFamily::RandomForest => &["ntree", "mtry", "nodesize", "maxnodes"][..],
                ModelFamily::LinearSvm => &["c", "epochs"][..],
            }
            .iter()
            .map(|s| s.to_string()),
        );
        header.extend((1..=k).map(|f| format!("fold_{f}_auc")));
        header.extend(["mean_auc".to_string(), "selected".to_string()]);
        out.write_record(&header)?;
        for (i, s) in self.scores.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            match s.config {
                ModelConfig::Forest(p) => row.extend([
                    p.ntree.to_string(),
                    p.mtry.to_string(),
                    p.nodesize.to_string(),
                    p.maxnodes.map_or("none".to_string(), |m| m.to_string()),
                ]),
                ModelConfig::Svm(p) => row.extend([p.c.to_string(), p.epochs.to_string()]),
            }
            row.extend(s.fold_auc.iter().map(f64::to_string));
            row.push(s.mean_auc.to_string());
            row.push(u8::from(i == self.best).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Seed for the fit on fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Positive-class score of the first `k` trees.
fn forest_prefix_scores(model: &RandomForestModel, x: &Matrix, k: usize) -> Vec<f64> {
    x.iter_rows()
        .map(|row| {
            model.trees[..k]
                .iter()
                .map(|t| t.predict_row(row))
                .sum::<f64>()
                / k as f64
        })
        .collect()
}

/// Scores every configuration on every fold and picks the highest mean
/// validation AUC, earliest grid position on ties. Forests that differ only
/// in `ntree` share trees: tree `t` depends on the seed and `t` alone, so one
/// fit of the largest `ntree` is scored on each prefix.
pub fn grid_search(
    x: &Matrix,
    y: &[bool],
    grid: &ParamGrid,
    folds: &[Fold],
    seed: u64,
) -> Result<GridSearchResult, ModelError> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(ModelError::InvalidParameter(
            "parameter grid is empty".into(),
        ));
    }
    if folds.is_empty() {
        return Err(ModelError::InvalidParameter("no folds to evaluate".into()));
    }
    for c in &configs {
        match c {
            ModelConfig::Forest(p) => p.validate(x.cols())?,
            ModelConfig::Svm(p) => {
                if !(p.c > 0.0 && p.c.is_finite()) || p.epochs == 0 {
                    return Err(ModelError::InvalidParameter(format!(
                        "SVM configuration {p:?} is infeasible"
                    )));
                }
            }
        }
    }

    // (config index, fold index) -> AUC
    let mut auc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    match grid.family() {
        ModelFamily::RandomForest => {
            let mut groups: BTreeMap<(usize, usize, Option<usize>), Vec<usize>> = BTreeMap::new();
            for (i, c) in configs.iter().enumerate() {
                if let ModelConfig::Forest(p) = c {
                    groups
                        .entry((p.mtry, p.nodesize, p.maxnodes))
                        .or_default()
                        .push(i);
                }
            }
            let jobs: Vec<(&Vec<usize>, usize)> = groups
                .values()
                .flat_map(|g| (0..folds.len()).map(move |f| (g, f)))
                .collect();
            let results: Vec<Vec<((usize, usize), f64)>> = jobs
                .par_iter()
                .map(|&(members, f)| {
                    let fold = &folds[f];
                    let ntree = |i: usize| match configs[i] {
                        ModelConfig::Forest(p) => p,
                        ModelConfig::Svm(_) => unreachable!(),
                    };
                    let largest = members
                        .iter()
                        .map(|&i| ntree(i).ntree)
                        .max()
                        .expect("non-empty group");
                    let params = ForestParams {
                        ntree: largest,
                        ..ntree(members[0])
                    };
                    let model = fit_random_forest(
                        &x.select_rows(&fold.fit),
                        &select(y, &fold.fit),
                        params,
                        fold_seed(seed, f),
                    )?;
                    let xv = x.select_rows(&fold.validation);
                    let yv = select(y, &fold.validation);
                    members
                        .iter()
                        .map(|&i| {
                            let scores = forest_prefix_scores(&model, &xv, ntree(i).ntree);
                            Ok(((i, f), roc_auc(&scores, &yv)?))
                        })
                        .collect()
                })
                .collect::<Result<_, ModelError>>()?;
            auc.extend(results.into_iter().flatten());
        }
        ModelFamily::LinearSvm => {
            let jobs: Vec<(usize, usize)> = (0..configs.len())
                .flat_map(|i| (0..folds.len()).map(move |f| (i, f)))
                .collect();
            let results: Vec<((usize, usize), f64)> = jobs
                .par_iter()
                .map(|&(i, f)| {
                    let ModelConfig::Svm(p) = configs[i] else {
                        unreachable!()
                    };
                    let fold = &folds[f];
                    let model = fit_linear_svm(
                        &x.select_rows(&fold.fit),
                        &select(y, &fold.fit),
                        p,
                        fold_seed(seed, f),
                    )?;
                    let scores = model.decision_function(&x.select_rows(&fold.validation))?;
                    Ok(((i, f), roc_auc(&scores, &select(y, &fold.validation))?))
                })
                .collect::<Result<_, ModelError>>()?;
            auc.extend(results);
        }
    }

    let scores: Vec<ConfigScore> = configs
        .iter()
        .enumerate()
        .map(|(i, &config)| {
            let fold_auc: Vec<f64> = (0..folds.len()).map(|f| auc[&(i, f)]).collect();
            let mean_auc = fold_auc.iter().sum::<f64>() / fold_auc.len() as f64;
            ConfigScore {
                config,
                fold_auc,
                mean_auc,
            }
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_auc > scores[best].mean_auc {
            best = i;
        }
    }
    Ok(GridSearchResult {
        family: grid.family(),
        scores,
        best,
    })
}

fn select(y: &[bool], idx: &[usize]) -> Vec<bool> {
    idx.iter().map(|&i| y[i]).collect()
}
