//! Python module `readmit`: the claims pipeline, the classifiers and the
//! metrics, with matrices passed as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use readmit_cli::{Cli, Command};
use readmit_core::claims::{
    parse_demographics, parse_medical_claims, parse_pharmacy_claims, ParseMode,
};
use readmit_core::codes::{CodeMappingConfig, Comorbidity};
use readmit_core::dataset::FeatureEncoder;
use readmit_core::episodes::{build_admissions as build, AdmissionSet, ReadmissionRate};
use readmit_core::eval;
use readmit_core::features::build_feature_rows;
use readmit_core::matrix::Matrix;
use readmit_core::models::{
    fit_linear_svm, fit_logistic, fit_pca, fit_random_forest, loglik_feature_select, pca_transform,
    predict_proba, rf_predict_proba, ForestParams, LinearSvmModel, LogisticConfig, LogisticModel,
    PcaTransform, RandomForestModel, SvmParams,
};
use readmit_core::synth::{
    generate as synth, write_dataset, GeneratorConfig, PlantedFeature, Signal,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(value_error(format!(
            "row {i} has {} values, expected {width}",
            rows[i].len()
        )));
    }
    Ok(Matrix::from_rows(&rows, width))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(value_error)
}

/// `(threshold, fpr, tpr)` triples, starting at `(inf, 0, 0)`.
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<(f64, f64, f64)>> {
    let points = eval::roc_curve(&scores, &labels).map_err(value_error)?;
    Ok(points.iter().map(|p| (p.threshold, p.fpr, p.tpr)).collect())
}

/// Sensitivity and specificity at `threshold`; `None` when undefined.
#[pyfunction]
fn confusion_metrics(
    scores: Vec<f64>,
    labels: Vec<bool>,
    threshold: f64,
) -> (Option<f64>, Option<f64>) {
    eval::confusion_metrics(&scores, &labels, threshold)
}

/// Readmissions as a percentage of all admissions.
#[pyfunction]
fn readmission_rate(total: usize, readmissions: usize) -> PyResult<f64> {
    ReadmissionRate::new(readmissions, total)
        .map(|r| r.percent())
        .map_err(|_| value_error("no admissions"))
}

#[pyclass(module = "readmit")]
struct LogisticRegression {
    inner: LogisticModel,
}

#[pymethods]
impl LogisticRegression {
    #[staticmethod]
    #[pyo3(signature = (x, y, l2_penalty=1e-4))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<bool>, l2_penalty: f64) -> PyResult<Self> {
        let config = LogisticConfig {
            l2_penalty,
            ..LogisticConfig::default()
        };
        let inner = fit_logistic(&matrix(x)?, &y, &config).map_err(value_error)?;
        Ok(LogisticRegression { inner })
    }

    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        predict_proba(&self.inner, &matrix(x)?).map_err(value_error)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.log.converged
    }
}

/// Column indices chosen by forward likelihood-ratio selection.
#[pyfunction]
#[pyo3(signature = (x, y, significance=0.05))]
fn select_features(x: Vec<Vec<f64>>, y: Vec<bool>, significance: f64) -> PyResult<Vec<usize>> {
    loglik_feature_select(&matrix(x)?, &y, significance, &LogisticConfig::default())
        .map(|s| s.columns)
        .map_err(value_error)
}

#[pyclass(module = "readmit")]
struct Pca {
    inner: PcaTransform,
}

#[pymethods]
impl Pca {
    #[staticmethod]
    #[pyo3(signature = (x, variance_target=0.95))]
    fn fit(x: Vec<Vec<f64>>, variance_target: f64) -> PyResult<Self> {
        let inner = fit_pca(&matrix(x)?, variance_target).map_err(value_error)?;
        Ok(Pca { inner })
    }

    fn transform(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(
            &pca_transform(&self.inner, &matrix(x)?).map_err(value_error)?,
        ))
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.inner.components.clone()
    }
}

#[pyclass(module = "readmit")]
struct RandomForest {
    inner: RandomForestModel,
}

#[pymethods]
impl RandomForest {
    #[staticmethod]
    #[pyo3(signature = (x, y, ntree=500, mtry=None, nodesize=1, maxnodes=None, seed=0))]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<bool>,
        ntree: usize,
        mtry: Option<usize>,
        nodesize: usize,
        maxnodes: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let x = matrix(x)?;
        let params = ForestParams {
            ntree,
            mtry: mtry.unwrap_or_else(|| ((x.cols() as f64).sqrt() as usize).max(1)),
            nodesize,
            maxnodes,
        };
        let inner = fit_random_forest(&x, &y, params, seed).map_err(value_error)?;
        Ok(RandomForest { inner })
    }

    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rf_predict_proba(&self.inner, &matrix(x)?).map_err(value_error)
    }

    /// Normalized Gini importance per input column.
    #[getter]
    fn importances(&self) -> Vec<f64> {
        self.inner.importances.clone()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }
}

#[pyclass(module = "readmit")]
struct LinearSvm {
    inner: LinearSvmModel,
}

#[pymethods]
impl LinearSvm {
    #[staticmethod]
    #[pyo3(signature = (x, y, c=1.0, epochs=20, seed=0))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<bool>, c: f64, epochs: usize, seed: u64) -> PyResult<Self> {
        let inner =
            fit_linear_svm(&matrix(x)?, &y, SvmParams { c, epochs }, seed).map_err(value_error)?;
        Ok(LinearSvm { inner })
    }

    fn decision_function(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner
            .decision_function(&matrix(x)?)
            .map_err(value_error)
    }

    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.inner.objective_trace.clone()
    }
}

fn load_set(
    medical: &str,
    gap_days: i64,
    window_days: i64,
) -> PyResult<(AdmissionSet, Vec<readmit_core::claims::MedicalClaim>)> {
    let file = std::fs::File::open(medical).map_err(value_error)?;
    let claims = parse_medical_claims(file, medical, ParseMode::Strict)
        .map_err(value_error)?
        .records;
    Ok((
        build(
            &claims,
            &CodeMappingConfig::default(),
            gap_days,
            window_days,
        ),
        claims,
    ))
}

/// Retained admissions as dicts with their readmission labels.
#[pyfunction]
#[pyo3(signature = (medical, gap_days=10, window_days=30))]
fn build_admissions<'py>(
    py: Python<'py>,
    medical: &str,
    gap_days: i64,
    window_days: i64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (set, _) = load_set(medical, gap_days, window_days)?;
    set.admissions
        .iter()
        .map(|a| {
            let d = PyDict::new(py);
            d.set_item("user_id", a.user_id())?;
            d.set_item("admission_id", &a.admission_id)?;
            d.set_item("start", a.start().to_string())?;
            d.set_item("end", a.end().to_string())?;
            d.set_item("is_ed", a.is_ed_admission)?;
            d.set_item("readmitted", a.readmitted_within_30d)?;
            Ok(d)
        })
        .collect()
}

/// Encoded design matrix: `(column_names, rows, labels, admission_ids)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn feature_matrix(
    medical: &str,
    pharmacy: &str,
    demographics: &str,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<bool>, Vec<(String, String)>)> {
    let mappings = CodeMappingConfig::default();
    let (set, claims) = load_set(medical, 10, 30)?;
    let ph = parse_pharmacy_claims(
        std::fs::File::open(pharmacy).map_err(value_error)?,
        pharmacy,
        ParseMode::Strict,
    )
    .map_err(value_error)?
    .records;
    let demo = parse_demographics(
        std::fs::File::open(demographics).map_err(value_error)?,
        demographics,
        ParseMode::Strict,
    )
    .map_err(value_error)?
    .records;
    let rows = build_feature_rows(&set, &claims, &ph, &demo, &mappings).map_err(value_error)?;
    let m = FeatureEncoder::new(mappings.ccs_map.category_ids())
        .encode(&rows)
        .map_err(value_error)?;
    let ids = m
        .row_ids
        .iter()
        .map(|r| (r.user_id.clone(), r.admission_id.clone()))
        .collect();
    Ok((m.column_names.clone(), to_rows(&m.x), m.target.clone(), ids))
}

fn planted(spec: &str) -> PyResult<PlantedFeature> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let bad = || value_error(format!("unknown planted feature `{spec}`"));
    Ok(match kind {
        "previous_admissions" => PlantedFeature::PreviousAdmissions,
        "previous_ed_admissions" => PlantedFeature::PreviousEdAdmissions,
        "length_of_stay" => PlantedFeature::LengthOfStay,
        "comorbidity" => PlantedFeature::Comorbidity {
            comorbidity: Comorbidity::ALL
                .into_iter()
                .find(|c| c.name() == arg)
                .ok_or_else(bad)?,
        },
        "medication" => PlantedFeature::Medication {
            category: arg.parse().map_err(|_| bad())?,
        },
        "procedure" => PlantedFeature::Procedure {
            ccs: arg.parse().map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    })
}

/// Writes synthetic claims into `out_dir`. `signals` pairs a feature spec
/// such as `"previous_admissions"` or `"comorbidity:CHF"` with an odds ratio.
#[pyfunction]
#[pyo3(signature = (out_dir, n_users=1000, seed=0, readmission_fraction=0.0465, signals=None))]
fn generate<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    n_users: usize,
    seed: u64,
    readmission_fraction: f64,
    signals: Option<Vec<(String, f64)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let signals = signals
        .unwrap_or_default()
        .iter()
        .map(|(f, or)| Ok(Signal::with_odds_ratio(planted(f)?, *or)))
        .collect::<PyResult<Vec<_>>>()?;
    let config = GeneratorConfig {
        n_users,
        seed,
        readmission_fraction,
        signals,
        ..GeneratorConfig::default()
    };
    let data = synth(&config, &CodeMappingConfig::default()).map_err(value_error)?;
    write_dataset(&out_dir, &data, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("users", data.demographics.len())?;
    d.set_item("admissions", data.truth.len())?;
    d.set_item("readmissions", data.readmissions())?;
    d.set_item("readmission_fraction", data.readmission_fraction())?;
    Ok(d)
}

/// Runs one CLI stage (`generate`, `episodes`, `features`, `train`,
/// `evaluate` or `all`); failures raise `RuntimeError` carrying the exit code.
#[pyfunction]
#[pyo3(signature = (command, config=None, out=None, seed=None, jobs=None, strict=false, threshold=None))]
fn run(
    command: &str,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
    strict: bool,
    threshold: Option<f64>,
) -> PyResult<()> {
    let command = match command {
        "generate" => Command::Generate,
        "episodes" => Command::Episodes,
        "features" => Command::Features,
        "train" => Command::Train,
        "evaluate" => Command::Evaluate,
        "all" => Command::All,
        other => return Err(value_error(format!("unknown command `{other}`"))),
    };
    let cli = Cli {
        config,
        seed,
        jobs,
        strict,
        threshold,
        out,
        command,
    };
    readmit_cli::run(&cli).map_err(|(stage, e)| {
        PyRuntimeError::new_err(format!("exit {} in {stage}: {e}", e.exit_code()))
    })
}

#[pymodule]
fn readmit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", readmit_core::VERSION)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(readmission_rate, m)?)?;
    m.add_function(wrap_pyfunction!(select_features, m)?)?;
    m.add_function(wrap_pyfunction!(build_admissions, m)?)?;
    m.add_function(wrap_pyfunction!(feature_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<LogisticRegression>()?;
    m.add_class::<Pca>()?;
    m.add_class::<RandomForest>()?;
    m.add_class::<LinearSvm>()?;
    Ok(())
}
