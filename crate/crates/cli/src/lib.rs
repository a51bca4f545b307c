//! Staged command-line driver: generate, episodes, features, train, evaluate.
//!
//! Every stage writes into its own directory under the output root together
//! with a `manifest.json` holding the config hash, tool versions and SHA-256
//! digests of what it read and wrote.

pub mod config;
pub mod error;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use readmit_core::claims::{
    parse_demographics, parse_medical_claims, parse_pharmacy_claims, DemographicRecord,
    MedicalClaim, ParseError, ParseMode, Parsed, PharmacyClaim,
};
use readmit_core::codes::{load_code_mappings, CodeMappingConfig};
use readmit_core::dataset::{
    read_row_ids, train_test_split, write_row_ids, FeatureEncoder, FeatureMatrix, SplitSpec,
};
use readmit_core::episodes::{
    build_admissions, read_admissions, write_admissions, AdmissionRow, AdmissionSet,
};
use readmit_core::features::{build_feature_rows, read_features, write_features};
use readmit_core::models::{read_model, rf_importances, write_model, TrainedModel};
use readmit_core::pipeline::train_variants;
use readmit_core::report::{build_report, ReportOptions, Variant};
use readmit_core::synth::{generate, write_tables};
use serde::Serialize;
use serde_json::{json, Value};

use config::{sha256_hex, DATA_DIR, EPISODES_DIR, FEATURES_DIR, MODELS_DIR, REPORT_DIR};
pub use config::{Overrides, RunConfig};
use error::diagnostic;
pub use error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RUN_CONFIG: &str = "run_config.json";
pub const ADMISSIONS_FILE: &str = "admissions.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const TRAIN_ROWS: &str = "train_rows.csv";
pub const TEST_ROWS: &str = "test_rows.csv";
pub const RF_GRID: &str = "rf_grid.csv";
pub const SVM_GRID: &str = "svm_grid.csv";
pub const RF_IMPORTANCES: &str = "rf_importances.csv";
pub const SELECTED_COLUMNS: &str = "selected_columns.csv";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(
    name = "readmit",
    version,
    about = "30-day readmission modelling from claims data"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation, splitting, folds and model fitting.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Fail on the first malformed input row instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Classification cut-off on predicted probabilities.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Output root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write synthetic claims, pharmacy and demographics tables.
    Generate,
    /// Group claims into admissions and label readmissions.
    Episodes,
    /// Extract per-admission predictors.
    Features,
    /// Split, fit the six model variants and run the grid searches.
    Train,
    /// Score the trained models on both splits.
    Evaluate,
    /// Every stage in order; generation only when no inputs are configured.
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Episodes => "episodes",
            Command::Features => "features",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::All => "all",
        }
    }
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            jobs: self.jobs,
            strict: self.strict,
            threshold: self.threshold,
            out: self.out.clone(),
        }
    }
}

/// Loads the config and runs the command on a pool capped at `jobs` threads.
pub fn run(cli: &Cli) -> Result<(), (String, CliError)> {
    let name = cli.command.name().to_string();
    let config =
        RunConfig::load(cli.config.as_deref(), &cli.overrides()).map_err(|e| (name.clone(), e))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = config.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| {
        (
            name.clone(),
            CliError::Usage(format!("cannot start worker pool: {e}")),
        )
    })?;
    pool.install(|| run_command(cli.command, &config))
}

pub fn run_command(command: Command, config: &RunConfig) -> Result<(), (String, CliError)> {
    let stage = |c: Command| -> Result<(), (String, CliError)> {
        let result = match c {
            Command::Generate => cmd_generate(config),
            Command::Episodes => cmd_episodes(config),
            Command::Features => cmd_features(config),
            Command::Train => cmd_train(config),
            Command::Evaluate => cmd_evaluate(config),
            Command::All => unreachable!(),
        };
        result.map_err(|e| (c.name().to_string(), e))
    };
    match command {
        Command::All => {
            config
                .validate_grids()
                .map_err(|e| ("all".to_string(), e))?;
            if config.inputs.is_unset() {
                stage(Command::Generate)?;
            }
            for c in [
                Command::Episodes,
                Command::Features,
                Command::Train,
                Command::Evaluate,
            ] {
                stage(c)?;
            }
            Ok(())
        }
        c => stage(c),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with<F, E>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    E: std::fmt::Display,
{
    let mut sink = create(path)?;
    f(&mut sink).map_err(|e| CliError::MissingInput {
        path: path.display().to_string(),
        message: format!("write failed: {e}"),
    })?;
    sink.flush().map_err(|e| CliError::io(path, e))
}

/// Path as recorded in a manifest: relative to the output root when inside it.
fn display_path(config: &RunConfig, path: &Path) -> String {
    path.strip_prefix(&config.out)
        .unwrap_or(path)
        .display()
        .to_string()
}

fn digest(path: &Path) -> Result<String, CliError> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    stage: &'static str,
    tool: &'static str,
    tool_version: &'static str,
    core_version: &'static str,
    config_hash: String,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    details: Value,
}

fn write_manifest(
    config: &RunConfig,
    stage: &'static str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    details: Value,
) -> Result<(), CliError> {
    let files = |paths: &[PathBuf]| -> Result<Vec<FileDigest>, CliError> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: display_path(config, p),
                    sha256: digest(p)?,
                })
            })
            .collect()
    };
    let manifest = Manifest {
        stage,
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: readmit_core::VERSION,
        config_hash: config.hash(),
        seed: config.seed,
        inputs: files(inputs)?,
        outputs: files(outputs)?,
        details,
    };
    let dir = config.stage_dir(stage);
    write_with(&dir.join(MANIFEST), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)
    })?;
    write_with(&config.out.join(RUN_CONFIG), |w| {
        writeln!(w, "{}", config.to_json())
    })
}

fn mappings(config: &RunConfig) -> Result<CodeMappingConfig, CliError> {
    for p in [&config.mappings.comorbidity, &config.mappings.ccs]
        .into_iter()
        .flatten()
    {
        if !p.exists() {
            return Err(CliError::MissingInput {
                path: p.display().to_string(),
                message: "mapping file not found".into(),
            });
        }
    }
    load_code_mappings(&config.mappings).map_err(|e| CliError::Schema {
        file: "code mappings".into(),
        message: e.to_string(),
    })
}

fn parse_input<T>(
    config: &RunConfig,
    stage: &str,
    path: &Path,
    parse: impl FnOnce(BufReader<File>, &str, ParseMode) -> Result<Parsed<T>, ParseError>,
) -> Result<(Vec<T>, usize), CliError> {
    let mode = if config.strict {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    };
    let name = path.display().to_string();
    let parsed = parse(open(path)?, &name, mode).map_err(|e| match e {
        ParseError::Row { file, error } => CliError::Schema {
            file,
            message: error.to_string(),
        },
        other => CliError::schema(path, other),
    })?;
    for row in &parsed.skipped {
        eprintln!(
            "{}",
            diagnostic(
                "warning",
                stage,
                &[
                    ("file", name.clone()),
                    ("line", row.line.to_string()),
                    ("message", row.message.clone())
                ]
            )
        );
    }
    Ok((parsed.records, parsed.skipped.len()))
}

struct Inputs {
    medical: Vec<MedicalClaim>,
    pharmacy: Vec<PharmacyClaim>,
    demographics: Vec<DemographicRecord>,
    skipped: usize,
}

fn load_inputs(
    config: &RunConfig,
    stage: &str,
    with_side_tables: bool,
) -> Result<Inputs, CliError> {
    let (medical, mut skipped) =
        parse_input(config, stage, &config.medical_path(), parse_medical_claims)?;
    let mut inputs = Inputs {
        medical,
        pharmacy: Vec::new(),
        demographics: Vec::new(),
        skipped: 0,
    };
    if with_side_tables {
        let (pharmacy, s1) = parse_input(
            config,
            stage,
            &config.pharmacy_path(),
            parse_pharmacy_claims,
        )?;
        let (demographics, s2) = parse_input(
            config,
            stage,
            &config.demographics_path(),
            parse_demographics,
        )?;
        inputs.pharmacy = pharmacy;
        inputs.demographics = demographics;
        skipped += s1 + s2;
    }
    inputs.skipped = skipped;
    Ok(inputs)
}

fn admissions(
    config: &RunConfig,
    medical: &[MedicalClaim],
    mappings: &CodeMappingConfig,
) -> AdmissionSet {
    build_admissions(
        medical,
        mappings,
        config.episodes.gap_days,
        config.episodes.window_days,
    )
}

pub fn cmd_generate(config: &RunConfig) -> Result<(), CliError> {
    let mappings = mappings(config)?;
    let data =
        generate(&config.generator, &mappings).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = config.stage_dir(DATA_DIR);
    let files = write_tables(&dir, &data).map_err(|e| CliError::io(&dir, e))?;
    let outputs: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    let details =
        serde_json::to_value(data.summary(&config.generator)).expect("summary serializes");
    write_manifest(config, DATA_DIR, &[], &outputs, details)
}

pub fn cmd_episodes(config: &RunConfig) -> Result<(), CliError> {
    let mappings = mappings(config)?;
    let inputs = load_inputs(config, EPISODES_DIR, false)?;
    let set = admissions(config, &inputs.medical, &mappings);
    let out = config.stage_dir(EPISODES_DIR).join(ADMISSIONS_FILE);
    write_with(&out, |w| write_admissions(w, &set.admissions))?;
    let rate = set.rate().ok();
    let details = json!({
        "claims": inputs.medical.len(),
        "skipped_rows": inputs.skipped,
        "episodes": set.episode_count,
        "admissions": set.admissions.len(),
        "readmissions": set.readmissions.len(),
        "readmission_rate_percent": rate.map(|r| r.percent()),
    });
    write_manifest(
        config,
        EPISODES_DIR,
        &[config.medical_path()],
        &[out],
        details,
    )
}

pub fn cmd_features(config: &RunConfig) -> Result<(), CliError> {
    let admissions_path = config.stage_dir(EPISODES_DIR).join(ADMISSIONS_FILE);
    let recorded = read_admissions(open(&admissions_path)?)
        .map_err(|e| CliError::schema(&admissions_path, e))?;
    let mappings = mappings(config)?;
    let inputs = load_inputs(config, FEATURES_DIR, true)?;
    let set = admissions(config, &inputs.medical, &mappings);
    let rebuilt: Vec<AdmissionRow> = set.admissions.iter().map(AdmissionRow::from).collect();
    if rebuilt != recorded {
        return Err(CliError::schema(
            &admissions_path,
            "does not match the claims input; rerun the episodes stage",
        ));
    }
    let rows = build_feature_rows(
        &set,
        &inputs.medical,
        &inputs.pharmacy,
        &inputs.demographics,
        &mappings,
    )
    .map_err(|e| CliError::schema(&config.demographics_path(), e))?;
    let out = config.stage_dir(FEATURES_DIR).join(FEATURES_FILE);
    write_with(&out, |w| write_features(w, &rows))?;
    let details = json!({
        "rows": rows.len(),
        "positives": rows.iter().filter(|r| r.readmitted_within_30d).count(),
        "skipped_rows": inputs.skipped,
    });
    let inputs = [
        admissions_path,
        config.medical_path(),
        config.pharmacy_path(),
        config.demographics_path(),
    ];
    write_manifest(config, FEATURES_DIR, &inputs, &[out], details)
}

fn load_matrix(
    config: &RunConfig,
    mappings: &CodeMappingConfig,
) -> Result<(PathBuf, FeatureMatrix), CliError> {
    let path = config.stage_dir(FEATURES_DIR).join(FEATURES_FILE);
    let rows = read_features(open(&path)?).map_err(|e| CliError::schema(&path, e))?;
    let matrix = FeatureEncoder::new(mappings.ccs_map.category_ids())
        .encode(&rows)
        .map_err(|e| CliError::schema(&path, e))?;
    Ok((path, matrix))
}

fn model_path(config: &RunConfig, v: Variant) -> PathBuf {
    config
        .stage_dir(MODELS_DIR)
        .join(format!("{}.model", v.key()))
}

fn model_error(e: impl std::fmt::Display) -> CliError {
    CliError::Model(e.to_string())
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    config.validate_grids()?;
    let mappings = mappings(config)?;
    let (features_path, m) = load_matrix(config, &mappings)?;
    let spec = SplitSpec {
        train_fraction: config.split.train_fraction,
        seed: config.seed,
        fold_count: config.train.folds,
        user_level: config.split.user_level,
    };
    let split = train_test_split(&m, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let train = m.subset(&split.train);
    let outcome = train_variants(&train, &config.train).map_err(model_error)?;

    let dir = config.stage_dir(MODELS_DIR);
    let mut outputs = Vec::new();
    for (v, model) in &outcome.models {
        let path = model_path(config, *v);
        write_with(&path, |w| write_model(w, model))?;
        outputs.push(path);
    }
    let path = dir.join(RF_GRID);
    write_with(&path, |w| outcome.forest_search.write_csv(w))?;
    outputs.push(path);
    let path = dir.join(SVM_GRID);
    write_with(&path, |w| outcome.svm_search.write_csv(w))?;
    outputs.push(path);

    let path = dir.join(RF_IMPORTANCES);
    let forest = outcome.models.iter().find_map(|(_, model)| match model {
        TrainedModel::Forest { columns, model } => Some((columns, model)),
        _ => None,
    });
    let (columns, forest) = forest.expect("forest variant trained");
    write_with(&path, |w| -> std::io::Result<()> {
        writeln!(w, "rank,column,importance")?;
        for (rank, (j, imp)) in rf_importances(forest).into_iter().enumerate() {
            writeln!(w, "{},{},{imp}", rank + 1, columns[j])?;
        }
        Ok(())
    })?;
    outputs.push(path);
    let path = dir.join(SELECTED_COLUMNS);
    write_with(&path, |w| -> std::io::Result<()> {
        writeln!(w, "order,column")?;
        for (i, c) in outcome.selected_columns.iter().enumerate() {
            writeln!(w, "{},{c}", i + 1)?;
        }
        Ok(())
    })?;
    outputs.push(path);
    for (name, rows) in [(TRAIN_ROWS, &split.train), (TEST_ROWS, &split.test)] {
        let path = dir.join(name);
        write_with(&path, |w| write_row_ids(w, &m, rows))?;
        outputs.push(path);
    }

    let details = json!({
        "train_rows": split.train.len(),
        "test_rows": split.test.len(),
        "train_positives": train.positives(),
        "columns": m.n_cols(),
        "selected_columns": outcome.selected_columns.len(),
        "forest_configs": outcome.forest_search.scores.len(),
        "svm_configs": outcome.svm_search.scores.len(),
        "forest_best": outcome.forest_search.winner().config,
        "forest_best_cv_auc": outcome.forest_search.winner().mean_auc,
        "svm_best": outcome.svm_search.winner().config,
        "svm_best_cv_auc": outcome.svm_search.winner().mean_auc,
    });
    write_manifest(config, MODELS_DIR, &[features_path], &outputs, details)
}

fn rows_by_id(m: &FeatureMatrix, path: &Path) -> Result<Vec<usize>, CliError> {
    let index: HashMap<_, usize> = m
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let ids = read_row_ids(open(path)?).map_err(|e| CliError::schema(path, e))?;
    ids.iter()
        .map(|id| {
            index.get(id).copied().ok_or_else(|| {
                CliError::schema(
                    path,
                    format!(
                        "admission {}/{} is not in the features",
                        id.user_id, id.admission_id
                    ),
                )
            })
        })
        .collect()
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(), CliError> {
    let mappings = mappings(config)?;
    let (features_path, m) = load_matrix(config, &mappings)?;
    let models_dir = config.stage_dir(MODELS_DIR);
    let train_path = models_dir.join(TRAIN_ROWS);
    let test_path = models_dir.join(TEST_ROWS);
    let train = m.subset(&rows_by_id(&m, &train_path)?);
    let test = m.subset(&rows_by_id(&m, &test_path)?);
    let mut inputs = vec![features_path, train_path, test_path];
    let mut models = Vec::new();
    for v in Variant::ALL {
        let path = model_path(config, v);
        let model = read_model(open(&path)?).map_err(|e| CliError::schema(&path, e))?;
        models.push((v, model));
        inputs.push(path);
    }
    let options = ReportOptions {
        threshold: config.threshold,
        svm_threshold: config.svm_threshold,
    };
    let report = build_report(&models, &train, &test, &options).map_err(model_error)?;
    let dir = config.stage_dir(REPORT_DIR);
    let path = dir.join(REPORT_FILE);
    write_with(&path, |w| report.write_csv(w))?;
    let mut outputs = vec![path];
    outputs.extend(
        report
            .write_roc_files(&dir)
            .map_err(|e| CliError::io(&dir, e))?,
    );
    let details: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({"model": r.variant.label(), "train_auc": r.train.auc, "test_auc": r.test.auc}))
        .collect();
    write_manifest(config, REPORT_DIR, &inputs, &outputs, Value::Array(details))
}
