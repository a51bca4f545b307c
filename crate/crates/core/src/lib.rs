//! Hospital readmission modelling from raw medical and pharmacy claims.
//!
//! The crate covers the whole batch pipeline: parsing the claim feeds,
//! grouping claims into admission episodes, labelling 30-day readmissions,
//! extracting per-admission predictors, encoding them into a design matrix,
//! fitting the classifiers and scoring them with ROC/AUC.

pub mod claims;
pub mod codes;
pub mod dataset;
pub mod episodes;
pub mod eval;
pub mod features;
pub mod icd9;
pub mod matrix;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod synth;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
