//! Loading config documents with field-path error messages.

use std::path::Path;

use hitl_core::datasets::SyntheticConfig;
use hitl_core::experiment::{DatasetSpec, ExperimentConfig};
use serde::de::DeserializeOwned;

use crate::{CliError, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `text`; on failure the error names the offending field path.
pub fn parse_document<T: DeserializeOwned>(text: &str, file: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Config {
            file: file.to_path_buf(),
            field: if field == "." { "(document)".into() } else { field },
            message: e.into_inner().to_string(),
        }
    })
}

fn invalid(file: &Path, field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        file: file.to_path_buf(),
        field: field.into(),
        message: message.into(),
    }
}

/// Reads and validates an experiment config. A KPI dataset path is resolved
/// relative to the config file.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = parse_document(&read(path)?, path)?;
    if let DatasetSpec::KpiCsv { path: data, .. } = &mut config.dataset {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
        if !data.is_file() {
            return Err(invalid(
                path,
                "dataset.path",
                format!("no such file: {}", data.display()),
            ));
        }
    }
    config
        .validate()
        .map_err(|e| invalid(path, "(document)", e.to_string()))?;
    Ok(config)
}

pub fn load_synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    let config: SyntheticConfig = parse_document(&read(path)?, path)?;
    config
        .validate()
        .map_err(|e| invalid(path, "(document)", e.to_string()))?;
    Ok(config)
}
