//! `run` and `generate`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use hitl_core::datasets::{generate_synthetic, write_kpi_csv, KpiColumns, SyntheticConfig};
use hitl_core::detectors::{DetectorKind, DetectorSpec};
use hitl_core::experiment::{format_table, run_config, ExperimentConfig, ResultsDocument};

use crate::{CliError, Result};

/// Command line overrides applied on top of a config document.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub detector: Option<DetectorKind>,
}

pub fn apply_overrides(mut config: ExperimentConfig, overrides: &RunOverrides) -> ExperimentConfig {
    if let Some(seed) = overrides.seed {
        config.seeds = vec![seed];
    }
    if let Some(kind) = overrides.detector {
        config.detectors = vec![config
            .detectors
            .iter()
            .find(|d| d.kind() == kind)
            .cloned()
            .unwrap_or_else(|| DetectorSpec::default_for(kind))];
    }
    config
}

/// Serialized results; the same config always yields the same bytes.
pub fn results_json(doc: &ResultsDocument) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn run(config: &ExperimentConfig, out: &Path) -> Result<ResultsDocument> {
    let doc = run_config(config)?;
    std::fs::write(out, results_json(&doc)?).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    print!("{}", format_table(&doc));
    Ok(doc)
}

/// Writes every generated series into one multi-series CSV.
pub fn generate(config: &SyntheticConfig, out: &Path) -> Result<usize> {
    let series = generate_synthetic(config)?;
    let file = File::create(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    write_kpi_csv(BufWriter::new(file), &series, &KpiColumns::default())?;
    Ok(series.len())
}
