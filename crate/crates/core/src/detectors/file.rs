//! Scores produced by an external detector, one per CSV row.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::series::{ScoreSeries, TimeSeries, MAX_SCORE};
use crate::{Error, Result};

/// Reads a score column. A first row that does not parse as a number is
/// treated as a header; every other row must hold a score in `[0, 1)`.
pub fn read_scores<R: Read>(reader: R, source: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row as u64 + 1, |p| p.line());
        let field = rec.get(0).unwrap_or("").trim();
        let value: f64 = match field.parse() {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line,
                    message: format!("not a number: {field:?}"),
                })
            }
        };
        if !(0.0..1.0).contains(&value) || value > MAX_SCORE {
            return Err(Error::Parse {
                path: source.to_string(),
                line,
                message: format!("score {value} outside [0, 1)"),
            });
        }
        out.push(value);
    }
    Ok(out)
}

/// Loads scores for `series`; the file must have exactly one row per point.
pub fn load_scores(path: &Path, series: &TimeSeries) -> Result<ScoreSeries> {
    let source = path.display().to_string();
    let scores = read_scores(File::open(path)?, &source)?;
    if scores.len() != series.len() {
        return Err(Error::Misaligned(format!(
            "{source} has {} scores, series {} has {} points",
            scores.len(),
            series.id(),
            series.len()
        )));
    }
    ScoreSeries::new(series.id(), series.start_index(), scores)
}

/// Looks up `<dir>/<series id>.csv`, whose rows cover the whole original
/// series from index 0, and returns the rows of the requested range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScores {
    pub dir: PathBuf,
}

impl FileScores {
    pub fn path_for(&self, series_id: &str) -> PathBuf {
        self.dir.join(format!("{series_id}.csv"))
    }

    pub fn score(&self, series: &TimeSeries) -> Result<ScoreSeries> {
        let path = self.path_for(series.id());
        let source = path.display().to_string();
        let all = read_scores(File::open(&path)?, &source)?;
        let full = ScoreSeries::new(series.id(), 0, all)?;
        full.slice(series.start_index(), series.end_index())
    }
}
