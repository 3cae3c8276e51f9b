//! Benchmark data: the synthetic up/down spike generator and KPI CSV files.
//!
//! The synthetic benchmark injects sharp increases and sharp decreases into
//! i.i.d. standard normal noise but only labels the decreases, so a detector
//! that flags every statistical outlier is right about half of its spikes at
//! best. Learning that preference from feedback is the whole game.
//!
//! KPI files use the four-column layout of the public AIOps KPI challenge
//! (`timestamp,value,label,KPI ID`). Column names are configurable.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, seeded};
use crate::series::TimeSeries;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_series: usize,
    pub points_per_series: usize,
    /// Fraction of points that receive a spike.
    pub anomaly_rate: f64,
    /// Spike magnitude bounds in units of the noise standard deviation.
    pub spike_magnitude_range: (f64, f64),
    /// Force exactly `⌊n/2⌋` decreases instead of a fair coin per spike.
    pub exact_split: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_series: 100,
            points_per_series: 200_000,
            anomaly_rate: 0.003,
            spike_magnitude_range: (5.0, 10.0),
            exact_split: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_series == 0 || self.points_per_series == 0 {
            return bad("num_series and points_per_series must be positive".into());
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return bad(format!("anomaly_rate = {} not in (0, 1)", self.anomaly_rate));
        }
        if self.anomaly_rate * (self.points_per_series as f64) < 2.0 {
            return bad(format!(
                "anomaly_rate * points_per_series = {} < 2; need room for an up and a down spike",
                self.anomaly_rate * self.points_per_series as f64
            ));
        }
        let (lo, hi) = self.spike_magnitude_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("spike_magnitude_range ({lo}, {hi}) must satisfy 0 < low <= high"));
        }
        Ok(())
    }

    pub fn injections_per_series(&self) -> usize {
        (self.anomaly_rate * self.points_per_series as f64).floor() as usize
    }
}

/// Generates labeled synthetic series. Deterministic given `config.seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<TimeSeries>> {
    config.validate()?;
    (0..config.num_series)
        .map(|s| generate_one(config, s))
        .collect()
}

fn generate_one(config: &SyntheticConfig, series: usize) -> Result<TimeSeries> {
    let mut rng = seeded(derive_seed(config.seed, series as u64));
    let n = config.points_per_series;
    let mut values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut labels = vec![false; n];

    let count = config.injections_per_series();
    let positions = rand::seq::index::sample(&mut rng, n, count).into_vec();
    let downs: Vec<bool> = if config.exact_split {
        let mut d: Vec<bool> = (0..count).map(|j| j < count / 2).collect();
        d.shuffle(&mut rng);
        d
    } else {
        (0..count).map(|_| rng.random_bool(0.5)).collect()
    };
    let (lo, hi) = config.spike_magnitude_range;
    for (&pos, &down) in positions.iter().zip(&downs) {
        let magnitude = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        if down {
            values[pos] -= magnitude;
            labels[pos] = true;
        } else {
            values[pos] += magnitude;
        }
    }
    TimeSeries::with_labels(format!("synthetic-{series:03}"), 0, values, labels)
}

/// Header names of the four KPI columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpiColumns {
    pub timestamp: String,
    pub value: String,
    pub label: String,
    pub kpi_id: String,
}

impl Default for KpiColumns {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
            label: "label".into(),
            kpi_id: "KPI ID".into(),
        }
    }
}

/// One row of a KPI file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub timestamp: i64,
    pub value: f64,
    pub label: u8,
    pub kpi_id: String,
}

/// A loaded KPI series plus its timestamps and which rows were gap-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiSeries {
    pub series: TimeSeries,
    pub timestamps: Vec<i64>,
    pub interpolated: Vec<bool>,
}

/// Loads a KPI file into one labeled series per KPI id, ordered by id.
pub fn load_kpi_csv(path: impl AsRef<Path>, columns: &KpiColumns) -> Result<Vec<TimeSeries>> {
    Ok(load_kpi_series(path, columns)?
        .into_iter()
        .map(|k| k.series)
        .collect())
}

pub fn load_kpi_series(path: impl AsRef<Path>, columns: &KpiColumns) -> Result<Vec<KpiSeries>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_kpi(file, &path.display().to_string(), columns)
}

/// Parses KPI rows from any reader; `source` names it in error messages.
pub fn read_kpi<R: Read>(reader: R, source: &str, columns: &KpiColumns) -> Result<Vec<KpiSeries>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
    };
    let (ts_col, val_col, lab_col, id_col) = (
        col(&columns.timestamp)?,
        col(&columns.value)?,
        col(&columns.label)?,
        col(&columns.kpi_id)?,
    );

    // kpi id -> (timestamp, value, label, line)
    let mut groups: BTreeMap<String, Vec<(i64, f64, bool, u64)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| row.get(c).unwrap_or("");
        let ts = parse_timestamp(field(ts_col))
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", field(ts_col))))?;
        let value: f64 = field(val_col)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("bad value `{}`", field(val_col))))?;
        let label = match field(lab_col) {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("bad label `{other}`"))),
        };
        groups
            .entry(field(id_col).to_string())
            .or_default()
            .push((ts, value, label, line));
    }

    let mut out = Vec::with_capacity(groups.len());
    for (id, mut rows) in groups {
        rows.sort_by_key(|r| r.0);
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(parse_err(
                    w[1].3,
                    format!("duplicate timestamp {} for KPI {id} (also line {})", w[1].0, w[0].3),
                ));
            }
        }
        out.push(fill_gaps(&id, &rows)?);
    }
    Ok(out)
}

fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    // Some exports write integral timestamps as floats.
    s.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite() && t.fract() == 0.0)
        .map(|t| t as i64)
}

fn modal_spacing(rows: &[(i64, f64, bool, u64)]) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in rows.windows(2) {
        *counts.entry(w[1].0 - w[0].0).or_default() += 1;
    }
    // Highest count wins; ties go to the smaller spacing.
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(d, _)| d)
}

fn fill_gaps(id: &str, rows: &[(i64, f64, bool, u64)]) -> Result<KpiSeries> {
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut interpolated = Vec::with_capacity(rows.len());
    let step = modal_spacing(rows);
    let mut filled = 0usize;
    for (j, &(ts, v, l, _)) in rows.iter().enumerate() {
        if let (Some(step), Some(&(prev_ts, prev_v, _, _))) = (step, j.checked_sub(1).map(|p| &rows[p])) {
            let missing = (ts - prev_ts) / step - 1;
            for g in 1..=missing {
                let frac = g as f64 / (missing + 1) as f64;
                timestamps.push(prev_ts + g * step);
                values.push(prev_v + frac * (v - prev_v));
                labels.push(false);
                interpolated.push(true);
                filled += 1;
            }
        }
        timestamps.push(ts);
        values.push(v);
        labels.push(l);
        interpolated.push(false);
    }
    if filled > 0 {
        log::warn!("KPI {id}: filled {filled} missing points by linear interpolation");
    }
    Ok(KpiSeries {
        series: TimeSeries::with_labels(id, 0, values, labels)?,
        timestamps,
        interpolated,
    })
}

/// Writes labeled series in the KPI layout; the timestamp column carries the
/// global time index.
pub fn write_kpi_csv<W: Write>(writer: W, series: &[TimeSeries], columns: &KpiColumns) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([&columns.timestamp, &columns.value, &columns.label, &columns.kpi_id])?;
    for s in series {
        for (j, v) in s.values().iter().enumerate() {
            let label = s.labels().map(|l| l[j]).unwrap_or(false);
            wtr.write_record([
                (s.start_index() + j as i64).to_string(),
                v.to_string(),
                if label { "1" } else { "0" }.to_string(),
                s.id().to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// First `⌈n/2⌉` points for training, the rest for testing.
pub fn split_halves(series: &TimeSeries) -> Result<(TimeSeries, TimeSeries)> {
    if series.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "series {} has {} points; splitting needs at least 2",
            series.id(),
            series.len()
        )));
    }
    let mid = series.start_index() + series.len().div_ceil(2) as i64;
    Ok((
        series.slice(series.start_index(), mid)?,
        series.slice(mid, series.end_index())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            num_series: 3,
            points_per_series: 5_000,
            anomaly_rate: 0.003,
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_shape_and_labels() {
        let cfg = small();
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.len(), 3);
        for s in &data {
            assert_eq!(s.len(), 5_000);
            let labels = s.labels().unwrap();
            // Every labeled point is a large negative excursion.
            for (v, &l) in s.values().iter().zip(labels) {
                if l {
                    assert!(*v < 0.0, "labeled value {v}");
                }
            }
            assert!(labels.iter().filter(|&&l| l).count() <= cfg.injections_per_series());
        }
    }

    #[test]
    fn two_injections_forced_equal_split() {
        let cfg = SyntheticConfig {
            num_series: 1,
            points_per_series: 1_000,
            anomaly_rate: 0.002,
            exact_split: true,
            ..Default::default()
        };
        assert_eq!(cfg.injections_per_series(), 2);
        let s = &generate_synthetic(&cfg).unwrap()[0];
        assert_eq!(s.labels().unwrap().iter().filter(|&&l| l).count(), 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_config_validation() {
        assert!(SyntheticConfig { anomaly_rate: 0.0001, ..small() }.validate().is_err());
        assert!(SyntheticConfig { spike_magnitude_range: (10.0, 5.0), ..small() }
            .validate()
            .is_err());
        assert!(SyntheticConfig { num_series: 0, ..small() }.validate().is_err());
    }

    #[test]
    fn split_conventions() {
        let s = TimeSeries::new("a", 0, (0..11).map(f64::from).collect()).unwrap();
        let (a, b) = split_halves(&s).unwrap();
        assert_eq!((a.len(), b.len()), (6, 5));
        assert_eq!(b.start_index(), 6);
        let joined: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
        assert_eq!(joined, s.values());
        let even = TimeSeries::new("a", 0, vec![0.0; 10]).unwrap();
        let (a, b) = split_halves(&even).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert!(split_halves(&TimeSeries::new("a", 0, vec![1.0]).unwrap()).is_err());
    }

    fn read(text: &str) -> Result<Vec<KpiSeries>> {
        read_kpi(text.as_bytes(), "mem.csv", &KpiColumns::default())
    }

    #[test]
    fn kpi_groups_and_sorts() {
        let mut text = String::from("timestamp,value,label,KPI ID\n");
        for id in ["b", "a"] {
            for t in (0..10).rev() {
                text.push_str(&format!("{},{},{},{id}\n", t * 60, t, (t == 3) as u8));
            }
        }
        let got = read(&text).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].series.id(), "a");
        assert_eq!(got[0].series.len(), 10);
        assert_eq!(got[0].series.values()[0], 0.0);
        assert_eq!(got[0].series.label_at(3), Some(true));
    }

    #[test]
    fn kpi_gap_is_interpolated() {
        let text = "timestamp,value,label,KPI ID\n0,1,0,k\n60,2,0,k\n180,4,1,k\n240,5,0,k\n";
        let got = &read(text).unwrap()[0];
        assert_eq!(got.series.values(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(got.timestamps, vec![0, 60, 120, 180, 240]);
        assert_eq!(got.interpolated, vec![false, false, true, false, false]);
        assert_eq!(got.series.label_at(2), Some(false));
    }

    #[test]
    fn kpi_errors_carry_line_numbers() {
        let err = read("timestamp,value,label,KPI ID\n0,1,0,k\n60,x,0,k\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = read("timestamp,value,label,KPI ID\n0,1,0,k\n0,2,0,k\n").unwrap_err();
        assert!(err.to_string().contains("duplicate timestamp"), "{err}");
        let err = read("ts,value,label,KPI ID\n0,1,0,k\n").unwrap_err();
        assert!(err.to_string().contains("missing column `timestamp`"), "{err}");
        let err = read("timestamp,value,label,KPI ID\n0,1,2,k\n").unwrap_err();
        assert!(err.to_string().contains("bad label"), "{err}");
    }

    #[test]
    fn kpi_custom_columns() {
        let cols = KpiColumns {
            timestamp: "ts".into(),
            kpi_id: "id".into(),
            ..Default::default()
        };
        let got = read_kpi("id,ts,value,label\nq,5,1.5,1\n".as_bytes(), "m", &cols).unwrap();
        assert_eq!(got[0].series.values(), &[1.5]);
    }

    #[test]
    fn kpi_write_then_read_round_trips() {
        let data = generate_synthetic(&SyntheticConfig {
            num_series: 2,
            points_per_series: 1_000,
            ..small()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_kpi_csv(&mut buf, &data, &KpiColumns::default()).unwrap();
        let back = read_kpi(buf.as_slice(), "buf", &KpiColumns::default()).unwrap();
        let back: Vec<TimeSeries> = back.into_iter().map(|k| k.series).collect();
        assert_eq!(back, data);
    }

    #[test]
    fn kpi_round_trip_minus_interpolated_rows() {
        let text = "timestamp,value,label,KPI ID\n0,0.1,0,k\n1,-2.25,1,k\n4,3.125,0,k\n5,1e-3,0,k\n";
        let got = &read(text).unwrap()[0];
        let kept: Vec<(i64, f64)> = got
            .timestamps
            .iter()
            .zip(got.series.values())
            .zip(&got.interpolated)
            .filter(|(_, &i)| !i)
            .map(|((&t, &v), _)| (t, v))
            .collect();
        assert_eq!(kept, vec![(0, 0.1), (1, -2.25), (4, 3.125), (5, 1e-3)]);
    }
}
