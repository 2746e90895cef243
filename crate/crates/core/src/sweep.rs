//! Cartesian parameter sweeps over `PipelineConfig` keys.
//!
//! A sweep file uses the config syntax. Plain keys set the base config;
//! `axis.<key> = a | b | c` lists axis values, `axis.<key> = start:stop:step`
//! expands a numeric range, and `sweep.max_points` caps the cartesian size.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::config::{parse_kv_lines, ConfigError, PipelineConfig};
use crate::eval::Category;
use crate::pipeline::{fmt_metric, DatasetRun, PipelineError};

pub const DEFAULT_MAX_POINTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep has no axes")]
    NoAxes,
    #[error("axis {0} has no values")]
    EmptyAxis(String),
    #[error("bad range {0:?}: expected start:stop:step with step > 0")]
    BadRange(String),
    #[error("sweep has {points} points, cap is {cap}")]
    TooLarge { points: usize, cap: usize },
    #[error("at point {point}: {source}")]
    Run { point: String, source: PipelineError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: PipelineConfig,
    /// Axis key to values; iteration is in key order.
    pub axes: BTreeMap<String, Vec<String>>,
    pub max_points: usize,
}

/// Decimal places written in a numeric literal.
fn decimals(s: &str) -> usize {
    s.split_once('.').map_or(0, |(_, f)| f.len())
}

/// Expands `start:stop:step` inclusive of `stop` (within half a step).
pub fn expand_range(text: &str) -> Result<Vec<String>, SweepError> {
    let bad = || SweepError::BadRange(text.to_string());
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let [a, b, s] = parts[..] else { return Err(bad()) };
    let (start, stop, step): (f64, f64, f64) = (
        a.parse().map_err(|_| bad())?,
        b.parse().map_err(|_| bad())?,
        s.parse().map_err(|_| bad())?,
    );
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(bad());
    }
    let places = decimals(a).max(decimals(s));
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| format!("{:.*}", places, start + i as f64 * step)).collect())
}

impl SweepSpec {
    pub fn new(base: PipelineConfig) -> Self {
        Self {
            base,
            axes: BTreeMap::new(),
            max_points: DEFAULT_MAX_POINTS,
        }
    }

    /// Adds an axis after checking every value is accepted by the config.
    pub fn axis(&mut self, key: &str, values: Vec<String>) -> Result<(), SweepError> {
        if values.is_empty() {
            return Err(SweepError::EmptyAxis(key.to_string()));
        }
        let mut probe = self.base.clone();
        for v in &values {
            probe.set(key, v)?;
        }
        self.axes.insert(key.to_string(), values);
        Ok(())
    }

    pub fn parse(text: &str, base: PipelineConfig) -> Result<Self, SweepError> {
        let mut spec = Self::new(base);
        let mut axes = Vec::new();
        for (_, key, value) in parse_kv_lines(text)? {
            if let Some(axis) = key.strip_prefix("axis.") {
                let values = if value.contains('|') || !value.contains(':') {
                    value.split('|').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
                } else {
                    expand_range(&value)?
                };
                axes.push((axis.to_string(), values));
            } else if key == "sweep.max_points" {
                spec.max_points = value.parse().map_err(|_| ConfigError::BadValue {
                    key,
                    value: value.clone(),
                    reason: "expected a positive integer".into(),
                })?;
            } else {
                spec.base.set(&key, &value)?;
            }
        }
        // base keys may follow axis lines, so axes are checked last
        for (key, values) in axes {
            spec.axis(&key, values)?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path, base: PipelineConfig) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, base)
    }

    pub fn point_count(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    /// Every assignment, first axis slowest.
    pub fn points(&self) -> Result<Vec<Vec<(String, String)>>, SweepError> {
        if self.axes.is_empty() {
            return Err(SweepError::NoAxes);
        }
        let n = self.point_count();
        if n > self.max_points {
            return Err(SweepError::TooLarge {
                points: n,
                cap: self.max_points,
            });
        }
        let mut points = vec![Vec::new()];
        for (key, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut p = p.clone();
                        p.push((key.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        Ok(points)
    }

    pub fn config_at(&self, point: &[(String, String)]) -> Result<PipelineConfig, SweepError> {
        let mut cfg = self.base.clone();
        for (k, v) in point {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn point_label(point: &[(String, String)]) -> String {
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: Vec<(String, String)>,
    pub run: DatasetRun,
}

/// Runs `run` once per point in order. Every point's config is validated
/// before the first run starts.
pub fn run_sweep<F>(spec: &SweepSpec, mut run: F) -> Result<Vec<SweepRow>, SweepError>
where
    F: FnMut(&PipelineConfig) -> Result<DatasetRun, PipelineError>,
{
    let points = spec.points()?;
    let configs = points.iter().map(|p| spec.config_at(p)).collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(points.len());
    for (point, cfg) in points.into_iter().zip(configs) {
        log::info!("sweep point {}", point_label(&point));
        let result = run(&cfg).map_err(|source| SweepError::Run {
            point: point_label(&point),
            source,
        })?;
        rows.push(SweepRow { point, run: result });
    }
    Ok(rows)
}

const CATEGORIES: [Category; 3] = [Category::WithoutInterference, Category::WithInterference, Category::Overall];
const METRICS: [&str; 5] = ["videos", "iou", "precision", "recall", "fla"];

/// One row per point: the axis values, then `<category>_<metric>` columns.
/// Categories with no videos leave their cells empty.
pub fn sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = spec.axes.keys().cloned().collect();
    for c in CATEGORIES {
        header.extend(METRICS.iter().map(|m| format!("{}_{m}", c.name())));
    }
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut record: Vec<String> = row.point.iter().map(|(_, v)| v.clone()).collect();
        for c in CATEGORIES {
            match row.run.report.get(c) {
                Some(r) => record.extend([
                    r.videos.to_string(),
                    fmt_metric(r.mean_iou),
                    fmt_metric(r.mean_precision),
                    fmt_metric(r.mean_recall),
                    fmt_metric(r.mean_fla),
                ]),
                None => record.extend(std::iter::repeat_n(String::new(), METRICS.len())),
            }
        }
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
