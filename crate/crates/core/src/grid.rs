//! Cartesian hyperparameter search selected on validation NDCG@20.

use std::io::Write;

use log::info;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{MetricReport, DEFAULT_KS};
use crate::train::{evaluate_model, train, TrainConfig, TrainData, SELECTION_K};

pub const DEFAULT_GRID_CAP: usize = 256;

/// Candidate values per training key, in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub axes: Vec<(String, Vec<String>)>,
    pub cap: usize,
}

impl GridSpec {
    pub fn new(axes: Vec<(String, Vec<String>)>) -> Self {
        Self {
            axes,
            cap: DEFAULT_GRID_CAP,
        }
    }

    /// Parses `key = v1, v2, ...` lines; `#` starts a comment and the
    /// reserved key `cap` overrides the product limit.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::new(Vec::new());
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, values) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("grid line {}: expected `key = values`", n + 1)))?;
            let key = key.trim();
            if key == "cap" {
                spec.cap = values
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("grid line {}: bad cap", n + 1)))?;
                continue;
            }
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            spec.axes.push((key.to_string(), values));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig("grid has no axes".into()));
        }
        for (i, (key, values)) in self.axes.iter().enumerate() {
            if values.is_empty() {
                return Err(Error::InvalidConfig(format!("grid axis `{key}` has no values")));
            }
            if !TrainConfig::is_key(key) {
                return Err(Error::InvalidConfig(format!("grid axis `{key}` is not a training key")));
            }
            if self.axes[..i].iter().any(|(k, _)| k == key) {
                return Err(Error::InvalidConfig(format!("grid axis `{key}` given twice")));
            }
        }
        let size = self.size();
        if size > self.cap {
            return Err(Error::GridTooLarge { size, cap: self.cap });
        }
        Ok(())
    }

    /// Every assignment, last axis varying fastest.
    pub fn assignments(&self) -> Vec<Vec<(String, String)>> {
        let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut a = prefix.clone();
                        a.push((key.clone(), v.clone()));
                        a
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub assignment: Vec<(String, String)>,
    pub validation: MetricReport,
    pub test: MetricReport,
    pub best_epoch: Option<usize>,
}

impl GridRow {
    /// `key=value` pairs joined by `;`, the tie-break order for selection.
    pub fn label(&self) -> String {
        self.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    pub fn value_of(&self, key: &str) -> Option<&str> {
        self.assignment.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn selection_score(&self) -> f64 {
        self.validation.ndcg(SELECTION_K).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    pub axes: Vec<String>,
    pub rows: Vec<GridRow>,
}

/// Metric values over two axes; `values[r][c]` is `None` for a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub row_axis: String,
    pub col_axis: String,
    pub row_values: Vec<String>,
    pub col_values: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![format!("{}\\{}", self.row_axis, self.col_axis)];
        header.extend(self.col_values.iter().cloned());
        w.write_record(&header)?;
        for (r, label) in self.row_values.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.values[r].iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("heatmap", e))?;
        Ok(())
    }
}

fn metric_columns(prefix: &str) -> Vec<String> {
    let mut cols: Vec<String> = DEFAULT_KS.iter().map(|k| format!("{prefix}recall@{k}")).collect();
    cols.extend(DEFAULT_KS.iter().map(|k| format!("{prefix}ndcg@{k}")));
    cols
}

fn metric_values(report: &MetricReport) -> Vec<String> {
    let mut vals: Vec<String> = DEFAULT_KS.iter().map(|&k| report.recall(k).unwrap_or(f64::NAN).to_string()).collect();
    vals.extend(DEFAULT_KS.iter().map(|&k| report.ndcg(k).unwrap_or(f64::NAN).to_string()));
    vals
}

impl GridTable {
    /// Highest validation NDCG@20; ties go to the smallest label so the
    /// choice does not depend on row order.
    pub fn best(&self) -> Option<&GridRow> {
        self.rows.iter().max_by(|a, b| {
            a.selection_score()
                .total_cmp(&b.selection_score())
                .then_with(|| b.label().cmp(&a.label()))
        })
    }

    pub fn heatmap(&self, row_axis: &str, col_axis: &str, metric: impl Fn(&GridRow) -> f64) -> Result<Heatmap> {
        for axis in [row_axis, col_axis] {
            if !self.axes.iter().any(|a| a == axis) {
                return Err(Error::InvalidConfig(format!("grid has no axis `{axis}`")));
            }
        }
        let mut row_values: Vec<String> = Vec::new();
        let mut col_values: Vec<String> = Vec::new();
        for row in &self.rows {
            let r = row.value_of(row_axis).expect("axis present").to_string();
            let c = row.value_of(col_axis).expect("axis present").to_string();
            if !row_values.contains(&r) {
                row_values.push(r);
            }
            if !col_values.contains(&c) {
                col_values.push(c);
            }
        }
        let mut values = vec![vec![None; col_values.len()]; row_values.len()];
        for row in &self.rows {
            let r = row_values.iter().position(|v| v == row.value_of(row_axis).expect("axis present")).expect("collected");
            let c = col_values.iter().position(|v| v == row.value_of(col_axis).expect("axis present")).expect("collected");
            values[r][c] = Some(metric(row));
        }
        Ok(Heatmap {
            row_axis: row_axis.to_string(),
            col_axis: col_axis.to_string(),
            row_values,
            col_values,
            values,
        })
    }

    /// One row per configuration: axis values, validation and test metrics,
    /// best epoch.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.axes.clone();
        header.extend(metric_columns("val_"));
        header.extend(metric_columns("test_"));
        header.push("best_epoch".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = self.axes.iter().map(|a| row.value_of(a).unwrap_or("").to_string()).collect();
            rec.extend(metric_values(&row.validation));
            rec.extend(metric_values(&row.test));
            rec.push(row.best_epoch.map_or_else(String::new, |e| e.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("grid table", e))?;
        Ok(())
    }
}

/// Trains and scores one model per assignment. Runs are independent and
/// execute concurrently; rows keep assignment order.
pub fn grid_search(base: &TrainConfig, spec: &GridSpec, data: &TrainData) -> Result<GridTable> {
    spec.validate()?;
    data.validate()?;
    let configs = spec
        .assignments()
        .into_iter()
        .map(|assignment| {
            let mut cfg = base.clone();
            for (k, v) in &assignment {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            Ok((assignment, cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let valid = data.validation_split()?;
    let test = data.test_split()?;
    let rows = configs
        .into_par_iter()
        .map(|(assignment, cfg)| {
            let outcome = train(&cfg, data)?;
            let validation = evaluate_model(&outcome.model, &cfg, &valid)?;
            let test = evaluate_model(&outcome.model, &cfg, &test)?;
            let row = GridRow {
                assignment,
                validation,
                test,
                best_epoch: outcome.best_epoch,
            };
            info!("grid {}: val ndcg@20 {:.6}", row.label(), row.selection_score());
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridTable {
        axes: spec.axes.iter().map(|(k, _)| k.clone()).collect(),
        rows,
    })
}

/// One run per SGT sample count.
pub fn sweep_samples(base: &TrainConfig, values: &[usize], data: &TrainData) -> Result<GridTable> {
    let mut spec = GridSpec::new(vec![("c_samples".into(), values.iter().map(|v| v.to_string()).collect())]);
    spec.cap = spec.cap.max(values.len());
    grid_search(base, &spec, data)
}
