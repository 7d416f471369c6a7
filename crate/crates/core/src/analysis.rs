//! Simple linear regression and aggregation of per-epoch run logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Ordinary least squares of `y` on `x`. A constant `y` has R² = 0 with a
/// warning attached.
pub fn linreg(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "x has {} values, y has {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Invalid("regression needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("x values are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let (r_squared, warning) = if ss_tot == 0.0 {
        (0.0, Some("y is constant; R² reported as 0".to_string()))
    } else {
        ((1.0 - ss_res / ss_tot).clamp(0.0, 1.0), None)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
        warning,
    })
}

/// A numeric CSV table with a header row, one row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub const ERROR_COLUMN: &str = "test_error";

impl RunTable {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field.trim().parse::<f64>().map_err(|_| {
                        Error::Schema(format!(
                            "{}: row {} has non-numeric field {field:?}",
                            path.display(),
                            i + 1
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(RunTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Row index with the lowest test error; earliest wins ties.
    pub fn best_row(&self) -> Result<usize> {
        let err = self.column(ERROR_COLUMN)?;
        let mut best = None::<usize>;
        for (i, &e) in err.iter().enumerate() {
            if best.is_none_or(|b| e < err[b]) {
                best = Some(i);
            }
        }
        best.ok_or_else(|| Error::Schema("run log has no rows".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_runs: usize,
    /// Best (lowest) test top-1 error of each run.
    pub best_errors: Vec<f64>,
    pub best_error: Stat,
    /// Every column at each run's best epoch.
    pub at_best_epoch: Vec<MetricSummary>,
}

pub fn aggregate_runs(tables: &[RunTable]) -> Result<RunSummary> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Invalid("no runs to aggregate".into()))?;
    for (i, t) in tables.iter().enumerate() {
        if t.columns != first.columns {
            return Err(Error::Schema(format!(
                "run {i} columns {:?} differ from run 0 columns {:?}",
                t.columns, first.columns
            )));
        }
        if let Some(r) = t.rows.iter().position(|r| r.len() != t.columns.len()) {
            return Err(Error::Schema(format!("run {i} row {r} has the wrong width")));
        }
    }
    let best_rows: Vec<usize> = tables.iter().map(RunTable::best_row).collect::<Result<_>>()?;
    let err_idx = first
        .columns
        .iter()
        .position(|c| c == ERROR_COLUMN)
        .expect("best_row checked the column");
    let best_errors: Vec<f64> = tables
        .iter()
        .zip(&best_rows)
        .map(|(t, &r)| t.rows[r][err_idx])
        .collect();
    let at_best_epoch = first
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let values: Vec<f64> = tables
                .iter()
                .zip(&best_rows)
                .map(|(t, &r)| t.rows[r][c])
                .collect();
            let s = Stat::of(&values);
            MetricSummary {
                name: name.clone(),
                mean: s.mean,
                std: s.std,
            }
        })
        .collect();
    Ok(RunSummary {
        n_runs: tables.len(),
        best_error: Stat::of(&best_errors),
        best_errors,
        at_best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table(errors: &[f64]) -> RunTable {
        RunTable {
            columns: vec!["epoch".into(), ERROR_COLUMN.into()],
            rows: errors
                .iter()
                .enumerate()
                .map(|(i, &e)| vec![i as f64, e])
                .collect(),
        }
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.5, -3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = linreg(&x, &y).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-12);
        assert_eq!(fit.r_squared, 1.0);
        assert!(fit.warning.is_none());
    }

    #[test]
    fn constant_y_and_degenerate_x() {
        let fit = linreg(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.warning.is_some());
        assert!(linreg(&[1.0, 1.0], &[0.0, 2.0]).is_err());
        assert!(linreg(&[1.0, 2.0], &[0.0]).is_err());
        assert!(linreg(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn single_and_paired_runs() {
        let s = aggregate_runs(&[table(&[40.0, 30.0, 31.0])]).unwrap();
        assert_eq!(s.best_error.mean, 30.0);
        assert_eq!(s.best_error.std, 0.0);
        assert!(s.at_best_epoch.iter().all(|m| m.std == 0.0));

        let s = aggregate_runs(&[table(&[25.0, 26.0]), table(&[27.0, 25.2])]).unwrap();
        assert_abs_diff_eq!(s.best_error.mean, 25.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.best_error.std, 0.1, epsilon = 1e-12);
        let epoch = &s.at_best_epoch[0];
        assert_eq!((epoch.mean, epoch.std), (0.5, 0.5));
    }

    #[test]
    fn schema_mismatch() {
        let mut other = table(&[1.0]);
        other.columns[0] = "step".into();
        assert!(matches!(
            aggregate_runs(&[table(&[1.0]), other]),
            Err(Error::Schema(_))
        ));
        let no_err = RunTable {
            columns: vec!["epoch".into()],
            rows: vec![vec![0.0]],
        };
        assert!(aggregate_runs(&[no_err]).is_err());
    }
}
