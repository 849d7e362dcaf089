//! Daily count series: curation, summary statistics and sample autocorrelation.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonnegative counts indexed by day.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    values: Vec<f64>,
    label: Option<String>,
}

impl CountSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parse {
                line: i as u64 + 1,
                reason: format!("count must be finite and nonnegative, got {v}"),
            });
        }
        Ok(Self { values, label: None })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Drops the leading and trailing runs of zeros; interior zeros stay.
    pub fn trim(&self) -> Result<Self> {
        let first = self.values.iter().position(|&v| v > 0.0);
        let last = self.values.iter().rposition(|&v| v > 0.0);
        match (first, last) {
            (Some(a), Some(b)) => Ok(Self {
                values: self.values[a..=b].to_vec(),
                label: self.label.clone(),
            }),
            _ => Err(Error::EmptySeries(format!(
                "{} has no positive count",
                self.label.as_deref().unwrap_or("series")
            ))),
        }
    }

    fn centred(&self) -> Result<(f64, Vec<f64>, f64)> {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let dev: Vec<f64> = self.values.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        if !(ss > 0.0) {
            return Err(Error::Degenerate(format!(
                "{} is constant",
                self.label.as_deref().unwrap_or("series")
            )));
        }
        Ok((mean, dev, ss))
    }

    /// Ave, Var, CV, Jmp and Skw of the series as given (trim first).
    ///
    /// Moments use the divisor `I`. Jmp counts strict local maxima, boundary
    /// points included when they exceed their only neighbour; ties never
    /// count.
    pub fn summary(&self) -> Result<SummaryStats> {
        let len = self.values.len();
        if len < 3 {
            return Err(Error::EmptySeries(format!("need at least 3 values, got {len}")));
        }
        let (mean, dev, ss) = self.centred()?;
        let n = len as f64;
        let var = ss / n;
        let third = dev.iter().map(|d| d * d * d).sum::<f64>() / n;
        Ok(SummaryStats {
            ave: mean,
            var,
            cv: var.sqrt() / mean,
            jmp: strict_maxima(&self.values) as f64 / n,
            skw: third / var.powf(1.5),
            len,
        })
    }

    /// Biased sample autocorrelation at lags `0..=max_lag`.
    ///
    /// Lags beyond `I/2` are computed but see [`Self::lag_is_unreliable`].
    pub fn sample_acf(&self, max_lag: usize) -> Result<Vec<f64>> {
        if max_lag >= self.values.len() {
            return Err(Error::Config(format!(
                "max lag {max_lag} must be below the series length {}",
                self.values.len()
            )));
        }
        let (_, dev, ss) = self.centred()?;
        Ok((0..=max_lag)
            .map(|k| dev.iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / ss)
            .collect())
    }

    pub fn lag_is_unreliable(&self, lag: usize) -> bool {
        2 * lag > self.values.len()
    }
}

fn strict_maxima(x: &[f64]) -> usize {
    let n = x.len();
    let mut count = 0;
    for i in 0..n {
        let left = i == 0 || x[i] > x[i - 1];
        let right = i + 1 == n || x[i] > x[i + 1];
        if left && right {
            count += 1;
        }
    }
    count
}

/// Summary statistics in the column order Ave, Var, CV, Jmp, Skw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    #[serde(rename = "Ave")]
    pub ave: f64,
    #[serde(rename = "Var")]
    pub var: f64,
    #[serde(rename = "CV")]
    pub cv: f64,
    #[serde(rename = "Jmp")]
    pub jmp: f64,
    #[serde(rename = "Skw")]
    pub skw: f64,
    #[serde(rename = "I")]
    pub len: usize,
}

impl SummaryStats {
    /// Statistics from published values; CV is derived from Ave and Var.
    pub fn from_moments(ave: f64, var: f64, jmp: f64, skw: f64, len: usize) -> Self {
        Self {
            ave,
            var,
            cv: var.sqrt() / ave,
            jmp,
            skw,
            len,
        }
    }
}

/// Reads a series from CSV with either a single `count` column or
/// `day,count` columns. A header row is optional; any row whose count field
/// is not numeric is accepted as the header only when it is the first row.
pub fn read_series<R: Read>(reader: R) -> Result<CountSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let count_field = match record.len() {
            1 | 2 => &record[record.len() - 1],
            n => {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected 1 or 2 columns, found {n}"),
                })
            }
        };
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        match count_field.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => values.push(v),
            Ok(v) => {
                return Err(Error::Parse {
                    line,
                    reason: format!("count must be finite and nonnegative, got {v}"),
                })
            }
            Err(_) if width.is_none() && values.is_empty() => {}
            Err(_) => {
                return Err(Error::Parse {
                    line,
                    reason: format!("cannot parse count {count_field:?}"),
                })
            }
        }
        width = Some(record.len());
    }
    if values.is_empty() {
        return Err(Error::EmptySeries("no data rows".into()));
    }
    CountSeries::new(values)
}

/// [`read_series`] on a file, labelled by its stem.
pub fn read_series_file(path: &Path) -> Result<CountSeries> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let series = read_series(std::io::BufReader::new(file))?;
    Ok(match path.file_stem() {
        Some(stem) => series.with_label(stem.to_string_lossy()),
        None => series,
    })
}
