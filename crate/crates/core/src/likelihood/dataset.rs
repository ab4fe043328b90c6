use std::path::Path;

use crate::error::{Error, Result};

/// `N` observations of `d` feature columns and one target column.
///
/// Features are stored column-major so that a compiled expression can be
/// evaluated one column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Builds a dataset from feature columns; names default to `x0, x1, ...`
    /// and `y`.
    pub fn new(columns: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Dataset> {
        let names = (0..columns.len()).map(|i| format!("x{i}")).collect();
        Dataset::with_names(columns, target, names, "y".to_string())
    }

    pub fn with_names(
        columns: Vec<Vec<f64>>,
        target: Vec<f64>,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Dataset> {
        if target.is_empty() {
            return Err(Error::InvalidData("dataset has no observations".into()));
        }
        if feature_names.len() != columns.len() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != target.len() {
                return Err(Error::InvalidData(format!(
                    "feature column {j} has {} rows, target has {}",
                    col.len(),
                    target.len()
                )));
            }
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite feature at row {k}, column {j}")));
            }
        }
        if let Some(k) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite target at row {k}")));
        }
        Ok(Dataset { columns, target, feature_names, target_name })
    }

    /// Builds a dataset from feature rows.
    pub fn from_rows(rows: &[Vec<f64>], target: Vec<f64>) -> Result<Dataset> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.len() != target.len() {
            return Err(Error::InvalidData(format!(
                "{} feature rows but {} targets",
                rows.len(),
                target.len()
            )));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (k, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidData(format!("row {k} has {} features, expected {d}", row.len())));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Dataset::new(columns, target)
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[k]).collect()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Reads a headed CSV file. The target is the column named `target`, or
    /// the last column when `target` is `None`; the remaining columns become
    /// features `x0, x1, ...` in file order. Non-numeric cells are errors.
    pub fn read_csv(path: &Path, target: Option<&str>) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse_csv(&text, target).map_err(|e| match e {
            Error::InvalidData(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn parse_csv(text: &str, target: Option<&str>) -> Result<Dataset> {
        let (header, rows) = parse_numeric_csv(text)?;
        let t = match target {
            Some(name) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidData(format!("no column named `{name}`")))?,
            None => header.len() - 1,
        };
        let mut columns = vec![Vec::with_capacity(rows.len()); header.len()];
        for row in &rows {
            for (c, &v) in columns.iter_mut().zip(row) {
                c.push(v);
            }
        }
        let target_col = columns.remove(t);
        let mut names = header;
        let target_name = names.remove(t);
        Dataset::with_names(columns, target_col, names, target_name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str(&self.target_name);
        out.push('\n');
        for k in 0..self.n() {
            for col in &self.columns {
                out.push_str(&format!("{},", col[k]));
            }
            out.push_str(&format!("{}\n", self.target[k]));
        }
        out
    }
}

/// Parses a comma-separated table with a header row and numeric cells.
pub fn parse_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidData(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(Error::InvalidData("missing or empty column name in header".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidData(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .zip(&header)
            .map(|(c, h)| {
                c.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::InvalidData(format!("line {line}: column `{h}` is not a number: `{c}`"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    Ok((header, rows))
}
