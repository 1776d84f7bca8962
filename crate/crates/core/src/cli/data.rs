//! CSV ingestion.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Which columns hold the outcome, the treatment and the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRoles {
    pub outcome: String,
    pub treatment: String,
    /// All remaining columns, in file order, when `None`.
    pub covariates: Option<Vec<String>>,
}

/// Reads a UTF-8 CSV with a header row into a [`Dataset`].
pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, roles)
}

pub fn read_csv<R: std::io::Read>(input: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Data("empty file: no header row".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = headers.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(Error::Data(format!("duplicate column name '{dup}'")));
    }
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let y_col = find(&roles.outcome)?;
    let t_col = find(&roles.treatment)?;
    let x_names: Vec<String> = match &roles.covariates {
        Some(names) => names.clone(),
        None => headers.iter().filter(|h| **h != roles.outcome && **h != roles.treatment).cloned().collect(),
    };
    let x_cols = x_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = row + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data(format!("non-numeric value '{raw}' at line {line}, column '{}'", headers[c]))),
            }
        };
        y.push(cell(y_col)?);
        t.push(cell(t_col)?);
        for &c in &x_cols {
            x.push(cell(c)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Data("empty file: header but no data rows".into()));
    }
    let covariates = DMatrix::from_row_slice(y.len(), x_cols.len(), &x);
    Dataset::with_names(y, t, covariates, x_names).map_err(|e| Error::Data(e.to_string()))
}

/// Writes `data` as CSV with columns `y, t` followed by the covariate names.
pub fn write_dataset<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Data(format!("cannot write CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string(), "t".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    w.write_record(&header).map_err(io)?;
    let x = data.covariates();
    for i in 0..data.len() {
        let mut row = vec![data.outcomes()[i].to_string(), data.treatments()[i].to_string()];
        row.extend((0..x.ncols()).map(|j| x[(i, j)].to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(format!("cannot write CSV: {e}")))
}
