//! Column-oriented numeric tables and their CSV form.
//!
//! CSV files are comma separated with a header row and `.` as decimal point.
//! Empty fields and `NA`/`NaN` count as missing: rows with a missing value in
//! any loaded column are dropped and the count is logged.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GannError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "NaN" | "nan" | "na")
}

impl Dataset {
    pub fn new<S: Into<String>>(columns: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let mut names = Vec::with_capacity(columns.len());
        let mut values = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            let name = name.into();
            if names.contains(&name) {
                return Err(GannError::InvalidData(format!("duplicate column `{name}`")));
            }
            names.push(name);
            values.push(col);
        }
        let n_rows = values.first().map_or(0, Vec::len);
        if let Some(i) = values.iter().position(|c| c.len() != n_rows) {
            return Err(GannError::InvalidData(format!(
                "column `{}` has {} rows, expected {n_rows}",
                names[i],
                values[i].len()
            )));
        }
        Ok(Dataset {
            names,
            columns: values,
            n_rows,
        })
    }

    /// A table with the given header and no rows.
    pub fn empty(names: &[&str]) -> Result<Self> {
        Self::new(names.iter().map(|n| (n.to_string(), Vec::new())).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| GannError::MissingColumn {
                column: name.to_string(),
            })
    }

    /// Adds or replaces a column.
    pub fn set_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if !self.names.is_empty() && values.len() != self.n_rows {
            return Err(GannError::InvalidData(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        self.n_rows = values.len();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name);
                self.columns.push(values);
            }
        }
        Ok(())
    }

    pub fn filter_rows(&self, keep: &[bool]) -> Dataset {
        assert_eq!(keep.len(), self.n_rows);
        let columns: Vec<Vec<f64>> = self
            .columns
            .iter()
            .map(|c| c.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect())
            .collect();
        Dataset {
            names: self.names.clone(),
            n_rows: keep.iter().filter(|k| **k).count(),
            columns,
        }
    }

    /// Reads a CSV table. With `required`, only those columns are loaded (and
    /// must exist); otherwise every column is loaded and must be numeric.
    /// Returns the table and the number of rows dropped for missing values.
    pub fn read_csv<R: Read>(reader: R, required: Option<&[&str]>) -> Result<(Dataset, usize)> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let wanted: Vec<String> = match required {
            Some(cols) => {
                let mut out: Vec<String> = Vec::new();
                for c in cols {
                    if !out.iter().any(|o| o == c) {
                        out.push(c.to_string());
                    }
                }
                out
            }
            None => header.clone(),
        };
        let mut index = Vec::with_capacity(wanted.len());
        for name in &wanted {
            let i = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| GannError::MissingColumn { column: name.clone() })?;
            index.push(i);
        }

        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
        let mut dropped = 0;
        let mut row_values = vec![0.0; wanted.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let mut missing = false;
            for (k, &i) in index.iter().enumerate() {
                let field = record.get(i).unwrap_or("");
                if is_missing(field) {
                    missing = true;
                    continue;
                }
                row_values[k] = field.parse::<f64>().map_err(|_| GannError::NonNumericColumn {
                    column: wanted[k].clone(),
                    row: row + 1,
                    value: field.to_string(),
                })?;
                if !row_values[k].is_finite() {
                    missing = true;
                }
            }
            if missing {
                dropped += 1;
                continue;
            }
            for (col, v) in columns.iter_mut().zip(&row_values) {
                col.push(*v);
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} row(s) with missing values");
        }
        Ok((Dataset::new(wanted.into_iter().zip(columns).collect())?, dropped))
    }

    pub fn read_csv_path(path: impl AsRef<Path>, required: Option<&[&str]>) -> Result<(Dataset, usize)> {
        Self::read_csv(File::open(path)?, required)
    }

    /// Writes the table with full round-trip precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        let mut record = Vec::with_capacity(self.names.len());
        for r in 0..self.n_rows {
            record.clear();
            record.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}
