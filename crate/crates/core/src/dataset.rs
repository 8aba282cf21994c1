//! Numeric CSV datasets.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError { row: usize, column: usize, message: String },
    #[error("dataset has no data rows")]
    EmptyDataset,
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
}

/// A column-major table of finite floats.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Table {
    /// Builds a table from rows; every row must have `column_count` cells.
    pub fn from_rows(column_count: usize, rows: &[Vec<f64>]) -> Table {
        let mut columns = vec![Vec::with_capacity(rows.len()); column_count];
        for row in rows {
            assert_eq!(row.len(), column_count, "ragged row");
            for (c, &x) in row.iter().enumerate() {
                columns[c].push(x);
            }
        }
        Table { columns, rows: rows.len() }
    }

    /// Single-column table.
    pub fn from_column(values: Vec<f64>) -> Table {
        let rows = values.len();
        Table { columns: vec![values], rows }
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.iter().map(Vec::as_slice)
    }

    pub fn row(&self, index: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[index]).collect()
    }

    /// Renders the table back to CSV with shortest round-trip numbers.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let cells: Vec<String> = self.columns.iter().map(|c| format!("{}", c[r])).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Parses CSV text. A first row in which no cell is numeric is a header.
pub fn parse_dataset_csv(text: &str) -> Result<Table, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::ParseError {
            row: e.position().map_or(0, |p| p.line() as usize),
            column: 1,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let is_first = std::mem::replace(&mut first, false);
        if is_first && record.iter().all(|c| parse_number(c).is_none()) {
            width = Some(record.len());
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let x = parse_number(cell).ok_or_else(|| DatasetError::ParseError {
                row: line,
                column: c + 1,
                message: format!("{cell:?} is not a finite number"),
            })?;
            row.push(x);
        }
        let expected = *width.get_or_insert(row.len());
        if row.len() != expected {
            return Err(DatasetError::ParseError {
                row: line,
                column: row.len().min(expected) + 1,
                message: format!("expected {expected} columns, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(Table::from_rows(width.unwrap_or(0), &rows))
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Table, DatasetError> {
    parse_dataset_csv(&std::fs::read_to_string(path)?)
}
