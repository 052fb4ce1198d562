//! Observation tables. A table is a set of named columns of floats; program
//! data references index a column 1-based.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    columns: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty value in column `{column}`, row {row}")]
    Missing { column: String, row: usize },
    #[error("`{value}` in column `{column}`, row {row} is not a number")]
    NotNumeric {
        value: String,
        column: String,
        row: usize,
    },
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.columns.insert(name.into(), values);
    }

    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            for (col, field) in record.iter().enumerate() {
                if col >= headers.len() {
                    continue;
                }
                if field.is_empty() {
                    return Err(DataError::Missing {
                        column: headers[col].clone(),
                        row: row_idx + 1,
                    });
                }
                let v: f64 = field.parse().map_err(|_| DataError::NotNumeric {
                    value: field.to_string(),
                    column: headers[col].clone(),
                    row: row_idx + 1,
                })?;
                columns[col].push(v);
            }
        }
        let mut table = DataTable::new();
        for (name, values) in headers.into_iter().zip(columns) {
            table.insert(name, values);
        }
        Ok(table)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn len_of(&self, name: &str) -> Option<usize> {
        self.columns.get(name).map(|c| c.len())
    }

    /// 1-based lookup matching the language's data indexing.
    pub fn get(&self, name: &str, index: i64) -> Option<f64> {
        let col = self.columns.get(name)?;
        if index < 1 {
            return None;
        }
        col.get((index - 1) as usize).copied()
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
