//! Dataset containers and delimited-text IO.
//!
//! Regression datasets are stored as delimited text with a header row that
//! declares column names and units, e.g. `current_speed [m/s]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset has {0} rows, need at least {1}")]
    TooFewRows(usize, usize),
    #[error("dataset contains a non-finite value at row {0}")]
    NonFinite(usize),
    #[error("duplicate input rows {0} and {1} (within tolerance {2:e})")]
    DuplicateRows(usize, usize, f64),
    #[error("row {0} has {1} fields, header declares {2}")]
    RaggedRow(usize, usize, usize),
    #[error("header column {0:?} is not of the form \"name [unit]\"")]
    BadHeader(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Name and unit of one dataset column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub unit: String,
}

impl ColumnMeta {
    pub fn new(name: &str, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
        }
    }

    fn header(&self) -> String {
        format!("{} [{}]", self.name, self.unit)
    }

    fn parse(h: &str) -> Result<Self, DatasetError> {
        let h = h.trim();
        let open = h.rfind('[').ok_or_else(|| DatasetError::BadHeader(h.to_string()))?;
        if !h.ends_with(']') {
            return Err(DatasetError::BadHeader(h.to_string()));
        }
        Ok(Self {
            name: h[..open].trim().to_string(),
            unit: h[open + 1..h.len() - 1].to_string(),
        })
    }
}

/// Default distance tolerance below which two input rows count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Input/output pairs at one fidelity level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityDataset {
    /// Fidelity index, 1 = lowest.
    pub level: usize,
    /// n x d input matrix.
    pub inputs: DMatrix<f64>,
    /// n output values.
    pub outputs: DVector<f64>,
    pub input_columns: Vec<ColumnMeta>,
    pub output_column: ColumnMeta,
}

impl FidelityDataset {
    pub fn new(
        level: usize,
        inputs: DMatrix<f64>,
        outputs: DVector<f64>,
        input_columns: Vec<ColumnMeta>,
        output_column: ColumnMeta,
    ) -> Self {
        assert_eq!(inputs.nrows(), outputs.len(), "row count mismatch");
        assert_eq!(inputs.ncols(), input_columns.len(), "column meta mismatch");
        Self {
            level,
            inputs,
            outputs,
            input_columns,
            output_column,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Finiteness, minimum size and duplicate-row checks used before fitting.
    ///
    /// Duplicates are measured in per-column standardized coordinates so the
    /// tolerance is unit-free.
    pub fn validate(&self, min_rows: usize, dup_tol: f64) -> Result<(), DatasetError> {
        let n = self.len();
        if n < min_rows {
            return Err(DatasetError::TooFewRows(n, min_rows));
        }
        for i in 0..n {
            if !self.outputs[i].is_finite()
                || self.inputs.row(i).iter().any(|v| !v.is_finite())
            {
                return Err(DatasetError::NonFinite(i));
            }
        }
        let scaler = crate::encode::Standardizer::fit(&self.inputs);
        let z = scaler.apply(&self.inputs);
        for i in 0..n {
            for j in (i + 1)..n {
                let dist2: f64 = (0..z.ncols())
                    .map(|k| (z[(i, k)] - z[(j, k)]).powi(2))
                    .sum();
                if dist2.sqrt() < dup_tol {
                    return Err(DatasetError::DuplicateRows(i, j, dup_tol));
                }
            }
        }
        Ok(())
    }

    /// Write as delimited text with a `name [unit]` header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.input_columns.iter().map(|c| c.header()).collect();
        header.push(self.output_column.header());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            rec.push(format!("{}", self.outputs[i]));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DatasetError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read back a dataset written by [`FidelityDataset::write_csv`]. The last
    /// column is the output.
    pub fn read_csv<R: Read>(level: usize, r: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let ncols = header.len();
        if ncols < 2 {
            return Err(DatasetError::BadHeader("need inputs and an output".into()));
        }
        let mut metas = Vec::with_capacity(ncols);
        for h in header.iter() {
            metas.push(ColumnMeta::parse(h)?);
        }
        let output_column = metas.pop().expect("checked above");

        let mut values: Vec<f64> = Vec::new();
        let mut outputs: Vec<f64> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != ncols {
                return Err(DatasetError::RaggedRow(i, rec.len(), ncols));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| DatasetError::NonFinite(i))?;
                if j + 1 == ncols {
                    outputs.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = outputs.len();
        let inputs = DMatrix::from_row_slice(n, ncols - 1, &values);
        Ok(Self::new(
            level,
            inputs,
            DVector::from_vec(outputs),
            metas,
            output_column,
        ))
    }

    pub fn read_csv_path(level: usize, path: &Path) -> Result<Self, DatasetError> {
        Self::read_csv(level, std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> FidelityDataset {
        FidelityDataset::new(
            1,
            DMatrix::from_row_slice(3, 2, &[0.1, 10.0, 0.5, 200.0, 0.9, 350.0]),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            vec![
                ColumnMeta::new("current_speed", "m/s"),
                ColumnMeta::new("current_dir", "deg"),
            ],
            ColumnMeta::new("tension", "kN"),
        )
    }

    #[test]
    fn csv_round_trip() {
        let d = toy();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("current_speed [m/s],current_dir [deg],tension [kN]"));
        let back = FidelityDataset::read_csv(1, buf.as_slice()).unwrap();
        assert_eq!(back.inputs, d.inputs);
        assert_eq!(back.outputs, d.outputs);
        assert_eq!(back.input_columns, d.input_columns);
    }

    #[test]
    fn validate_rejects_duplicates() {
        let mut d = toy();
        d.inputs.set_row(2, &d.inputs.row(0).clone_owned());
        match d.validate(2, DUPLICATE_TOL) {
            Err(DatasetError::DuplicateRows(0, 2, _)) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_non_finite() {
        let mut d = toy();
        d.outputs[1] = f64::NAN;
        assert!(matches!(
            d.validate(2, DUPLICATE_TOL),
            Err(DatasetError::NonFinite(1))
        ));
    }

    #[test]
    fn validate_rejects_small() {
        let d = toy();
        assert!(matches!(
            d.validate(5, DUPLICATE_TOL),
            Err(DatasetError::TooFewRows(3, 5))
        ));
    }
}
