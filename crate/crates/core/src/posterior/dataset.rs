use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inputs `X` (n × d) with responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Input column names, `x1..xd` when not read from a file.
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
        Self::with_names(x, y, names)
    }

    pub fn with_names(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "responses",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                what: "column names",
                expected: x.ncols(),
                got: names.len(),
            });
        }
        Ok(Self { x, y, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, a: usize) -> Vec<f64> {
        self.x.row(a).iter().copied().collect()
    }

    /// First input outside `[0, 1]`, if any.
    pub fn check_unit_cube(&self) -> Result<()> {
        for col in 0..self.d() {
            for row in 0..self.n() {
                let value = self.x[(row, col)];
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::InputOutOfRange { row, col, value });
                }
            }
        }
        Ok(())
    }

    /// Reads a CSV with a header row; `response` names the output column and
    /// every other column is an input.
    pub fn from_csv_reader<R: Read>(reader: R, response: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let resp = headers
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| Error::Config(format!("response column `{response}` not in header")))?;
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != resp)
            .map(|(_, h)| h.to_string())
            .collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            for (i, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Config(format!("row {line}, column {i}: `{field}` is not a number")))?;
                if i == resp {
                    ys.push(v);
                } else {
                    xs.push(v);
                }
            }
        }
        let n = ys.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let x = DMatrix::from_row_slice(n, names.len(), &xs);
        Self::with_names(x, DVector::from_vec(ys), names)
    }

    pub fn from_csv(path: impl AsRef<Path>, response: &str) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?, response)
    }

    pub fn to_csv<W: std::io::Write>(&self, writer: W, response: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.names.clone();
        header.push(response.to_string());
        w.write_record(&header)?;
        for a in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(a).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[a].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
