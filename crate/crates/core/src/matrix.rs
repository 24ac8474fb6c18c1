//! Row-major frame-by-feature table shared by the featurization, tICA and
//! encoder stages.

use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("feature matrix without columns"));
        }
        if !data.len().is_multiple_of(names.len()) {
            return Err(Error::Shape {
                context: "feature matrix data",
                expected: names.len(),
                got: data.len() % names.len(),
            });
        }
        Ok(Self { names, data })
    }

    /// Builds a matrix with default column names `f0, f1, ...`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let names = (0..width).map(|j| format!("f{j}")).collect();
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::Shape {
                    context: "feature matrix row",
                    expected: width,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(names, data)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.names.len() {
            return Err(Error::Shape {
                context: "column names",
                expected: self.names.len(),
                got: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Stacks matrices with equal widths row-wise; names come from the first.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("vstack of no matrices"))?;
        let w = first.n_cols();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.n_cols() != w {
                return Err(Error::Shape { context: "vstack widths", expected: w, got: p.n_cols() });
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self { names: first.names.clone(), data })
    }

    /// Copy of a contiguous block of frames.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let w = self.n_cols();
        Self {
            names: self.names.clone(),
            data: self.data[range.start * w..range.end * w].to_vec(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter() {
                data.push(parse_float(field)?);
            }
        }
        Self::new(names, data)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Spec(format!("bad number `{s}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = FeatureMatrix::from_rows(&[[0.1, -2.5e-9], [1.0 / 3.0, 7.0]]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(FeatureMatrix::from_rows(&rows).is_err());
    }
}
