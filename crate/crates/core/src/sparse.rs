//! Row-compressed complex sparse matrices and the `row,col,re,im` triplet CSV
//! format used for operator dumps and observable files.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Triplet {
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, rows: vec![Vec::new(); nrows] }
    }

    /// Adds `value` at `(row, col)`, merging with an existing entry.
    pub fn add(&mut self, row: usize, col: usize, value: C64) -> Result<()> {
        if row >= self.nrows || col >= self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows.max(self.ncols),
                actual: row.max(col),
            });
        }
        let entries = &mut self.rows[row];
        match entries.binary_search_by_key(&col, |&(c, _)| c) {
            Ok(pos) => entries[pos].1 += value,
            Err(pos) => entries.insert(pos, (col, value)),
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, r: usize) -> &[(usize, C64)] {
        &self.rows[r]
    }

    /// Indices of rows holding at least one entry.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.nrows).filter(|&r| !self.rows[r].is_empty()).collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        debug_assert_eq!(x.len(), self.ncols);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `A^dagger y`.
    pub fn adjoint_matvec(&self, y: &[C64]) -> Vec<C64> {
        debug_assert_eq!(y.len(), self.nrows);
        let mut out = vec![C64::new(0.0, 0.0); self.ncols];
        for (r, row) in self.rows.iter().enumerate() {
            if y[r] == C64::new(0.0, 0.0) {
                continue;
            }
            for &(c, v) in row {
                out[c] += v.conj() * y[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.triplets().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    pub fn write_triplets_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (row, col, v) in self.triplets() {
            wtr.serialize(Triplet { row, col, re: v.re, im: v.im })?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads triplets into an `nrows x ncols` matrix; repeated positions add up.
    pub fn read_triplets_csv<R: Read>(r: R, nrows: usize, ncols: usize) -> Result<Self> {
        let mut m = Self::zeros(nrows, ncols);
        let mut rdr = csv::Reader::from_reader(r);
        for rec in rdr.deserialize() {
            let t: Triplet = rec?;
            m.add(t.row, t.col, C64::new(t.re, t.im))?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_adjoint() {
        let mut m = SparseMatrix::zeros(2, 3);
        m.add(0, 2, C64::new(1.0, 1.0)).unwrap();
        m.add(1, 0, C64::new(0.0, 2.0)).unwrap();
        m.add(1, 0, C64::new(1.0, 0.0)).unwrap();
        let x = [C64::new(1.0, 0.0), C64::new(5.0, 0.0), C64::new(0.0, 1.0)];
        assert_eq!(m.matvec(&x), vec![C64::new(-1.0, 1.0), C64::new(1.0, 2.0)]);
        let y = [C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let dense = m.to_dense().adjoint() * nalgebra::DVector::from_column_slice(&y);
        assert_eq!(m.adjoint_matvec(&y), dense.as_slice().to_vec());
        assert_eq!(m.nnz(), 2);
        assert!(m.add(2, 0, C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let mut m = SparseMatrix::zeros(3, 3);
        m.add(0, 1, C64::new(0.25, -1.5)).unwrap();
        m.add(2, 2, C64::new(1.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        m.write_triplets_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("row,col,re,im\n"));
        assert_eq!(SparseMatrix::read_triplets_csv(&buf[..], 3, 3).unwrap(), m);
    }
}
