//! Square compressed-sparse-row matrices and the coordinate-list text format.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::{fmt_num, neumaier_sum};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row sorted column lists and matching values.
    pub fn from_rows(rows: Vec<(Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let nnz = rows.iter().map(|r| r.0.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (i, (cols, vals)) in rows.into_iter().enumerate() {
            if cols.len() != vals.len() {
                return Err(Error::invalid(format!("row {i}: column and value counts differ")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.last().is_some_and(|&c| c >= n) {
                return Err(Error::invalid(format!("row {i}: columns must be sorted, unique and in range")));
            }
            indices.extend(cols);
            values.extend(vals);
            indptr.push(indices.len());
        }
        Ok(Self { n, indptr, indices, values })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid("matrix must be square"));
        }
        let rows = (0..m.nrows())
            .map(|i| ((0..m.ncols()).collect(), (0..m.ncols()).map(|j| m[(i, j)]).collect()))
            .collect();
        Self::from_rows(rows)
    }

    /// Same pattern as `self`, values produced per row by `f(i, cols, vals) -> new vals`.
    pub fn map_rows<F>(&self, f: F) -> Self
    where
        F: Fn(usize, &[usize], &[f64]) -> Vec<f64> + Sync,
    {
        let values: Vec<f64> = (0..self.n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let (c, v) = self.row(i);
                let out = f(i, c, v);
                debug_assert_eq!(out.len(), c.len());
                out
            })
            .collect();
        Self { n: self.n, indptr: self.indptr.clone(), indices: self.indices.clone(), values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map_or(0.0, |k| v[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).into_par_iter().map(|i| neumaier_sum(self.row(i).1.iter().copied())).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in matvec");
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                indices[next[j]] = i;
                values[next[j]] = a;
                next[j] += 1;
            }
        }
        Self { n: self.n, indptr, indices, values }
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.transpose() == *self
    }

    pub fn has_same_pattern(&self, other: &Self) -> bool {
        self.indptr == other.indptr && self.indices == other.indices
    }

    /// Entrywise `self + selfᵀ`; requires a structurally symmetric pattern.
    pub fn plus_transpose(&self) -> Result<Self> {
        let t = self.transpose();
        if !self.has_same_pattern(&t) {
            return Err(Error::invalid("sparsity pattern is not symmetric"));
        }
        let values = self.values.iter().zip(&t.values).map(|(a, b)| a + b).collect();
        Ok(Self { values, ..self.clone() })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m[(i, j)] = a;
            }
        }
        m
    }

    /// Coordinate-list text: header `N epsilon kind`, then `i,j,value` per stored entry.
    pub fn write_coo(&self, mut w: impl Write, epsilon: f64, kind: &str) -> Result<()> {
        writeln!(w, "{} {} {}", self.n, fmt_num(epsilon), kind)?;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                writeln!(w, "{i},{j},{}", fmt_num(a))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_coo`](Self::write_coo); returns the matrix, ε and kind.
    pub fn read_coo(r: impl BufRead) -> Result<(Self, f64, String)> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Parse { row: 1, msg: "empty file".into() })??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse { row: 1, msg: "header must be `N epsilon kind`".into() });
        }
        let bad = |row, msg: &str| Error::Parse { row, msg: msg.to_string() };
        let n: usize = parts[0].parse().map_err(|_| bad(1, "bad N"))?;
        let eps: f64 = parts[1].parse().map_err(|_| bad(1, "bad epsilon"))?;
        let mut rows: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
        for (k, line) in lines.enumerate() {
            let row = k + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(row, "expected i,j,value"));
            }
            let i: usize = f[0].trim().parse().map_err(|_| bad(row, "bad row index"))?;
            let j: usize = f[1].trim().parse().map_err(|_| bad(row, "bad column index"))?;
            let v: f64 = f[2].trim().parse().map_err(|_| bad(row, "bad value"))?;
            if i >= n || j >= n {
                return Err(bad(row, "index out of range"));
            }
            rows[i].0.push(j);
            rows[i].1.push(v);
        }
        for (c, v) in rows.iter_mut() {
            let mut idx: Vec<usize> = (0..c.len()).collect();
            idx.sort_by_key(|&k| c[k]);
            *c = idx.iter().map(|&k| c[k]).collect();
            *v = idx.iter().map(|&k| v[k]).collect();
        }
        Ok((Self::from_rows(rows)?, eps, parts[2].to_string()))
    }
}
