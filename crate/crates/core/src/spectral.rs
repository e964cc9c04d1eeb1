//! Eigendecomposition of generators, spectral coordinates and least-squares maps
//! between embeddings.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::eigen::{general_smallest, residual, symmetric_top, EigenOptions, ResidualMetric};
use crate::error::{Error, Result};
use crate::fmt_num;
use crate::graph::{GeneratorKind, GeneratorMatrix, SymmetricForm};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// Sorted by |λ| ascending.
    pub eigenvalues: Vec<f64>,
    /// N×k, unit-norm columns.
    pub eigenvectors: DMatrix<f64>,
    pub kind: GeneratorKind,
}

#[derive(Debug, Clone)]
pub struct LinearMap {
    /// target_dim × source_dim.
    pub matrix: DMatrix<f64>,
    pub relative_residual: f64,
}

fn conjugated(form: &SymmetricForm) -> CsrMatrix {
    let s: Vec<f64> = form.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    form.weights.map_rows(|i, cols, vals| {
        cols.iter()
            .zip(vals)
            .map(|(&j, &w)| {
                let w = if j == i { w - form.diag_shift[i] } else { w };
                w * (s[i] * s[j])
            })
            .collect()
    })
}

/// Makes the first entry of largest magnitude positive.
fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// The `k` eigenpairs of `g` with eigenvalues closest to zero.
pub fn decompose(g: &GeneratorMatrix, k: usize, opts: &EigenOptions) -> Result<SpectralEmbedding> {
    let n = g.n();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 ≤ k < N, got k = {k}, N = {n}")));
    }
    let (values, mut vectors) = match &g.symmetric_form {
        Some(form) => {
            let t = conjugated(form);
            let weights: Vec<f64> = form.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
            let metric = ResidualMetric { weights: weights.clone(), scale: form.scale };
            let top = symmetric_top(&t, k, &metric, opts)?;
            let values: Vec<f64> = top.values.iter().map(|v| v * form.scale).collect();
            let mut vectors = top.vectors;
            for mut col in vectors.column_iter_mut() {
                for (x, w) in col.iter_mut().zip(&weights) {
                    *x *= w;
                }
            }
            (values, vectors)
        }
        None => general_smallest(&g.operator, k, opts)?,
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted = DMatrix::zeros(n, k);
    for (c, &i) in order.iter().enumerate() {
        let mut v = vectors.column(i).normalize();
        fix_sign(&mut v);
        let r = residual(|f| g.apply(f), eigenvalues[c], &v);
        if r > opts.tol {
            return Err(Error::NoConvergence(format!(
                "eigenpair {c} (λ = {}) has residual {r:e} above {:e}",
                eigenvalues[c], opts.tol
            )));
        }
        sorted.set_column(c, &v);
    }
    vectors = sorted;
    Ok(SpectralEmbedding { eigenvalues, eigenvectors: vectors, kind: g.kind })
}

impl SpectralEmbedding {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Selected eigenvectors as coordinates.
    pub fn embed(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("eigenvector index {bad} out of range 0..{}", self.len())));
        }
        let n = self.eigenvectors.nrows();
        Ok(DMatrix::from_fn(n, indices.len(), |r, c| self.eigenvectors[(r, indices[c])]))
    }

    /// Header `lambda_0,...`, one row of eigenvalues, then one row per point.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.len()).map(|j| format!("lambda_{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        writeln!(w, "{}", self.eigenvalues.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(","))?;
        for row in self.eigenvectors.row_iter() {
            writeln!(w, "{}", row.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn embed(decomp: &SpectralEmbedding, indices: &[usize]) -> Result<DMatrix<f64>> {
    decomp.embed(indices)
}

/// Columns that are numerically dependent on earlier ones (relative tolerance on
/// the largest singular value).
fn dependent_columns(a: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let smax = a.clone().singular_values().max();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for c in 0..a.ncols() {
        let mut v = a.column(c).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&v);
                v.axpy(-p, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= rel_tol * smax || smax == 0.0 {
            bad.push(c);
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

fn least_squares(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if source.nrows() != target.nrows() {
        return Err(Error::invalid("source and target have different numbers of points"));
    }
    if source.nrows() < source.ncols() {
        return Err(Error::invalid("fewer points than source coordinates"));
    }
    let bad = dependent_columns(source, 1e-10);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(format!("source columns {bad:?} are linearly dependent")));
    }
    let svd = source.clone().svd(true, true);
    svd.solve(target, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))
}

/// H minimizing Σ‖target_i − H source_i‖².
pub fn fit_linear_map(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<LinearMap> {
    let x = least_squares(source, target)?;
    let tnorm = target.norm();
    if tnorm == 0.0 {
        return Err(Error::invalid("target coordinates are all zero"));
    }
    let relative_residual = (target - source * &x).norm() / tnorm;
    Ok(LinearMap { matrix: x.transpose(), relative_residual })
}

/// Least-squares fit of `u` on the columns of `candidates`; returns the coefficients and R².
pub fn align_and_compare(u: &[f64], candidates: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let uv = DMatrix::from_column_slice(u.len(), 1, u);
    let coef = least_squares(candidates, &uv)?;
    let res = (&uv - candidates * &coef).norm_squared();
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let tot: f64 = u.iter().map(|v| (v - mean).powi(2)).sum();
    if tot == 0.0 {
        return Err(Error::invalid("u is constant, R² undefined"));
    }
    Ok((coef.column(0).iter().copied().collect(), 1.0 - res / tot))
}
