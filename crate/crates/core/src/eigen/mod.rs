//! Eigensolvers for the top of the spectrum of a sparse symmetric matrix T whose
//! spectrum lies at or below zero, plus a dense route for general matrices.
//!
//! Symmetric problems use block subspace iteration with Rayleigh–Ritz
//! extraction, which copes with the exact multiplicities of grid data. The block
//! is either multiplied by `(σI − T)⁻¹` through a skyline LDLᵀ factorization, or
//! by a Chebyshev polynomial in T when the factor would be too large.

mod skyline;

pub use skyline::{profile_size, reverse_cuthill_mckee, SkylineLdl};

use log::{debug, info};
use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    Auto,
    Dense,
    ShiftInvert,
    Chebyshev,
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub method: EigenMethod,
    /// Required residual ‖Lv − λv‖/‖v‖ in generator units.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Symmetric problems up to this size are solved densely under `Auto`.
    pub dense_limit: usize,
    /// Largest skyline (stored entries) for which shift-invert is used under `Auto`.
    pub profile_limit: usize,
    /// Largest general (non-symmetric) problem accepted.
    pub general_dense_limit: usize,
    /// Shift in generator units used by shift-invert.
    pub shift: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            method: EigenMethod::Auto,
            tol: 1e-6,
            max_iter: 1000,
            seed: 0,
            dense_limit: 600,
            profile_limit: 60_000_000,
            general_dense_limit: 2000,
            shift: 1e-3,
        }
    }
}

/// How residuals in T translate to the generator: for eigenvector x of T the
/// generator eigenvector is `w ∘ x` and its residual is `scale · ‖w ∘ r‖`.
#[derive(Debug, Clone)]
pub struct ResidualMetric {
    pub weights: Vec<f64>,
    pub scale: f64,
}

impl ResidualMetric {
    fn eval(&self, x: &[f64], r: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((w, a), b) in self.weights.iter().zip(x).zip(r) {
            num += (w * b) * (w * b);
            den += (w * a) * (w * a);
        }
        self.scale * (num / den).sqrt()
    }
}

/// Eigenpairs of T with the largest eigenvalues, in decreasing order.
pub struct TopPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
}

fn gershgorin_lower(t: &CsrMatrix) -> f64 {
    (0..t.n())
        .map(|i| {
            let (c, v) = t.row(i);
            let mut d = 0.0;
            let mut off = 0.0;
            for (&j, &a) in c.iter().zip(v) {
                if j == i {
                    d = a;
                } else {
                    off += a.abs();
                }
            }
            d - off
        })
        .fold(f64::INFINITY, f64::min)
}

fn sparse_times_block(t: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.n();
    let b = x.ncols();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (c, v) = t.row(i);
            (0..b).map(move |col| c.iter().zip(v).map(|(&j, &a)| a * x[(j, col)]).sum::<f64>())
        })
        .collect();
    DMatrix::from_row_slice(n, b, &rows)
}

fn random_block(n: usize, b: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng))
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Rayleigh–Ritz on span(q): returns Ritz values (descending), vectors, and T·vectors.
fn rayleigh_ritz(t: &CsrMatrix, q: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let tq = sparse_times_block(t, q);
    let h = q.transpose() * &tq;
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = DMatrix::from_fn(q.ncols(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (values, q * &v, tq * v)
}

fn converged(values: &[f64], x: &DMatrix<f64>, tx: &DMatrix<f64>, k: usize, metric: &ResidualMetric, tol: f64) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    for j in 0..k {
        let xj: Vec<f64> = x.column(j).iter().copied().collect();
        let rj: Vec<f64> = tx.column(j).iter().zip(&xj).map(|(a, b)| a - values[j] * b).collect();
        worst = worst.max(metric.eval(&xj, &rj));
    }
    (worst <= tol, worst)
}

fn block_size(k: usize, n: usize) -> usize {
    (2 * k).max(k + 10).min(n)
}

/// The `k` largest eigenpairs of symmetric `t` (spectrum ≤ 0 up to rounding).
pub fn symmetric_top(t: &CsrMatrix, k: usize, metric: &ResidualMetric, opts: &EigenOptions) -> Result<TopPairs> {
    let n = t.n();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 ≤ k < N, got k = {k}, N = {n}")));
    }
    let method = match opts.method {
        EigenMethod::Auto if n <= opts.dense_limit => EigenMethod::Dense,
        EigenMethod::Auto => {
            let perm = reverse_cuthill_mckee(t);
            if profile_size(t, &perm) <= opts.profile_limit {
                return shift_invert(t, k, metric, opts, Some(perm));
            }
            EigenMethod::Chebyshev
        }
        m => m,
    };
    match method {
        EigenMethod::Dense => dense_top(t, k),
        EigenMethod::ShiftInvert => shift_invert(t, k, metric, opts, None),
        _ => chebyshev(t, k, metric, opts),
    }
}

fn dense_top(t: &CsrMatrix, k: usize) -> Result<TopPairs> {
    let d = t.to_dense();
    let eig = SymmetricEigen::new((&d + d.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..t.n()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    Ok(TopPairs {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: DMatrix::from_fn(t.n(), k, |r, c| eig.eigenvectors[(r, order[c])]),
        iterations: 0,
    })
}

fn shift_invert(
    t: &CsrMatrix,
    k: usize,
    metric: &ResidualMetric,
    opts: &EigenOptions,
    perm: Option<Vec<usize>>,
) -> Result<TopPairs> {
    let n = t.n();
    let perm = perm.unwrap_or_else(|| reverse_cuthill_mckee(t));
    // B = σI − T is factored as (−T) + σI.
    let neg = t.map_rows(|_, _, v| v.iter().map(|x| -x).collect());
    let mut sigma = (opts.shift / metric.scale).max(1e-13);
    let factor = loop {
        match SkylineLdl::factor(&neg, perm.clone(), sigma) {
            Ok(f) => break f,
            Err(_) if sigma < 1.0 => sigma *= 10.0,
            Err(e) => return Err(e),
        }
    };
    debug!("shift-invert: N = {n}, shift {sigma:e}");
    let b = block_size(k, n);
    let mut q = orthonormalize(random_block(n, b, opts.seed));
    let mut worst = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let cols: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|c| factor.solve(q.column(c).as_slice()))
            .collect();
        let y = DMatrix::from_fn(n, b, |r, c| cols[c][r]);
        q = orthonormalize(y);
        let (values, x, tx) = rayleigh_ritz(t, &q);
        let (ok, w) = converged(&values, &x, &tx, k, metric, 0.5 * opts.tol);
        worst = w;
        if ok {
            info!("shift-invert converged in {it} iterations");
            return Ok(TopPairs { values: values[..k].to_vec(), vectors: x.columns(0, k).into_owned(), iterations: it });
        }
        q = x;
    }
    Err(Error::NoConvergence(format!("shift-invert: worst residual {worst:e} after {} iterations", opts.max_iter)))
}

fn chebyshev(t: &CsrMatrix, k: usize, metric: &ResidualMetric, opts: &EigenOptions) -> Result<TopPairs> {
    let n = t.n();
    let b = block_size(k, n);
    // Work with M = −T, whose wanted eigenvalues are the smallest.
    let upper = -gershgorin_lower(t);
    let degree = 24;
    let mut q = orthonormalize(random_block(n, b, opts.seed));
    let (mut values, mut x, _) = rayleigh_ritz(t, &q);
    let mut worst = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let cut = -values[b - 1];
        let low = -values[0];
        let e = (upper - cut) / 2.0;
        let c = (upper + cut) / 2.0;
        if !(e > 0.0) {
            break;
        }
        let mut s = e / (low - c);
        let tau = 2.0 / s;
        let apply = |v: &DMatrix<f64>| -sparse_times_block(t, v) - v * c;
        let mut prev = x.clone();
        let mut cur = apply(&x) * (s / e);
        for _ in 1..degree {
            let s_new = 1.0 / (tau - s);
            let next = apply(&cur) * (2.0 * s_new / e) - &prev * (s * s_new);
            prev = cur;
            cur = next;
            s = s_new;
        }
        q = orthonormalize(cur);
        let (v, xx, tx) = rayleigh_ritz(t, &q);
        let (ok, w) = converged(&v, &xx, &tx, k, metric, 0.5 * opts.tol);
        worst = w;
        values = v;
        x = xx;
        if ok {
            info!("chebyshev filter converged in {it} iterations");
            return Ok(TopPairs { values: values[..k].to_vec(), vectors: x.columns(0, k).into_owned(), iterations: it });
        }
    }
    Err(Error::NoConvergence(format!("chebyshev: worst residual {worst:e} after {} iterations", opts.max_iter)))
}

/// The `k` eigenpairs of a general matrix with eigenvalues closest to zero,
/// rejecting materially complex eigenvalues.
pub fn general_smallest(a: &CsrMatrix, k: usize, opts: &EigenOptions) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.n();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 ≤ k < N, got k = {k}, N = {n}")));
    }
    if n > opts.general_dense_limit {
        return Err(Error::invalid(format!(
            "non-symmetric problems are solved densely, N = {n} exceeds the limit {}",
            opts.general_dense_limit
        )));
    }
    let dense = a.to_dense();
    let norm = dense.amax().max(f64::MIN_POSITIVE);
    let mut eigs: Vec<Complex<f64>> = dense.clone().complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
    eigs.truncate(k);
    for z in &eigs {
        if z.im.abs() > 1e-6 * z.re.abs().max(1e-8 * norm) {
            return Err(Error::ComplexEigenvalue { re: z.re, im: z.im });
        }
    }
    let values: Vec<f64> = eigs.iter().map(|z| z.re).collect();
    let mut vectors = DMatrix::zeros(n, k);
    let mut j = 0;
    let mut seed = opts.seed;
    while j < k {
        // Group numerically repeated eigenvalues and iterate on the whole block.
        let mut end = j + 1;
        while end < k && (values[end] - values[j]).abs() <= 1e-9 * values[j].abs().max(1e-8 * norm) {
            end += 1;
        }
        let size = end - j;
        let shift = values[j] + 1e-10 * values[j].abs().max(norm * 1e-6);
        let lu = (&dense - DMatrix::identity(n, n) * shift).lu();
        let mut x = orthonormalize(random_block(n, size, seed));
        seed = seed.wrapping_add(1);
        for _ in 0..4 {
            let y = lu.solve(&x).ok_or_else(|| Error::NoConvergence("singular inverse-iteration shift".into()))?;
            x = orthonormalize(y);
        }
        vectors.columns_mut(j, size).copy_from(&x);
        j = end;
    }
    Ok((values, vectors))
}

/// Residual ‖A v − λ v‖ for a unit vector v.
pub fn residual(apply: impl Fn(&[f64]) -> Vec<f64>, lambda: f64, v: &DVector<f64>) -> f64 {
    let av = apply(v.as_slice());
    av.iter().zip(v.iter()).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt()
}
