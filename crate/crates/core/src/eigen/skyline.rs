//! Reverse Cuthill–McKee ordering and a skyline (variable-band) LDLᵀ factorization
//! for sparse symmetric positive-definite systems.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Reverse Cuthill–McKee permutation; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = peripheral_node(a, seed, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Breadth-first levels from `root`; returns (eccentricity, last level).
fn levels(a: &CsrMatrix, root: usize) -> (usize, Vec<usize>) {
    let mut dist = std::collections::HashMap::from([(root, 0usize)]);
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in a.row(v).0 {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(depth + 1);
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        frontier = next;
        depth += 1;
    }
}

fn peripheral_node(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let (mut ecc, mut last) = levels(a, root);
    for _ in 0..8 {
        let candidate = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap_or(&root);
        let (e, l) = levels(a, candidate);
        if e <= ecc {
            break;
        }
        root = candidate;
        ecc = e;
        last = l;
    }
    root
}

/// Skyline storage of the unit lower factor L and diagonal D of P A Pᵀ = L D Lᵀ.
pub struct SkylineLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

/// Number of stored off-diagonal entries of the skyline of `a` under `perm`.
pub fn profile_size(a: &CsrMatrix, perm: &[usize]) -> usize {
    let first = first_columns(a, perm);
    first.iter().enumerate().map(|(i, &f)| i - f).sum()
}

fn first_columns(a: &CsrMatrix, perm: &[usize]) -> Vec<usize> {
    let n = a.n();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    (0..n)
        .map(|i| a.row(perm[i]).0.iter().map(|&j| inv[j]).filter(|&j| j <= i).min().unwrap_or(i))
        .collect()
}

impl SkylineLdl {
    /// Factors the symmetric matrix `a + shift·I`; fails on a non-positive pivot.
    pub fn factor(a: &CsrMatrix, perm: Vec<usize>, shift: f64) -> Result<Self> {
        let n = a.n();
        let first = first_columns(a, &perm);
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i]);
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut lower = vec![0.0; offset[n]];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let (cols, vals) = a.row(perm[i]);
            for (&j, &v) in cols.iter().zip(vals) {
                let j = inv[j];
                if j < i {
                    lower[offset[i] + j - first[i]] = v;
                } else if j == i {
                    diag[i] = v + shift;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = lower.split_at_mut(offset[i]);
            let row = &mut rest[..i - fi];
            // row[j - fi] holds L_ij·D_j while the row is being built.
            for j in fi..i {
                let fj = first[j];
                let start = fi.max(fj);
                let lj = &done[offset[j] + start - fj..offset[j] + j - fj];
                let li = &row[start - fi..j - fi];
                let dot: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
                row[j - fi] -= dot;
            }
            let mut d = diag[i];
            for j in fi..i {
                let t = row[j - fi];
                let l = t / diag[j];
                d -= t * l;
                row[j - fi] = l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: Some(perm[i]) });
            }
            diag[i] = d;
        }
        Ok(Self { perm, first, offset, lower, diag })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Solves (A + shift·I) x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            let dot: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] -= dot;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = y[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            for (yj, l) in y[fi..i].iter_mut().zip(row) {
                *yj -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
