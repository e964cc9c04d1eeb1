//! Local kernel families and their pointwise evaluation.
//!
//! A kernel is evaluated between two [`Site`]s. Families whose parameters live on
//! the data (per-point covariances, Jacobians, densities) need the site index;
//! purely geometric families only use the coordinates.
//!
//! The prototypical kernel is
//! `K(ε,x,y) = exp(−ΔᵀA(x)⁻¹Δ/(2ε) + ΔᵀA(x)⁻¹b(x))` with `Δ = y − x`,
//! i.e. the anisotropic Gaussian centred at `x + εb(x)` with the O(ε) constant
//! `ε bᵀA⁻¹b/2` dropped so that `K(ε,x,x) = 1`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A drift and covariance field for prototypical kernels.
///
/// Implementations are shared between worker threads and must be safe to
/// evaluate concurrently.
pub trait DriftDiffusionField: Send + Sync {
    /// Ambient dimension the field is defined on.
    fn dim(&self) -> usize;
    /// Symmetric positive-definite covariance A(x).
    fn covariance(&self, x: &[f64]) -> DMatrix<f64>;
    /// Drift b(x).
    fn drift(&self, x: &[f64]) -> DVector<f64>;
}

/// Spatially constant A and b.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub covariance: DMatrix<f64>,
    pub drift: DVector<f64>,
}

impl ConstantField {
    pub fn new(covariance: DMatrix<f64>, drift: DVector<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() != drift.len() {
            return Err(Error::invalid("covariance must be n×n with an n-vector drift"));
        }
        Ok(Self { covariance, drift })
    }

    pub fn isotropic(dim: usize) -> Self {
        Self { covariance: DMatrix::identity(dim, dim), drift: DVector::zeros(dim) }
    }
}

impl DriftDiffusionField for ConstantField {
    fn dim(&self) -> usize {
        self.drift.len()
    }
    fn covariance(&self, _: &[f64]) -> DMatrix<f64> {
        self.covariance.clone()
    }
    fn drift(&self, _: &[f64]) -> DVector<f64> {
        self.drift.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialShape {
    /// h(u) = exp(−u/width)
    Gaussian { width: f64 },
    /// h(u) = max(1 − u, 0)
    TruncatedParabola,
}

impl RadialShape {
    /// The diffusion-maps Gaussian exp(−‖x−y‖²/(4ε)).
    pub const fn diffusion() -> Self {
        RadialShape::Gaussian { width: 4.0 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            RadialShape::Gaussian { width } => (-u / width).exp(),
            RadialShape::TruncatedParabola => (1.0 - u).max(0.0),
        }
    }
}

/// Per-point covariances C_i of the ICA kernel, kept as Cholesky factors.
#[derive(Clone)]
pub struct IcaCovariances {
    factors: Vec<DMatrix<f64>>,
    largest_eigenvalue: Vec<f64>,
}

impl IcaCovariances {
    pub fn new(covariances: &[DMatrix<f64>]) -> Result<Self> {
        let mut factors = Vec::with_capacity(covariances.len());
        let mut largest_eigenvalue = Vec::with_capacity(covariances.len());
        for (i, c) in covariances.iter().enumerate() {
            let chol = cholesky(c).ok_or(Error::NotPositiveDefinite { index: Some(i) })?;
            factors.push(chol.l());
            largest_eigenvalue.push(c.clone().symmetric_eigen().eigenvalues.max());
        }
        Ok(Self { factors, largest_eigenvalue })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

#[derive(Clone)]
pub enum KernelFamily {
    Radial(RadialShape),
    Prototypical(Arc<dyn DriftDiffusionField>),
    /// exp(−Δᵀ(C_i⁻¹ + C_j⁻¹)Δ/(4ε)); indexes both sites.
    Ica(Arc<IcaCovariances>),
    /// exp(−‖DH_i Δ‖²/(2ε)); DH_i is an m×n matrix per point.
    Jacobian(Arc<Vec<DMatrix<f64>>>),
    /// exp(−‖Δ‖² q_i^{2/d}/(4ε)).
    Conformal { density: Arc<Vec<f64>>, dim: usize },
}

impl fmt::Debug for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Radial(s) => write!(f, "Radial({s:?})"),
            KernelFamily::Prototypical(field) => write!(f, "Prototypical(dim {})", field.dim()),
            KernelFamily::Ica(c) => write!(f, "Ica({} points)", c.len()),
            KernelFamily::Jacobian(j) => write!(f, "Jacobian({} points)", j.len()),
            KernelFamily::Conformal { density, dim } => {
                write!(f, "Conformal({} points, d = {dim})", density.len())
            }
        }
    }
}

impl KernelFamily {
    /// True when K(ε,x,y) = K(ε,y,x) by construction.
    pub fn is_symmetric(&self) -> bool {
        matches!(self, KernelFamily::Radial(_) | KernelFamily::Ica(_))
    }
}

#[derive(Debug, Clone)]
pub struct LocalKernelSpec {
    pub family: KernelFamily,
    pub epsilon: f64,
}

/// A point at which a kernel is evaluated, with its index when it belongs to a cloud.
#[derive(Debug, Clone, Copy)]
pub struct Site<'a> {
    pub index: Option<usize>,
    pub point: &'a [f64],
}

impl<'a> Site<'a> {
    pub fn at(index: usize, point: &'a [f64]) -> Self {
        Self { index: Some(index), point }
    }

    pub fn free(point: &'a [f64]) -> Self {
        Self { index: None, point }
    }
}

/// Constants of the bound K(ε,x,x+√ε z) ≤ c·exp(−σ‖z − √ε b(x)‖²).
#[derive(Debug, Clone)]
pub struct LocalBound {
    pub c: f64,
    pub sigma: f64,
    pub drift: DVector<f64>,
}

fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if !a.is_square() || a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sym = (a + a.transpose()) * 0.5;
    if (&sym - a).amax() > 1e-12 * a.amax().max(1.0) {
        return None;
    }
    Cholesky::new(sym)
}

/// Solves L w = r in place for lower-triangular L.
fn forward_solve(l: &DMatrix<f64>, r: &mut [f64]) {
    let n = r.len();
    for i in 0..n {
        let mut s = r[i];
        for k in 0..i {
            s -= l[(i, k)] * r[k];
        }
        r[i] = s / l[(i, i)];
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel state for a fixed first argument x, reused across many y.
pub struct RowKernel<'s> {
    spec: &'s LocalKernelSpec,
    x: Vec<f64>,
    index: Option<usize>,
    prepared: Prepared<'s>,
}

enum Prepared<'s> {
    Radial(RadialShape),
    Prototypical { l: DMatrix<f64>, lb: Vec<f64> },
    Ica { cov: &'s IcaCovariances, l: &'s DMatrix<f64> },
    Jacobian(&'s DMatrix<f64>),
    Conformal(f64),
}

fn need_index(site: &Site<'_>, what: &str) -> Result<usize> {
    site.index.ok_or_else(|| Error::invalid(format!("{what} kernels are defined on cloud points only")))
}

impl LocalKernelSpec {
    pub fn new(family: KernelFamily, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { family, epsilon })
    }

    pub fn radial(shape: RadialShape, epsilon: f64) -> Result<Self> {
        Self::new(KernelFamily::Radial(shape), epsilon)
    }

    pub fn prototypical(field: Arc<dyn DriftDiffusionField>, epsilon: f64) -> Result<Self> {
        Self::new(KernelFamily::Prototypical(field), epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.family.clone(), epsilon)
    }

    /// Ambient dimension required by the family, when it fixes one.
    pub fn required_dim(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::Prototypical(f) => Some(f.dim()),
            KernelFamily::Ica(c) => c.factors.first().map(|l| l.nrows()),
            KernelFamily::Jacobian(j) => j.first().map(|m| m.ncols()),
            _ => None,
        }
    }

    /// Number of points the family carries parameters for, if any.
    pub fn required_points(&self) -> Option<usize> {
        match &self.family {
            KernelFamily::Ica(c) => Some(c.len()),
            KernelFamily::Jacobian(j) => Some(j.len()),
            KernelFamily::Conformal { density, .. } => Some(density.len()),
            _ => None,
        }
    }

    pub fn row(&self, x: Site<'_>) -> Result<RowKernel<'_>> {
        if let Some(n) = self.required_dim() {
            if x.point.len() != n {
                return Err(Error::invalid(format!(
                    "kernel expects points in R^{n}, got dimension {}",
                    x.point.len()
                )));
            }
        }
        let prepared = match &self.family {
            KernelFamily::Radial(s) => Prepared::Radial(*s),
            KernelFamily::Prototypical(field) => {
                let a = field.covariance(x.point);
                let chol = cholesky(&a).ok_or(Error::NotPositiveDefinite { index: x.index })?;
                let l = chol.l();
                let mut lb: Vec<f64> = field.drift(x.point).iter().copied().collect();
                forward_solve(&l, &mut lb);
                Prepared::Prototypical { l, lb }
            }
            KernelFamily::Ica(cov) => {
                let i = need_index(&x, "ICA")?;
                let l = cov.factors.get(i).ok_or_else(|| Error::invalid(format!("no covariance for point {i}")))?;
                Prepared::Ica { cov, l }
            }
            KernelFamily::Jacobian(jac) => {
                let i = need_index(&x, "Jacobian")?;
                Prepared::Jacobian(jac.get(i).ok_or_else(|| Error::invalid(format!("no Jacobian for point {i}")))?)
            }
            KernelFamily::Conformal { density, dim } => {
                let i = need_index(&x, "conformal")?;
                let q = *density.get(i).ok_or_else(|| Error::invalid(format!("no density for point {i}")))?;
                if !(q > 0.0) {
                    return Err(Error::invalid(format!("density at point {i} is not positive")));
                }
                Prepared::Conformal(q.powf(2.0 / *dim as f64))
            }
        };
        Ok(RowKernel { spec: self, x: x.point.to_vec(), index: x.index, prepared })
    }

    pub fn eval(&self, x: Site<'_>, y: Site<'_>) -> Result<f64> {
        self.row(x)?.eval(y)
    }

    /// Analytic constants of the local-kernel decay bound at x.
    pub fn local_bound(&self, x: Site<'_>) -> Result<LocalBound> {
        let n = x.point.len();
        let zero = DVector::zeros(n);
        let eps = self.epsilon;
        let bound = match &self.family {
            KernelFamily::Radial(RadialShape::Gaussian { width }) => {
                LocalBound { c: 1.0, sigma: 1.0 / width, drift: zero }
            }
            KernelFamily::Radial(RadialShape::TruncatedParabola) => LocalBound { c: 1.0, sigma: 1.0, drift: zero },
            KernelFamily::Prototypical(field) => {
                let a = field.covariance(x.point);
                let b = field.drift(x.point);
                let chol = cholesky(&a).ok_or(Error::NotPositiveDefinite { index: x.index })?;
                let quad = b.dot(&chol.solve(&b));
                let lmax = a.symmetric_eigen().eigenvalues.max();
                LocalBound { c: (eps * quad / 2.0).exp(), sigma: 1.0 / (2.0 * lmax), drift: b }
            }
            KernelFamily::Ica(cov) => {
                let i = need_index(&x, "ICA")?;
                LocalBound { c: 1.0, sigma: 1.0 / (4.0 * cov.largest_eigenvalue[i]), drift: zero }
            }
            KernelFamily::Jacobian(jac) => {
                let i = need_index(&x, "Jacobian")?;
                let dh = &jac[i];
                let smin = if dh.nrows() < dh.ncols() { 0.0 } else { dh.singular_values().min() };
                LocalBound { c: 1.0, sigma: smin * smin / 2.0, drift: zero }
            }
            KernelFamily::Conformal { density, dim } => {
                let i = need_index(&x, "conformal")?;
                LocalBound { c: 1.0, sigma: density[i].powf(2.0 / *dim as f64) / 4.0, drift: zero }
            }
        };
        Ok(bound)
    }
}

impl RowKernel<'_> {
    pub fn eval(&self, y: Site<'_>) -> Result<f64> {
        let x = &self.x;
        if y.point.len() != x.len() {
            return Err(Error::invalid("kernel arguments have different dimensions"));
        }
        let eps = self.spec.epsilon;
        let v = match &self.prepared {
            Prepared::Radial(s) => s.eval(sq_dist(x, y.point) / eps),
            Prepared::Prototypical { l, lb } => {
                let mut w: Vec<f64> = y.point.iter().zip(x).map(|(a, b)| a - b).collect();
                forward_solve(l, &mut w);
                let quad: f64 = w.iter().map(|v| v * v).sum();
                let cross: f64 = w.iter().zip(lb).map(|(a, b)| a * b).sum();
                (-quad / (2.0 * eps) + cross).exp()
            }
            Prepared::Ica { cov, l } => {
                let j = need_index(&y, "ICA")?;
                let lj = cov.factors.get(j).ok_or_else(|| Error::invalid(format!("no covariance for point {j}")))?;
                let d: Vec<f64> = y.point.iter().zip(x).map(|(a, b)| a - b).collect();
                let mut wi = d.clone();
                forward_solve(l, &mut wi);
                let mut wj = d;
                forward_solve(lj, &mut wj);
                let quad: f64 = wi.iter().chain(&wj).map(|v| v * v).sum();
                (-quad / (4.0 * eps)).exp()
            }
            Prepared::Jacobian(dh) => {
                let mut quad = 0.0;
                for r in 0..dh.nrows() {
                    let s: f64 = (0..dh.ncols()).map(|c| dh[(r, c)] * (y.point[c] - x[c])).sum();
                    quad += s * s;
                }
                (-quad / (2.0 * eps)).exp()
            }
            Prepared::Conformal(factor) => (-sq_dist(x, y.point) * factor / (4.0 * eps)).exp(),
        };
        if !v.is_finite() {
            return Err(Error::NonFinite { row: self.index.unwrap_or(0), col: y.index.unwrap_or(0) });
        }
        Ok(v)
    }
}

/// K̄(ε,x,y) = K(ε,x,y) + K(ε,y,x).
#[derive(Debug, Clone)]
pub struct SymmetrizedKernel {
    pub spec: LocalKernelSpec,
}

pub fn symmetrize(spec: &LocalKernelSpec) -> SymmetrizedKernel {
    SymmetrizedKernel { spec: spec.clone() }
}

impl SymmetrizedKernel {
    pub fn eval(&self, x: Site<'_>, y: Site<'_>) -> Result<f64> {
        Ok(self.spec.eval(x, y)? + self.spec.eval(y, x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proto(a: DMatrix<f64>, b: DVector<f64>, eps: f64) -> LocalKernelSpec {
        LocalKernelSpec::prototypical(Arc::new(ConstantField::new(a, b).unwrap()), eps).unwrap()
    }

    #[test]
    fn prototypical_identity_at_diagonal() {
        let k = proto(DMatrix::identity(3, 3), DVector::zeros(3), 0.37);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(k.eval(Site::free(&x), Site::free(&x)).unwrap(), 1.0);
    }

    #[test]
    fn radial_gaussian_at_unit_ratio() {
        let k = LocalKernelSpec::radial(RadialShape::diffusion(), 0.5).unwrap();
        let x = [0.0, 0.0];
        let y = [0.5f64.sqrt(), 0.0];
        let v = k.eval(Site::free(&x), Site::free(&y)).unwrap();
        assert!((v - (-0.25f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn prototypical_matches_scalar_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![0.3, -0.2]);
        let eps = 0.01;
        let k = proto(a, b, eps);
        let (x, y) = ([0.1, 0.2], [0.15, 0.12]);
        // A⁻¹ = [[1, −0.5], [−0.5, 2]] / 1.75
        let (d0, d1) = (0.05, -0.08);
        let quad = (d0 * d0 - d0 * d1 + 2.0 * d1 * d1) / 1.75;
        let cross = (d0 * (0.3 + 0.1) + d1 * (-0.15 - 0.4)) / 1.75;
        let expected = (-quad / (2.0 * eps) + cross).exp();
        let got = k.eval(Site::free(&x), Site::free(&y)).unwrap();
        assert!((got - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn non_spd_reports_point() {
        let k = proto(DMatrix::from_diagonal_element(2, 2, -1.0), DVector::zeros(2), 1.0);
        let x = [0.0, 0.0];
        match k.eval(Site::at(7, &x), Site::free(&x)) {
            Err(Error::NotPositiveDefinite { index: Some(7) }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symmetrized_values() {
        let r = LocalKernelSpec::radial(RadialShape::diffusion(), 0.2).unwrap();
        let (x, y) = ([0.0, 1.0], [0.3, 0.8]);
        let j = r.eval(Site::free(&x), Site::free(&y)).unwrap();
        assert_eq!(symmetrize(&r).eval(Site::free(&x), Site::free(&y)).unwrap(), 2.0 * j);
        let k = proto(DMatrix::identity(2, 2), DVector::zeros(2), 0.2);
        assert_eq!(symmetrize(&k).eval(Site::free(&x), Site::free(&x)).unwrap(), 2.0);
    }

    #[test]
    fn ica_uses_both_covariances() {
        let c = vec![DMatrix::identity(2, 2), DMatrix::from_diagonal_element(2, 2, 4.0)];
        let k = LocalKernelSpec::new(KernelFamily::Ica(Arc::new(IcaCovariances::new(&c).unwrap())), 0.5).unwrap();
        let (x, y) = ([0.0, 0.0], [1.0, 0.0]);
        let v = k.eval(Site::at(0, &x), Site::at(1, &y)).unwrap();
        assert!((v - (-(1.0 + 0.25) / 2.0f64).exp()).abs() < 1e-15);
        assert!(k.eval(Site::free(&x), Site::at(1, &y)).is_err());
    }
}
