//! Kernel matrices over point clouds and their normalization into generators.

use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, LocalKernelSpec, Site};
use crate::knn::NeighborIndex;
use crate::sparse::CsrMatrix;

pub const DEFAULT_KNN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sparsity {
    Dense,
    /// k nearest neighbours per point, pattern symmetrized by union.
    Knn(usize),
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::Knn(DEFAULT_KNN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalizationStep {
    Symmetrized,
    Right { alpha: f64 },
    Left,
}

#[derive(Debug, Clone)]
pub struct SparseKernelMatrix {
    pub weights: CsrMatrix,
    pub epsilon: f64,
    pub sparsity: Sparsity,
    pub symmetric: bool,
    pub normalization: Vec<NormalizationStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Kolmogorov,
    FokkerPlanck,
    IntrinsicLaplacian,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Kolmogorov => "kolmogorov",
            GeneratorKind::FokkerPlanck => "fokker_planck",
            GeneratorKind::IntrinsicLaplacian => "intrinsic_laplacian",
        }
    }

    pub fn annihilates_constants(&self) -> bool {
        !matches!(self, GeneratorKind::FokkerPlanck)
    }
}

/// `operator = scale · Λ⁻¹ (W − diag(Δ))` with W symmetric and Λ, Δ positive
/// diagonals; similar to a symmetric matrix through Λ^{1/2}.
#[derive(Debug, Clone)]
pub struct SymmetricForm {
    pub weights: CsrMatrix,
    pub mass: Vec<f64>,
    pub diag_shift: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub operator: CsrMatrix,
    pub kind: GeneratorKind,
    pub epsilon: f64,
    pub alpha: Option<f64>,
    pub symmetric_form: Option<SymmetricForm>,
}

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.operator.n()
    }

    /// Applies the operator, summing off-diagonal terms before the diagonal so that
    /// rows built to annihilate constants do so exactly.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n(), "dimension mismatch");
        (0..self.n())
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.operator.row(i);
                let mut s = 0.0;
                let mut diag = 0.0;
                for (&j, &a) in c.iter().zip(v) {
                    if j == i {
                        diag = a;
                    } else {
                        s += a * f[j];
                    }
                }
                s + diag * f[i]
            })
            .collect()
    }

    pub fn write_coo(&self, w: impl std::io::Write) -> Result<()> {
        self.operator.write_coo(w, self.epsilon, self.kind.name())
    }
}

fn check_cloud(cloud: &PointCloud, spec: &LocalKernelSpec) -> Result<()> {
    if let Some(n) = spec.required_dim() {
        if n != cloud.dim() {
            return Err(Error::invalid(format!("kernel expects R^{n}, cloud is in R^{}", cloud.dim())));
        }
    }
    if let Some(count) = spec.required_points() {
        if count != cloud.len() {
            return Err(Error::invalid(format!(
                "kernel carries parameters for {count} points, cloud has {}",
                cloud.len()
            )));
        }
    }
    Ok(())
}

/// Row patterns (sorted, diagonal included) for the requested sparsity.
pub fn sparsity_pattern(cloud: &PointCloud, sparsity: Sparsity) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    match sparsity {
        Sparsity::Dense => Ok(vec![(0..n).collect(); n]),
        Sparsity::Knn(k) => {
            if k >= n {
                return Err(Error::invalid(format!("k = {k} must be smaller than the number of points {n}")));
            }
            let index = NeighborIndex::new(cloud)?;
            let nbrs = index.all_neighbors(k)?;
            let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
            for (i, list) in nbrs.iter().enumerate() {
                for &(_, j) in list {
                    sets[i].insert(j);
                    sets[j].insert(i);
                }
            }
            Ok(sets.into_iter().map(|s| s.into_iter().collect()).collect())
        }
    }
}

/// Evaluates `spec` on every retained pair of `cloud`.
pub fn assemble(cloud: &PointCloud, spec: &LocalKernelSpec, sparsity: Sparsity) -> Result<SparseKernelMatrix> {
    check_cloud(cloud, spec)?;
    let pattern = sparsity_pattern(cloud, sparsity)?;
    let rows: Vec<(Vec<usize>, Vec<f64>)> = pattern
        .into_par_iter()
        .enumerate()
        .map(|(i, cols)| {
            let row = spec.row(Site::at(i, cloud.point(i)))?;
            let vals = cols
                .iter()
                .map(|&j| row.eval(Site::at(j, cloud.point(j))))
                .collect::<Result<Vec<f64>>>()?;
            Ok((cols, vals))
        })
        .collect::<Result<_>>()?;
    let mut weights = CsrMatrix::from_rows(rows)?;
    let symmetric = spec.family.is_symmetric();
    if symmetric {
        // Mirror the upper triangle so the symmetry is exact, not merely up to rounding.
        let t = weights.transpose();
        weights = weights.map_rows(|i, cols, vals| {
            cols.iter().zip(vals).map(|(&j, &v)| if j < i { t.get(i, j) } else { v }).collect()
        });
    }
    Ok(SparseKernelMatrix { weights, epsilon: spec.epsilon, sparsity, symmetric, normalization: Vec::new() })
}

fn positive_sums(sums: &[f64], what: &'static str) -> Result<()> {
    match sums.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        Some(index) => Err(Error::ZeroSum { what, index }),
        None => Ok(()),
    }
}

impl SparseKernelMatrix {
    pub fn n(&self) -> usize {
        self.weights.n()
    }

    /// Multiplies every weight by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let weights = self.weights.map_rows(|_, _, v| v.iter().map(|x| x * c).collect());
        Self { weights, ..self.clone() }
    }

    /// K̄ = K + Kᵀ.
    pub fn symmetrized(&self) -> Result<Self> {
        let mut out = self.clone();
        out.weights = self.weights.plus_transpose()?;
        out.symmetric = true;
        out.normalization.push(NormalizationStep::Symmetrized);
        Ok(out)
    }
}

/// Divides column j by q_j^α with q_j = Σ_i K(x_j, x_i).
pub fn right_normalize(k: &SparseKernelMatrix, alpha: f64) -> Result<SparseKernelMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(k.clone());
    }
    let q = k.weights.row_sums();
    positive_sums(&q, "column")?;
    let scale: Vec<f64> = q.iter().map(|v| v.powf(-alpha)).collect();
    let weights = k.weights.map_rows(|_, cols, vals| cols.iter().zip(vals).map(|(&j, &v)| v * scale[j]).collect());
    let mut normalization = k.normalization.clone();
    normalization.push(NormalizationStep::Right { alpha });
    Ok(SparseKernelMatrix { weights, symmetric: false, normalization, ..k.clone() })
}

/// Divides each row by its sum, giving a row-stochastic matrix.
pub fn left_normalize(k: &SparseKernelMatrix) -> Result<SparseKernelMatrix> {
    let d = k.weights.row_sums();
    positive_sums(&d, "row")?;
    let weights = k.weights.map_rows(|i, _, vals| vals.iter().map(|v| v / d[i]).collect());
    let mut normalization = k.normalization.clone();
    normalization.push(NormalizationStep::Left);
    Ok(SparseKernelMatrix { weights, symmetric: false, normalization, ..k.clone() })
}

/// `scale · (P − I)` for row-stochastic P, with the diagonal set to minus the
/// off-diagonal row sum.
fn markov_operator(p: &CsrMatrix, scale: f64) -> CsrMatrix {
    p.map_rows(|i, cols, vals| {
        let off: f64 = cols.iter().zip(vals).filter(|(&j, _)| j != i).map(|(_, &v)| scale * v).sum();
        cols.iter().zip(vals).map(|(&j, &v)| if j == i { -off } else { scale * v }).collect()
    })
}

/// W = Q^{-α} K Q^{-α} for symmetric K, the symmetric partner of right then left normalization.
fn conjugated_weights(k: &CsrMatrix, alpha: f64) -> Result<CsrMatrix> {
    let q = k.row_sums();
    positive_sums(&q, "column")?;
    let s: Vec<f64> = q.iter().map(|v| v.powf(-alpha)).collect();
    Ok(k.map_rows(|i, cols, vals| cols.iter().zip(vals).map(|(&j, &v)| v * (s[i] * s[j])).collect()))
}

fn markov_form(w: CsrMatrix, scale: f64) -> Result<SymmetricForm> {
    let mass = w.row_sums();
    positive_sums(&mass, "row")?;
    Ok(SymmetricForm { weights: w, diag_shift: mass.clone(), mass, scale })
}

fn require_radial(spec: &LocalKernelSpec) -> Result<()> {
    match spec.family {
        KernelFamily::Radial(_) => Ok(()),
        _ => Err(Error::invalid("diffusion maps need a radial kernel")),
    }
}

/// `(P − I)/ε` with P the row normalization of the α-right-normalized radial kernel.
pub fn diffusion_maps_generator(
    cloud: &PointCloud,
    spec: &LocalKernelSpec,
    alpha: f64,
    sparsity: Sparsity,
) -> Result<GeneratorMatrix> {
    require_radial(spec)?;
    let k = assemble(cloud, spec, sparsity)?;
    diffusion_maps_from_kernel(&k, alpha)
}

pub fn diffusion_maps_from_kernel(k: &SparseKernelMatrix, alpha: f64) -> Result<GeneratorMatrix> {
    markov_generator(k, alpha, 1.0 / k.epsilon, GeneratorKind::Kolmogorov)
}

fn markov_generator(k: &SparseKernelMatrix, alpha: f64, scale: f64, kind: GeneratorKind) -> Result<GeneratorMatrix> {
    let p = left_normalize(&right_normalize(k, alpha)?)?;
    let symmetric_form = if k.symmetric {
        Some(markov_form(conjugated_weights(&k.weights, alpha)?, scale)?)
    } else {
        None
    };
    Ok(GeneratorMatrix {
        operator: markov_operator(&p.weights, scale),
        kind,
        epsilon: k.epsilon,
        alpha: Some(alpha),
        symmetric_form,
    })
}

/// `((K1)⁻¹ K f − f)/ε`.
pub fn local_kernel_generator(k: &SparseKernelMatrix) -> Result<GeneratorMatrix> {
    diffusion_maps_from_kernel(k, 0.0).map(|g| GeneratorMatrix { alpha: None, ..g })
}

/// `(Pᵀ − I)/ε` with P the row normalization of K.
pub fn adjoint_generator(k: &SparseKernelMatrix) -> Result<GeneratorMatrix> {
    let p = left_normalize(k)?;
    let scale = 1.0 / k.epsilon;
    let operator = p.weights.transpose().map_rows(|i, cols, vals| {
        cols.iter().zip(vals).map(|(&j, &v)| if j == i { scale * (v - 1.0) } else { scale * v }).collect()
    });
    Ok(GeneratorMatrix { operator, kind: GeneratorKind::FokkerPlanck, epsilon: k.epsilon, alpha: None, symmetric_form: None })
}

/// `(K f − diag(K1) f)/(ε m)` for a per-point zeroth-moment estimate m.
pub fn subtraction_generator(k: &SparseKernelMatrix, m_estimate: &[f64]) -> Result<GeneratorMatrix> {
    if m_estimate.len() != k.n() {
        return Err(Error::invalid("one moment estimate per point is required"));
    }
    if let Some(i) = m_estimate.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::invalid(format!("moment estimate at point {i} is not positive")));
    }
    let eps = k.epsilon;
    let operator = k.weights.map_rows(|i, cols, vals| {
        let s = 1.0 / (eps * m_estimate[i]);
        let off: f64 = cols.iter().zip(vals).filter(|(&j, _)| j != i).map(|(_, &v)| s * v).sum();
        cols.iter().zip(vals).map(|(&j, &v)| if j == i { -off } else { s * v }).collect()
    });
    let symmetric_form = k.symmetric.then(|| SymmetricForm {
        weights: k.weights.clone(),
        mass: m_estimate.to_vec(),
        diag_shift: k.weights.row_sums(),
        scale: 1.0 / eps,
    });
    Ok(GeneratorMatrix { operator, kind: GeneratorKind::Kolmogorov, epsilon: eps, alpha: None, symmetric_form })
}

/// Laplacian of the kernel's intrinsic geometry under nonuniform sampling:
/// symmetrize, right-normalize with α = 1, row-normalize, `(P − I)·2/ε`.
pub fn intrinsic_laplacian(cloud: &PointCloud, spec: &LocalKernelSpec, sparsity: Sparsity) -> Result<GeneratorMatrix> {
    intrinsic_laplacian_from_kernel(&assemble(cloud, spec, sparsity)?)
}

pub fn intrinsic_laplacian_from_kernel(k: &SparseKernelMatrix) -> Result<GeneratorMatrix> {
    markov_generator(&k.symmetrized()?, 1.0, 2.0 / k.epsilon, GeneratorKind::IntrinsicLaplacian)
}

/// Mean squared distance to the nearest other point; coincident points are skipped.
pub fn epsilon_heuristic(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::invalid("the heuristic needs at least two points"));
    }
    let index = NeighborIndex::new(cloud)?;
    let nn = index.all_neighbors(1)?;
    let dists: Vec<f64> = nn.iter().map(|v| v[0].0).collect();
    let duplicates = dists.iter().filter(|&&d| d == 0.0).count();
    if duplicates > 0 {
        warn!("{duplicates} points coincide with another point and are excluded from the bandwidth heuristic");
    }
    let kept: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::invalid("all points coincide"));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}
