//! Geometric regularization: a conformally invariant embedding, and
//! reconstruction of a diffeomorphism between two corresponding clouds.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::PointCloud;
use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::graph::{
    assemble, diffusion_maps_generator, epsilon_heuristic, intrinsic_laplacian_from_kernel, GeneratorMatrix, SparseKernelMatrix,
    Sparsity,
};
use crate::kernel::{KernelFamily, LocalKernelSpec, RadialShape};
use crate::knn::NeighborIndex;
use crate::spectral::{decompose, fit_linear_map, LinearMap, SpectralEmbedding};

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    /// Unit-mean relative density.
    pub q: Vec<f64>,
    pub epsilon: f64,
}

/// Raw Gaussian kernel sums q_ε(x_i) = Σ_j exp(−‖x_i − x_j‖²/(4ε)), the same
/// row sums that diffusion maps right-normalizes by.
pub fn kernel_density_sums(cloud: &PointCloud, epsilon: f64, sparsity: Sparsity) -> Result<Vec<f64>> {
    let spec = LocalKernelSpec::radial(RadialShape::diffusion(), epsilon)?;
    Ok(assemble(cloud, &spec, sparsity)?.weights.row_sums())
}

pub fn estimate_density(cloud: &PointCloud, epsilon: f64, sparsity: Sparsity) -> Result<DensityEstimate> {
    let mut q = kernel_density_sums(cloud, epsilon, sparsity)?;
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    for v in q.iter_mut() {
        *v /= mean;
    }
    if let Some(i) = q.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::ZeroSum { what: "density", index: i });
    }
    Ok(DensityEstimate { q, epsilon })
}

/// exp(−‖x_i − x_j‖² q_i^{2/d}/(4ε)), asymmetric in general.
pub fn conformal_kernel_matrix(
    cloud: &PointCloud,
    density: &DensityEstimate,
    dim: usize,
    epsilon: f64,
    sparsity: Sparsity,
) -> Result<SparseKernelMatrix> {
    if dim == 0 {
        return Err(Error::invalid("intrinsic dimension must be at least 1"));
    }
    if let Some(i) = density.q.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("density at point {i} is not positive")));
    }
    let family = KernelFamily::Conformal { density: Arc::new(density.q.clone()), dim };
    assemble(cloud, &LocalKernelSpec::new(family, epsilon)?, sparsity)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub sparsity: Sparsity,
    /// Bandwidth override; the nearest-neighbour heuristic when `None`.
    pub epsilon: Option<f64>,
    pub eigen: EigenOptions,
}

fn bandwidth(cloud: &PointCloud, eps: Option<f64>) -> Result<f64> {
    match eps {
        Some(e) if e > 0.0 && e.is_finite() => Ok(e),
        Some(e) => Err(Error::invalid(format!("epsilon must be positive, got {e}"))),
        None => epsilon_heuristic(cloud),
    }
}

/// Laplacian of the metric q^{2/d} g, which depends only on the conformal class
/// of the data geometry.
pub fn conformal_embedding(cloud: &PointCloud, dim: usize, k_eigs: usize, opts: &PipelineOptions) -> Result<SpectralEmbedding> {
    if k_eigs < 2 {
        return Err(Error::invalid("at least two eigenpairs are required"));
    }
    decompose(&conformal_generator(cloud, dim, opts)?, k_eigs, &opts.eigen)
}

pub fn conformal_generator(cloud: &PointCloud, dim: usize, opts: &PipelineOptions) -> Result<GeneratorMatrix> {
    let eps = bandwidth(cloud, opts.epsilon)?;
    let density = estimate_density(cloud, eps, opts.sparsity)?;
    let k = conformal_kernel_matrix(cloud, &density, dim, eps, opts.sparsity)?;
    intrinsic_laplacian_from_kernel(&k)
}

/// Standard diffusion maps with α = 1.
pub fn diffusion_embedding(cloud: &PointCloud, k_eigs: usize, opts: &PipelineOptions) -> Result<SpectralEmbedding> {
    let eps = bandwidth(cloud, opts.epsilon)?;
    let spec = LocalKernelSpec::radial(RadialShape::diffusion(), eps)?;
    let g = diffusion_maps_generator(cloud, &spec, 1.0, opts.sparsity)?;
    decompose(&g, k_eigs, &opts.eigen)
}

#[derive(Debug, Clone)]
pub struct JacobianField {
    pub matrices: Arc<Vec<DMatrix<f64>>>,
    pub neighbors: usize,
    pub epsilon: f64,
}

impl JacobianField {
    pub fn kernel_family(&self) -> KernelFamily {
        KernelFamily::Jacobian(self.matrices.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct JacobianOptions {
    /// Neighbour count; 2n + 8 when `None`.
    pub neighbors: Option<usize>,
    /// Weight bandwidth; the heuristic of the `from` cloud when `None`.
    pub epsilon: Option<f64>,
    /// Minimum rank of every neighbourhood and every fitted matrix.
    pub min_rank: usize,
}

/// Per-point least-squares Jacobians of the correspondence `from → to`:
/// DH_i minimizes Σ_j ‖w_j(y_j − y_i) − DH_i w_j(x_j − x_i)‖² over the k nearest
/// neighbours x_j of x_i in `from`, with w_j = exp(−‖x_j − x_i‖²/ε).
pub fn estimate_jacobians(from: &PointCloud, to: &PointCloud, opts: &JacobianOptions) -> Result<JacobianField> {
    if from.len() != to.len() {
        return Err(Error::invalid("clouds must correspond point by point"));
    }
    if let (Some(a), Some(b)) = (from.labels(), to.labels()) {
        if a != b {
            return Err(Error::invalid("correspondence labels differ between the clouds"));
        }
    }
    let (n, m) = (from.dim(), to.dim());
    let k = opts.neighbors.unwrap_or(2 * n + 8);
    if k < n {
        return Err(Error::invalid(format!("need at least {n} neighbours, got {k}")));
    }
    let eps = bandwidth(from, opts.epsilon)?;
    let index = NeighborIndex::new(from)?;
    let matrices = (0..from.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = index.neighbors_of(i, k)?;
            let mut v = DMatrix::zeros(k, n);
            let mut vt = DMatrix::zeros(k, m);
            let (xi, yi) = (from.point(i), to.point(i));
            for (r, &(d2, j)) in nbrs.iter().enumerate() {
                let w = (-d2 / eps).exp();
                let (xj, yj) = (from.point(j), to.point(j));
                for c in 0..n {
                    v[(r, c)] = w * (xj[c] - xi[c]);
                }
                for c in 0..m {
                    vt[(r, c)] = w * (yj[c] - yi[c]);
                }
            }
            let svd = v.svd(true, true);
            let smax = svd.singular_values.max();
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-8 * smax).count();
            if smax == 0.0 || rank < opts.min_rank.max(1) {
                return Err(Error::RankDeficient(format!("neighbourhood of point {i} has rank {rank}")));
            }
            let x = svd.solve(&vt, 1e-8 * smax).map_err(|e| Error::RankDeficient(format!("point {i}: {e}")))?;
            let dh = x.transpose();
            let sv = dh.singular_values();
            let dh_rank = sv.iter().filter(|&&s| s > 1e-8 * sv.max()).count();
            if sv.max() == 0.0 || dh_rank < opts.min_rank.max(1) {
                return Err(Error::RankDeficient(format!("Jacobian at point {i} has rank {dh_rank}")));
            }
            Ok(dh)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JacobianField { matrices: Arc::new(matrices), neighbors: k, epsilon: eps })
}

/// exp(−‖DH_i(x_j − x_i)‖²/(2ε)).
pub fn diffeo_kernel_matrix(
    cloud: &PointCloud,
    jacobians: &JacobianField,
    epsilon: f64,
    sparsity: Sparsity,
) -> Result<SparseKernelMatrix> {
    assemble(cloud, &LocalKernelSpec::new(jacobians.kernel_family(), epsilon)?, sparsity)
}

#[derive(Debug, Clone, Default)]
pub struct DiffeoOptions {
    pub pipeline: PipelineOptions,
    pub jacobian: JacobianOptions,
    /// Also fit the map between plain diffusion-maps embeddings of both clouds.
    pub baseline: bool,
}

#[derive(Debug, Clone)]
pub struct DiffeoReconstruction {
    /// Diffusion maps on the reference cloud.
    pub reference: SpectralEmbedding,
    /// Local-kernel Laplacian on the observed cloud.
    pub observed: SpectralEmbedding,
    /// Maps observed eigenfunctions 1..=n to reference eigenfunctions 1..=n.
    pub map: LinearMap,
    /// |λ_i − λ̃_i|/|λ̃_i| for i = 1..=n.
    pub eigenvalue_differences: Vec<f64>,
    pub baseline: Option<(SpectralEmbedding, LinearMap)>,
    pub reference_epsilon: f64,
    pub jacobian_epsilon: f64,
}

/// Nontrivial eigenvectors 1..=n.
fn nontrivial(e: &SpectralEmbedding, n: usize) -> Result<DMatrix<f64>> {
    e.embed(&(1..=n).collect::<Vec<_>>())
}

/// Re-metrizes `observed` with Jacobians of the correspondence observed → reference
/// so that its Laplacian matches the reference geometry, then relates the two
/// sets of `n_eigs` nontrivial eigenfunctions by a linear map.
///
/// The pipeline bandwidth (or heuristic) ε applies to the reference cloud. The
/// re-metrized kernel runs at 2ε so its variance matches the reference
/// diffusion-maps kernel exp(−‖u‖²/(4ε)).
pub fn reconstruct_diffeomorphism(
    reference: &PointCloud,
    observed: &PointCloud,
    n_eigs: usize,
    opts: &DiffeoOptions,
) -> Result<DiffeoReconstruction> {
    if n_eigs < 2 {
        return Err(Error::invalid("at least two eigenfunctions are required"));
    }
    let p = &opts.pipeline;
    let eps_ref = bandwidth(reference, p.epsilon)?;
    let ref_opts = PipelineOptions { epsilon: Some(eps_ref), ..p.clone() };
    let reference_emb = diffusion_embedding(reference, n_eigs + 1, &ref_opts)?;

    let jac = estimate_jacobians(observed, reference, &opts.jacobian)?;
    let k = diffeo_kernel_matrix(observed, &jac, 2.0 * eps_ref, p.sparsity)?;
    let observed_emb = decompose(&intrinsic_laplacian_from_kernel(&k)?, n_eigs + 1, &p.eigen)?;

    let target = nontrivial(&reference_emb, n_eigs)?;
    let map = fit_linear_map(&nontrivial(&observed_emb, n_eigs)?, &target)?;
    let eigenvalue_differences = (1..=n_eigs)
        .map(|i| {
            let (a, b) = (observed_emb.eigenvalues[i], reference_emb.eigenvalues[i]);
            (a - b).abs() / b.abs()
        })
        .collect();
    let baseline = if opts.baseline {
        let dm = diffusion_embedding(observed, n_eigs + 1, &PipelineOptions { epsilon: None, ..p.clone() })?;
        let h = fit_linear_map(&nontrivial(&dm, n_eigs)?, &target)?;
        Some((dm, h))
    } else {
        None
    };
    Ok(DiffeoReconstruction {
        reference: reference_emb,
        observed: observed_emb,
        map,
        eigenvalue_differences,
        baseline,
        reference_epsilon: eps_ref,
        jacobian_epsilon: jac.epsilon,
    })
}
