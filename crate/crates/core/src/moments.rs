//! Zeroth, first and second tangent-space moments of a local kernel.
//!
//! With `y = x + √ε Iᵀz` for a tangent basis `I` (d×n, orthonormal rows):
//!
//! * `m = ∫ K dz`
//! * `μ = ε^{-1/2} ∫ z K dz`
//! * `C = ∫ z zᵀ K dz`
//!
//! The Monte Carlo estimator samples a Gaussian proposal sized from the family's
//! decay bound. `m`, `μ` and `C` use antithetic pairs (z, −z), which removes the
//! 1/√ε blow-up of the plain first-moment estimator. The third moments are the
//! ε → 0 skewness of the kernel; the finite-ε integral carries an O(√ε) drift term,
//! so they are estimated with plain sampling at a separate, much smaller bandwidth.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{LocalKernelSpec, Site};

#[derive(Debug, Clone)]
pub struct KernelMoments {
    pub m: f64,
    pub mu: DVector<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ThirdMoment {
    pub axes: [usize; 3],
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub moments: KernelMoments,
    pub m_std_error: f64,
    pub mu_std_error: DVector<f64>,
    pub c_std_error: DMatrix<f64>,
    /// One entry per index triple a ≤ b ≤ c.
    pub third: Vec<ThirdMoment>,
    pub epsilon: f64,
    pub skew_epsilon: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub samples: usize,
    pub seed: u64,
    /// Bandwidth for the third-moment estimates.
    pub skew_epsilon: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0, skew_epsilon: 1e-10 }
    }
}

fn check_basis(basis: &DMatrix<f64>, n: usize) -> Result<()> {
    if basis.ncols() != n || basis.nrows() == 0 || basis.nrows() > n {
        return Err(Error::invalid(format!(
            "tangent basis must be d×{n} with 1 ≤ d ≤ {n}, got {}×{}",
            basis.nrows(),
            basis.ncols()
        )));
    }
    let gram = basis * basis.transpose();
    let d = basis.nrows();
    if (gram - DMatrix::identity(d, d)).amax() > 1e-10 {
        return Err(Error::invalid("tangent basis rows are not orthonormal"));
    }
    Ok(())
}

/// Closed-form moments of the prototypical kernel:
/// `m = (2π)^{d/2} det(IAIᵀ)^{1/2}`, `μ = m I b`, `C = m I A Iᵀ`.
pub fn prototypical_moments(a: &DMatrix<f64>, b: &DVector<f64>, basis: &DMatrix<f64>) -> Result<KernelMoments> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::invalid("covariance and drift dimensions differ"));
    }
    check_basis(basis, n)?;
    let d = basis.nrows();
    let tangential = basis * a * basis.transpose();
    let det = tangential.determinant();
    if !(det > 0.0) {
        return Err(Error::NotPositiveDefinite { index: None });
    }
    let m = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det.sqrt();
    Ok(KernelMoments { m, mu: basis * b * m, c: tangential * m })
}

/// Importance-sampled estimate of the moments of `spec` at `x`; ε is `spec.epsilon`.
pub fn monte_carlo_moments(
    spec: &LocalKernelSpec,
    x: &[f64],
    basis: &DMatrix<f64>,
    options: &MonteCarloOptions,
) -> Result<MomentEstimate> {
    let n = x.len();
    check_basis(basis, n)?;
    if options.samples < 1000 {
        return Err(Error::invalid("at least 1000 samples are required"));
    }
    let d = basis.nrows();
    let eps = spec.epsilon;
    let skew_spec = spec.with_epsilon(options.skew_epsilon)?;
    let bound = spec.local_bound(Site::free(x))?;
    if !(bound.sigma > 0.0) {
        return Err(Error::invalid("kernel has no Gaussian decay bound at this point"));
    }
    // Proposal N(0, s² I_d) wider than the bound so the weights stay square-integrable.
    let s2 = 1.5 / (2.0 * bound.sigma);
    let s = s2.sqrt();
    let log_norm = -(d as f64) / 2.0 * (2.0 * std::f64::consts::PI * s2).ln();

    let row = spec.row(Site::free(x))?;
    let skew_row = skew_spec.row(Site::free(x))?;
    let triples: Vec<[usize; 3]> = (0..d)
        .flat_map(|a| (a..d).flat_map(move |b| (b..d).map(move |c| [a, b, c])))
        .collect();

    let pairs = options.samples / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut acc = Accumulator::new(1 + d + d * d + triples.len());
    let mut z = vec![0.0; d];
    let mut yp = vec![0.0; n];
    let mut ym = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut sample = vec![0.0; acc.len()];
    let (se, sk) = (eps.sqrt(), options.skew_epsilon.sqrt());
    for _ in 0..pairs {
        let mut r2 = 0.0;
        for zi in z.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *zi = s * g;
            r2 += g * g;
        }
        let inv_p = (-(log_norm - r2 / 2.0)).exp();
        for k in 0..n {
            let t: f64 = (0..d).map(|a| basis[(a, k)] * z[a]).sum();
            yp[k] = x[k] + se * t;
            ym[k] = x[k] - se * t;
            ys[k] = x[k] + sk * t;
        }
        let kp = row.eval(Site::free(&yp))?;
        let km = row.eval(Site::free(&ym))?;
        let ks = skew_row.eval(Site::free(&ys))?;
        let even = 0.5 * (kp + km) * inv_p;
        let odd = 0.5 * (kp - km) * inv_p / se;
        sample[0] = even;
        for a in 0..d {
            sample[1 + a] = z[a] * odd;
            for b in 0..d {
                sample[1 + d + a * d + b] = z[a] * z[b] * even;
            }
        }
        for (t, [a, b, c]) in triples.iter().enumerate() {
            sample[1 + d + d * d + t] = z[*a] * z[*b] * z[*c] * ks * inv_p;
        }
        acc.push(&sample);
    }
    let (mean, sem) = acc.finish();
    let third = triples
        .iter()
        .enumerate()
        .map(|(t, &axes)| ThirdMoment { axes, value: mean[1 + d + d * d + t], std_error: sem[1 + d + d * d + t] })
        .collect();
    Ok(MomentEstimate {
        moments: KernelMoments {
            m: mean[0],
            mu: DVector::from_column_slice(&mean[1..1 + d]),
            c: DMatrix::from_row_slice(d, d, &mean[1 + d..1 + d + d * d]),
        },
        m_std_error: sem[0],
        mu_std_error: DVector::from_column_slice(&sem[1..1 + d]),
        c_std_error: DMatrix::from_row_slice(d, d, &sem[1 + d..1 + d + d * d]),
        third,
        epsilon: eps,
        skew_epsilon: options.skew_epsilon,
        samples: 2 * pairs,
    })
}

/// Running means and variances (Welford).
struct Accumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn len(&self) -> usize {
        self.mean.len()
    }

    fn push(&mut self, v: &[f64]) {
        self.count += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let delta = x - *m;
            *m += delta / self.count;
            *s += delta * (x - *m);
        }
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count;
        let sem = self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
        (self.mean, sem)
    }
}
