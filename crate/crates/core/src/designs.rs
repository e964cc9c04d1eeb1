//! Drift/covariance fields designed on specific manifolds.
//!
//! Both tori are completed in the normal directions with unit covariance so that
//! A(x) is positive definite on the whole ambient space. Without that term a
//! kernel on the curved torus cannot tell points on opposite sides of the tube
//! apart.

use nalgebra::{DMatrix, DVector};

use crate::kernel::DriftDiffusionField;

/// Columns ∂θ, ∂φ of the Jacobian of (θ,φ) ↦ (sinθ, cosθ, sinφ, cosφ).
pub fn flat_torus_tangents(theta: f64, phi: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(4, 2, &[
        theta.cos(), -theta.sin(), 0.0, 0.0,
        0.0, 0.0, phi.cos(), -phi.sin(),
    ])
}

/// Angles of a point of the flat torus in R⁴.
pub fn flat_torus_angles(x: &[f64]) -> (f64, f64) {
    (x[0].atan2(x[1]), x[2].atan2(x[3]))
}

/// Drift μ(θ,φ) = (2 + sinθ, 0) and diffusion C(θ,φ) = [[3 + sinφ, 1], [1, 1]] on
/// the flat torus in R⁴.
///
/// The ambient covariance is `Dι (2C) Dιᵀ` plus the normal completion, so that
/// the row-normalized generator converges to μ·∇f + C_ij ∂i∂j f.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatTorusDesign;

impl FlatTorusDesign {
    pub fn mu(theta: f64) -> [f64; 2] {
        [2.0 + theta.sin(), 0.0]
    }

    pub fn diffusion(phi: f64) -> [[f64; 2]; 2] {
        [[3.0 + phi.sin(), 1.0], [1.0, 1.0]]
    }
}

impl DriftDiffusionField for FlatTorusDesign {
    fn dim(&self) -> usize {
        4
    }

    fn covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let (theta, phi) = flat_torus_angles(x);
        let t = flat_torus_tangents(theta, phi);
        let c = Self::diffusion(phi);
        let c2 = DMatrix::from_row_slice(2, 2, &[2.0 * c[0][0], 2.0 * c[0][1], 2.0 * c[1][0], 2.0 * c[1][1]]);
        let proj = &t * t.transpose();
        &t * c2 * t.transpose() + DMatrix::identity(4, 4) - proj
    }

    fn drift(&self, x: &[f64]) -> DVector<f64> {
        let (theta, phi) = flat_torus_angles(x);
        let mu = Self::mu(theta);
        flat_torus_tangents(theta, phi) * DVector::from_column_slice(&mu)
    }
}

/// The torus of revolution ((R+sinθ)cosφ, (R+sinθ)sinφ, cosθ) with a covariance
/// whose tangential part is Dι Dιᵀ, which makes the kernel's intrinsic metric the
/// flat metric dθ² + dφ².
#[derive(Debug, Clone, Copy)]
pub struct FlatteningTorusMetric {
    pub major_radius: f64,
}

impl FlatteningTorusMetric {
    pub fn angles(&self, x: &[f64]) -> (f64, f64) {
        let rho = x[0].hypot(x[1]) - self.major_radius;
        (rho.atan2(x[2]), x[1].atan2(x[0]))
    }

    pub fn tangents(&self, theta: f64, phi: f64) -> DMatrix<f64> {
        let r = self.major_radius + theta.sin();
        DMatrix::from_column_slice(3, 2, &[
            theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin(),
            -r * phi.sin(), r * phi.cos(), 0.0,
        ])
    }
}

impl DriftDiffusionField for FlatteningTorusMetric {
    fn dim(&self) -> usize {
        3
    }

    fn covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let (theta, phi) = self.angles(x);
        let t = self.tangents(theta, phi);
        let normal = DVector::from_column_slice(&[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
        &t * t.transpose() + &normal * normal.transpose()
    }

    fn drift(&self, _: &[f64]) -> DVector<f64> {
        DVector::zeros(3)
    }
}
