use std::f64::consts::PI;
use std::sync::Arc;

use localkernel::data::flat_torus_r4_point;
use localkernel::designs::{flat_torus_tangents, FlatTorusDesign};
use localkernel::kernel::{ConstantField, DriftDiffusionField, LocalKernelSpec};
use localkernel::moments::{monte_carlo_moments, prototypical_moments, MonteCarloOptions};
use nalgebra::{DMatrix, DVector};

fn constant(a: DMatrix<f64>, b: DVector<f64>, eps: f64) -> LocalKernelSpec {
    LocalKernelSpec::prototypical(Arc::new(ConstantField::new(a, b).unwrap()), eps).unwrap()
}

fn opts(samples: usize, seed: u64) -> MonteCarloOptions {
    MonteCarloOptions { samples, seed, ..Default::default() }
}

#[test]
fn isotropic_mass_within_two_percent() {
    let spec = constant(DMatrix::identity(2, 2), DVector::zeros(2), 1e-3);
    let est = monte_carlo_moments(&spec, &[0.0, 0.0], &DMatrix::identity(2, 2), &opts(1_000_000, 1)).unwrap();
    assert!((est.moments.m - 2.0 * PI).abs() / (2.0 * PI) < 0.02, "{}", est.moments.m);
    assert_eq!(est.epsilon, 1e-3);
    assert_eq!(est.samples, 1_000_000);
}

#[test]
fn symmetric_kernel_has_no_first_moment() {
    let spec = constant(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), DVector::zeros(2), 1e-3);
    let est = monte_carlo_moments(&spec, &[0.5, -0.5], &DMatrix::identity(2, 2), &opts(200_000, 2)).unwrap();
    for i in 0..2 {
        // Antithetic pairs cancel the odd part exactly for an even kernel.
        assert!(est.moments.mu[i].abs() <= 3.0 * est.mu_std_error[i] + 1e-12);
    }
}

fn rms_error(samples: usize, seeds: u64) -> f64 {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
    let spec = constant(a.clone(), DVector::zeros(2), 1e-3);
    let exact = prototypical_moments(&a, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
    let mut total = 0.0;
    for seed in 0..seeds {
        let est = monte_carlo_moments(&spec, &[0.0, 0.0], &DMatrix::identity(2, 2), &opts(samples, 100 + seed)).unwrap();
        let e = &est.moments;
        total += ((e.m - exact.m) / exact.m).powi(2) + ((&e.c - &exact.c).norm() / exact.c.norm()).powi(2);
    }
    (total / seeds as f64).sqrt()
}

#[test]
fn monte_carlo_error_decays_at_root_n() {
    let ns = [10_000usize, 100_000, 1_000_000];
    let errs: Vec<f64> = ns.iter().map(|&n| rms_error(n, 8)).collect();
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, errors {errs:?}");
}

#[test]
fn gaussian_families_are_skew_free() {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.0, 0.4, 1.0, 0.1, 0.0, 0.1, 0.5]);
    let spec = constant(a, DVector::from_vec(vec![1.0, -2.0, 0.5]), 1e-3);
    let est = monte_carlo_moments(&spec, &[0.0; 3], &DMatrix::identity(3, 3), &opts(400_000, 3)).unwrap();
    assert_eq!(est.third.len(), 10);
    for t in &est.third {
        assert!(t.value.abs() <= 3.0 * t.std_error, "{:?}", t);
    }
}

#[test]
fn tangential_moments_of_the_flat_torus_design() {
    let x = flat_torus_r4_point(0.0, 0.0);
    let spec = LocalKernelSpec::prototypical(Arc::new(FlatTorusDesign), 1e-3).unwrap();
    let basis = flat_torus_tangents(0.0, 0.0).transpose();
    let est = monte_carlo_moments(&spec, &x, &basis, &opts(1_000_000, 4)).unwrap();
    let exact = prototypical_moments(&FlatTorusDesign.covariance(&x), &FlatTorusDesign.drift(&x), &basis).unwrap();
    assert!((&est.moments.c - &exact.c).amax() <= 0.05 * exact.c.amax(), "{} vs {}", est.moments.c, exact.c);
    // Tangentially the design covariance is 2C, so C_moment = 2 m C(φ).
    let c = FlatTorusDesign::diffusion(0.0);
    let design = DMatrix::from_row_slice(2, 2, &[c[0][0], c[0][1], c[1][0], c[1][1]]) * (2.0 * exact.m);
    assert!((&exact.c - design).amax() < 1e-12);
    assert!((est.moments.mu[0] - exact.m * 2.0).abs() <= 0.05 * exact.m * 2.0);
}

#[test]
fn rejects_non_orthonormal_basis_and_tiny_runs() {
    let spec = constant(DMatrix::identity(2, 2), DVector::zeros(2), 1e-3);
    let skew = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    assert!(monte_carlo_moments(&spec, &[0.0, 0.0], &skew, &opts(10_000, 0)).is_err());
    assert!(monte_carlo_moments(&spec, &[0.0, 0.0], &DMatrix::identity(2, 2), &opts(10, 0)).is_err());
}

#[test]
fn estimates_are_reproducible_per_seed() {
    let spec = constant(DMatrix::identity(2, 2), DVector::from_vec(vec![0.3, 0.0]), 1e-3);
    let a = monte_carlo_moments(&spec, &[0.0, 0.0], &DMatrix::identity(2, 2), &opts(20_000, 9)).unwrap();
    let b = monte_carlo_moments(&spec, &[0.0, 0.0], &DMatrix::identity(2, 2), &opts(20_000, 9)).unwrap();
    assert_eq!(a.moments.m, b.moments.m);
    assert_eq!(a.moments.c, b.moments.c);
}
