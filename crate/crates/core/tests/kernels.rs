use std::sync::Arc;

use approx::assert_relative_eq;
use localkernel::kernel::{
    symmetrize, ConstantField, DriftDiffusionField, IcaCovariances, KernelFamily, LocalKernelSpec, RadialShape, Site,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// A(x) and b(x) that vary with position.
struct Wavy;

impl DriftDiffusionField for Wavy {
    fn dim(&self) -> usize {
        3
    }
    fn covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let s = x[0].sin();
        DMatrix::from_row_slice(3, 3, &[2.0 + s, 0.3 * x[1].cos(), 0.0, 0.3 * x[1].cos(), 1.0, 0.2 * s, 0.0, 0.2 * s, 0.5 + x[2].sin().powi(2)])
    }
    fn drift(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![x[1].sin(), 1.0 - x[0].cos(), 0.5 * x[2]])
    }
}

fn families(x_index_point: usize) -> Vec<(&'static str, LocalKernelSpec)> {
    let eps = 0.01;
    let spd = |t: f64| DMatrix::from_row_slice(3, 3, &[1.5 + t, 0.2, 0.1, 0.2, 1.0, -0.3, 0.1, -0.3, 0.8 + t]);
    let ica = IcaCovariances::new(&(0..x_index_point + 2).map(|i| spd(i as f64 * 0.1)).collect::<Vec<_>>()).unwrap();
    let jac: Vec<DMatrix<f64>> = (0..x_index_point + 2)
        .map(|i| DMatrix::from_row_slice(3, 3, &[1.0, 0.1 * i as f64, 0.0, 0.0, 2.0, 0.3, 0.4, 0.0, 0.7]))
        .collect();
    vec![
        ("gaussian", LocalKernelSpec::radial(RadialShape::diffusion(), eps).unwrap()),
        ("parabola", LocalKernelSpec::radial(RadialShape::TruncatedParabola, eps).unwrap()),
        ("prototypical", LocalKernelSpec::prototypical(Arc::new(Wavy), eps).unwrap()),
        ("ica", LocalKernelSpec::new(KernelFamily::Ica(Arc::new(ica)), eps).unwrap()),
        ("jacobian", LocalKernelSpec::new(KernelFamily::Jacobian(Arc::new(jac)), eps).unwrap()),
        (
            "conformal",
            LocalKernelSpec::new(
                KernelFamily::Conformal { density: Arc::new((0..x_index_point + 2).map(|i| 0.5 + i as f64).collect()), dim: 2 },
                eps,
            )
            .unwrap(),
        ),
    ]
}

proptest! {
    #[test]
    fn every_family_obeys_its_local_bound(
        x in prop::array::uniform3(-3.0f64..3.0),
        dir in prop::array::uniform3(-1.0f64..1.0),
        radius in 0.0f64..10.0,
    ) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let z: Vec<f64> = dir.iter().map(|v| v / norm * radius).collect();
        for (name, spec) in families(0) {
            let eps = spec.epsilon;
            let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + eps.sqrt() * b).collect();
            // The index-carrying families need a second point with its own index.
            let k = spec.eval(Site::at(0, &x), Site::at(1, &y)).unwrap();
            let bound = spec.local_bound(Site::at(0, &x)).unwrap();
            let shift: f64 = z.iter().zip(bound.drift.iter()).map(|(a, b)| (a - eps.sqrt() * b).powi(2)).sum();
            let rhs = bound.c * (-bound.sigma * shift).exp();
            prop_assert!(k <= rhs * (1.0 + 1e-12) + 1e-300, "{name}: {k} > {rhs}");
        }
    }

    #[test]
    fn symmetrized_kernel_is_exactly_symmetric(
        x in prop::array::uniform3(-2.0f64..2.0),
        y in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let s = symmetrize(&LocalKernelSpec::prototypical(Arc::new(Wavy), 0.2).unwrap());
        let a = s.eval(Site::free(&x), Site::free(&y)).unwrap();
        let b = s.eval(Site::free(&y), Site::free(&x)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn symmetrized_radial_is_twice_the_kernel() {
    let spec = LocalKernelSpec::radial(RadialShape::diffusion(), 0.3).unwrap();
    let (x, y) = ([0.1, 0.4], [-0.2, 0.9]);
    let j = spec.eval(Site::free(&x), Site::free(&y)).unwrap();
    assert_eq!(symmetrize(&spec).eval(Site::free(&x), Site::free(&y)).unwrap(), 2.0 * j);
}

#[test]
fn symmetrized_diagonal_without_drift_is_two() {
    let spec = LocalKernelSpec::prototypical(Arc::new(ConstantField::isotropic(2)), 0.05).unwrap();
    let x = [0.7, -0.1];
    assert_eq!(symmetrize(&spec).eval(Site::free(&x), Site::free(&x)).unwrap(), 2.0);
}

#[test]
fn prototypical_drift_tilts_towards_b() {
    let b = DVector::from_vec(vec![1.0, 0.0]);
    let spec = LocalKernelSpec::prototypical(Arc::new(ConstantField::new(DMatrix::identity(2, 2), b).unwrap()), 0.1).unwrap();
    let x = [0.0, 0.0];
    let ahead = spec.eval(Site::free(&x), Site::free(&[0.1, 0.0])).unwrap();
    let behind = spec.eval(Site::free(&x), Site::free(&[-0.1, 0.0])).unwrap();
    assert!(ahead > behind);
    // exp(−0.01/0.2 ± 0.1)
    assert_relative_eq!(ahead, (-0.05f64 + 0.1).exp(), max_relative = 1e-14);
    assert_relative_eq!(behind, (-0.05f64 - 0.1).exp(), max_relative = 1e-14);
}

#[test]
fn conformal_kernel_without_density_variation_is_gaussian() {
    let eps = 0.04;
    let spec = LocalKernelSpec::new(KernelFamily::Conformal { density: Arc::new(vec![1.0, 1.0]), dim: 1 }, eps).unwrap();
    let (x, y) = ([0.0, 0.0], [0.3, 0.1]);
    let d2 = 0.1;
    assert_relative_eq!(spec.eval(Site::at(0, &x), Site::at(1, &y)).unwrap(), (-d2 / (4.0 * eps)).exp(), max_relative = 1e-14);
    assert_eq!(spec.eval(Site::at(0, &x), Site::at(0, &x)).unwrap(), 1.0);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(LocalKernelSpec::radial(RadialShape::diffusion(), 0.0).is_err());
    assert!(LocalKernelSpec::radial(RadialShape::diffusion(), f64::NAN).is_err());
    let indefinite = ConstantField::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), DVector::zeros(2)).unwrap();
    let spec = LocalKernelSpec::prototypical(Arc::new(indefinite), 0.1).unwrap();
    assert!(spec.eval(Site::free(&[0.0, 0.0]), Site::free(&[0.1, 0.0])).is_err());
}
