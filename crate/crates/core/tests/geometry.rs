use std::sync::Arc;

use approx::assert_relative_eq;
use localkernel::data::{
    apply_torus_diffeomorphism, generate_ellipse, generate_embedded_torus_r3, sample_embedded_torus_r3, PointCloud,
};
use localkernel::geometry::{
    conformal_embedding, diffeo_kernel_matrix, diffusion_embedding, estimate_density, estimate_jacobians,
    kernel_density_sums, reconstruct_diffeomorphism, DiffeoOptions, JacobianOptions, PipelineOptions,
};
use localkernel::graph::{assemble, epsilon_heuristic, Sparsity};
use localkernel::kernel::{KernelFamily, LocalKernelSpec, RadialShape, Site};
use localkernel::spectral::fit_linear_map;
use localkernel::validation::{ellipse_density, subspace_angles};
use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn cv(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt() / mean
}

#[test]
fn density_of_a_periodic_grid_is_flat() {
    let cloud = generate_ellipse(500, 1.0).unwrap();
    let eps = epsilon_heuristic(&cloud).unwrap() * 4.0;
    let q = estimate_density(&cloud, eps, Sparsity::default()).unwrap().q;
    assert!(cv(&q) <= 0.01);
    assert_relative_eq!(q.iter().sum::<f64>() / q.len() as f64, 1.0, epsilon = 1e-12);
}

#[test]
fn ellipse_density_follows_inverse_speed() {
    let a = 1.0 / 6.0;
    let cloud = generate_ellipse(4000, a).unwrap();
    let theta = cloud.intrinsic_column(0).unwrap();
    let q = estimate_density(&cloud, epsilon_heuristic(&cloud).unwrap(), Sparsity::default()).unwrap().q;
    let analytic = DMatrix::from_iterator(theta.len(), 1, theta.iter().map(|&t| ellipse_density(a, t)));
    let (_, r2) = localkernel::spectral::align_and_compare(&q, &analytic).unwrap();
    assert!(r2 >= 0.95, "{r2}");
    let peak = q.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
    let t = theta[peak];
    assert!(t.sin().abs() < 0.1, "density peak at θ = {t}");
}

#[test]
fn duplicated_points_double_raw_density_only() {
    let cloud = sample_embedded_torus_r3(200, 2.0, 1).unwrap();
    let mut coords = cloud.coords().to_vec();
    coords.extend_from_slice(cloud.coords());
    let doubled = PointCloud::new(coords, 3).unwrap();
    let eps = 0.05;
    let raw = kernel_density_sums(&cloud, eps, Sparsity::Dense).unwrap();
    let raw2 = kernel_density_sums(&doubled, eps, Sparsity::Dense).unwrap();
    for i in 0..200 {
        assert_relative_eq!(raw2[i], 2.0 * raw[i], max_relative = 1e-12);
    }
    let q = estimate_density(&cloud, eps, Sparsity::Dense).unwrap().q;
    let q2 = estimate_density(&doubled, eps, Sparsity::Dense).unwrap().q;
    for i in 0..200 {
        assert_relative_eq!(q2[i], q[i], max_relative = 1e-12);
    }
}

#[test]
fn density_shares_the_diffusion_maps_sums() {
    let cloud = sample_embedded_torus_r3(300, 2.0, 2).unwrap();
    let eps = 0.03;
    let sums = assemble(&cloud, &LocalKernelSpec::radial(RadialShape::diffusion(), eps).unwrap(), Sparsity::default())
        .unwrap()
        .weights
        .row_sums();
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let q = estimate_density(&cloud, eps, Sparsity::default()).unwrap().q;
    for (a, b) in q.iter().zip(&sums) {
        assert!((a - b / mean).abs() <= 1e-12);
    }
}

#[test]
fn conformal_bandwidth_tracks_density() {
    let a = 1.0 / 6.0;
    let (q0, q1) = (ellipse_density(a, 0.0), ellipse_density(a, std::f64::consts::FRAC_PI_2));
    let spec = LocalKernelSpec::new(KernelFamily::Conformal { density: Arc::new(vec![q0, q1]), dim: 1 }, 0.01).unwrap();
    let (x, y) = ([0.0, 0.0], [0.05, 0.0]);
    let k0 = spec.eval(Site::at(0, &x), Site::at(1, &y)).unwrap();
    let k1 = spec.eval(Site::at(1, &x), Site::at(0, &y)).unwrap();
    assert_relative_eq!(k0.ln() / k1.ln(), (q0 / q1).powi(2), max_relative = 1e-12);
}

fn principal(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    subspace_angles(a, b).unwrap().into_iter().fold(0.0, f64::max)
}

#[test]
fn conformal_embedding_of_circle_matches_diffusion_maps() {
    let cloud = generate_ellipse(1000, 1.0).unwrap();
    let opts = PipelineOptions::default();
    let c = conformal_embedding(&cloud, 1, 3, &opts).unwrap();
    let d = diffusion_embedding(&cloud, 3, &opts).unwrap();
    assert!(principal(&c.embed(&[1, 2]).unwrap(), &d.embed(&[1, 2]).unwrap()) <= 0.05);
}

#[test]
fn conformal_embedding_is_invariant_under_a_conformal_map() {
    // Every reparametrization of a curve is conformal.
    let circle = generate_ellipse(1000, 1.0).unwrap();
    let ellipse = generate_ellipse(1000, 1.0 / 3.0).unwrap();
    let opts = PipelineOptions::default();
    let a = conformal_embedding(&circle, 1, 3, &opts).unwrap().embed(&[1, 2]).unwrap();
    let b = conformal_embedding(&ellipse, 1, 3, &opts).unwrap().embed(&[1, 2]).unwrap();
    assert!(principal(&a, &b) <= 0.1);
    assert!(fit_linear_map(&b, &a).unwrap().relative_residual <= 0.05);
    let plain = diffusion_embedding(&ellipse, 3, &opts).unwrap().embed(&[1, 2]).unwrap();
    assert!(principal(&a, &plain) > principal(&a, &b));
}

fn tangent_basis(theta: f64, phi: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 2, &[theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin(), -phi.sin(), phi.cos(), 0.0])
}

fn analytic_jacobian(p: &[f64]) -> DMatrix<f64> {
    let (x, y, z) = (p[0], p[1], p[2]);
    let r2 = x * x + y * y;
    let a = y.atan2(x);
    let g = 1.5 * (3.0 * a).cos() * z;
    DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -g * y / r2, g * x / r2, 2.0 + 0.5 * (3.0 * a).sin()])
}

#[test]
fn torus_jacobians_match_the_analytic_derivative() {
    let reference = generate_embedded_torus_r3(100, 2.0).unwrap();
    let observed = apply_torus_diffeomorphism(&reference).unwrap();
    let jac = estimate_jacobians(&reference, &observed, &JacobianOptions::default()).unwrap();
    assert_eq!(jac.neighbors, 14);
    let mut worst: f64 = 0.0;
    for i in (0..reference.len()).step_by(37) {
        let t = reference.intrinsic(i).unwrap();
        let basis = tangent_basis(t[0], t[1]);
        let exact = analytic_jacobian(reference.point(i)) * &basis;
        let est = &jac.matrices[i] * &basis;
        let err = (est - &exact).singular_values().max() / exact.singular_values().max();
        worst = worst.max(err);
    }
    assert!(worst <= 0.1, "{worst}");
}

fn neighbour_displacements(cloud: &PointCloud, i: usize, k: usize) -> Vec<Vector3<f64>> {
    let index = localkernel::knn::NeighborIndex::new(cloud).unwrap();
    index
        .neighbors_of(i, k)
        .unwrap()
        .into_iter()
        .map(|(_, j)| Vector3::from_iterator((0..3).map(|c| cloud.point(j)[c] - cloud.point(i)[c])))
        .collect()
}

fn affine(cloud: &PointCloud, m: &Matrix3<f64>, c: &Vector3<f64>) -> PointCloud {
    cloud
        .map_points(3, |p, out| {
            let y = m * Vector3::new(p[0], p[1], p[2]) + c;
            out.copy_from_slice(y.as_slice());
        })
        .unwrap()
}

#[test]
fn jacobians_are_exact_for_affine_maps() {
    let cloud = sample_embedded_torus_r3(400, 2.0, 3).unwrap();
    let m = Matrix3::new(1.0, 0.2, -0.3, 0.5, 2.0, 0.1, 0.0, -0.4, 0.7);
    let c = Vector3::new(3.0, -1.0, 2.0);
    for (map, shift) in [(Matrix3::identity(), Vector3::zeros()), (Matrix3::identity() * 2.0, Vector3::zeros()), (m, c)] {
        let target = affine(&cloud, &map, &shift);
        let jac = estimate_jacobians(&cloud, &target, &JacobianOptions::default()).unwrap();
        for i in (0..cloud.len()).step_by(23) {
            let dh = Matrix3::from_iterator(jac.matrices[i].iter().copied());
            for v in neighbour_displacements(&cloud, i, jac.neighbors) {
                assert!((dh * v - map * v).norm() <= 1e-8 * v.norm(), "point {i}");
            }
        }
    }
}

#[test]
fn jacobian_fits_report_rank_deficiency() {
    // A straight line: only one tangent direction.
    let cloud = PointCloud::new((0..40).flat_map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect(), 3).unwrap();
    let opts = JacobianOptions { min_rank: 2, ..Default::default() };
    assert!(matches!(estimate_jacobians(&cloud, &cloud, &opts), Err(localkernel::Error::RankDeficient(_))));
}

#[test]
fn identity_jacobians_give_the_gaussian_kernel() {
    let cloud = sample_embedded_torus_r3(50, 2.0, 4).unwrap();
    let ids = localkernel::geometry::JacobianField {
        matrices: Arc::new(vec![DMatrix::identity(3, 3); 50]),
        neighbors: 14,
        epsilon: 0.1,
    };
    let eps = 0.2;
    let k = diffeo_kernel_matrix(&cloud, &ids, eps, Sparsity::Dense).unwrap();
    for (i, j) in [(0, 0), (3, 17), (40, 2)] {
        let d2: f64 = cloud.point(i).iter().zip(cloud.point(j)).map(|(a, b)| (a - b).powi(2)).sum();
        assert_relative_eq!(k.weights.get(i, j), (-d2 / (2.0 * eps)).exp(), max_relative = 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaling_jacobians_rescales_epsilon(
        entries in prop::collection::vec(-2.0f64..2.0, 9),
        x in prop::array::uniform3(-1.0f64..1.0),
        y in prop::array::uniform3(-1.0f64..1.0),
        s in 0.2f64..5.0,
        eps in 0.05f64..1.0,
    ) {
        let dh = DMatrix::from_row_slice(3, 3, &entries);
        let spec = |m: DMatrix<f64>, e: f64| {
            LocalKernelSpec::new(KernelFamily::Jacobian(Arc::new(vec![m.clone(), m])), e).unwrap()
        };
        let a = spec(&dh * s, eps).eval(Site::at(0, &x), Site::at(1, &y)).unwrap();
        let b = spec(dh.clone(), eps / (s * s)).eval(Site::at(0, &x), Site::at(1, &y)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-300);
    }
}

#[test]
fn self_correspondence_gives_an_orthogonal_map() {
    let cloud = generate_embedded_torus_r3(70, 2.0).unwrap();
    let rec = reconstruct_diffeomorphism(&cloud, &cloud, 4, &DiffeoOptions::default()).unwrap();
    let h = &rec.map.matrix;
    assert!((h.transpose() * h - DMatrix::identity(4, 4)).amax() <= 0.05, "{h}");
    assert!(rec.map.relative_residual <= 0.02, "{}", rec.map.relative_residual);
}

fn rigid(cloud: &PointCloud, seed: f64) -> PointCloud {
    let r = Rotation3::from_euler_angles(0.3 + seed, -1.1, 2.0 * seed);
    affine(cloud, r.matrix(), &Vector3::new(5.0, -2.0 * seed, 0.5))
}

#[test]
fn diffeo_residual_is_rigid_motion_invariant() {
    let reference = sample_embedded_torus_r3(500, 2.0, 21).unwrap();
    let observed = apply_torus_diffeomorphism(&reference).unwrap();
    let opts = DiffeoOptions::default();
    let base = reconstruct_diffeomorphism(&reference, &observed, 5, &opts).unwrap().map.relative_residual;
    let moved_ref = reconstruct_diffeomorphism(&rigid(&reference, 0.4), &observed, 5, &opts).unwrap().map.relative_residual;
    let moved_obs = reconstruct_diffeomorphism(&reference, &rigid(&observed, 1.3), 5, &opts).unwrap().map.relative_residual;
    assert!((base - moved_ref).abs() <= 1e-6, "{base} vs {moved_ref}");
    assert!((base - moved_obs).abs() <= 1e-6, "{base} vs {moved_obs}");
}

#[test]
fn mismatched_clouds_are_rejected() {
    let a = sample_embedded_torus_r3(100, 2.0, 1).unwrap();
    let b = sample_embedded_torus_r3(90, 2.0, 1).unwrap();
    assert!(estimate_jacobians(&a, &b, &JacobianOptions::default()).is_err());
    assert!(reconstruct_diffeomorphism(&a, &a, 1, &DiffeoOptions::default()).is_err());
}
