use std::collections::HashSet;
use std::f64::consts::PI;

use localkernel::data::*;
use localkernel::error::Error;
use proptest::prelude::*;

fn key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| (v * 1e9).round() as i64 as u64).collect()
}

#[test]
fn grids_have_m_squared_distinct_points() {
    for m in [3, 10, 25] {
        let flat = generate_flat_torus_r4(m).unwrap();
        let curved = generate_embedded_torus_r3(m, 2.0).unwrap();
        for c in [&flat, &curved] {
            assert_eq!(c.len(), m * m);
            let distinct: HashSet<_> = (0..c.len()).map(|i| key(c.point(i))).collect();
            assert_eq!(distinct.len(), m * m);
        }
    }
}

#[test]
fn intrinsic_angles_recover_points() {
    let c = generate_embedded_torus_r3(12, 3.0).unwrap();
    for i in 0..c.len() {
        let t = c.intrinsic(i).unwrap();
        let p = torus_r3_point(t[0], t[1], 3.0);
        assert_eq!(c.point(i), &p[..]);
    }
    let m = 12;
    let t = c.intrinsic(m + 2).unwrap();
    assert!((t[0] - 2.0 * PI / m as f64).abs() < 1e-15);
    assert!((t[1] - 4.0 * PI / m as f64).abs() < 1e-15);
}

#[test]
fn diffeomorphism_is_a_bijection_on_the_grid() {
    let c = generate_embedded_torus_r3(30, 2.0).unwrap();
    let h = apply_torus_diffeomorphism(&c).unwrap();
    assert_eq!(h.len(), c.len());
    let distinct: HashSet<_> = (0..h.len()).map(|i| key(h.point(i))).collect();
    assert_eq!(distinct.len(), c.len());
    for i in 0..c.len() {
        let (p, q) = (c.point(i), h.point(i));
        assert_eq!(&p[..2], &q[..2]);
        let s = 2.0 + 0.5 * (3.0 * p[1].atan2(p[0])).sin();
        assert!((q[2] / s - p[2]).abs() < 1e-14);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let a = sample_flat_torus_r4(50, 7).unwrap();
    let b = sample_flat_torus_r4(50, 7).unwrap();
    let c = sample_flat_torus_r4(50, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(sample_embedded_torus_r3(20, 2.0, 1).unwrap(), sample_embedded_torus_r3(20, 2.0, 1).unwrap());
}

#[test]
fn csv_round_trip_is_exact() {
    let c = sample_embedded_torus_r3(10, 2.5, 3).unwrap();
    let mut buf = Vec::new();
    c.write_csv(&mut buf).unwrap();
    assert_eq!(PointCloud::read_csv(buf.as_slice()).unwrap(), c);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.csv");
    let labelled = c.clone().with_labels((0..10).map(|i| format!("p{i}")).collect()).unwrap();
    labelled.save_csv(&path).unwrap();
    assert_eq!(PointCloud::load_csv(&path).unwrap(), labelled);
}

#[test]
fn malformed_input_is_rejected() {
    assert!(matches!(PointCloud::read_csv("x1,x2\n1,2\n3,4,5\n".as_bytes()), Err(Error::Parse { row: 3, .. })));
    assert!(matches!(PointCloud::read_csv("x1,x2\n1,inf\n".as_bytes()), Err(Error::Parse { row: 2, .. })));
    assert!(PointCloud::read_csv("x2,x1\n1,2\n".as_bytes()).is_err());
    assert!(PointCloud::read_csv("x1\n".as_bytes()).is_err());
    assert!(PointCloud::new(vec![1.0, 2.0, 3.0], 2).is_err());
    assert!(PointCloud::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

#[test]
fn permutation_round_trip() {
    let c = generate_ellipse(6, 0.5).unwrap();
    let perm = [3, 1, 5, 0, 2, 4];
    let p = c.permuted(&perm).unwrap();
    assert_eq!(p.point(0), c.point(3));
    assert!(c.permuted(&[0, 0, 1, 2, 3, 4]).is_err());
}

proptest! {
    #[test]
    fn diffeomorphism_fixes_the_midplane(x in -5.0f64..5.0, y in -5.0f64..5.0) {
        prop_assume!(x.abs() + y.abs() > 1e-6);
        prop_assert_eq!(torus_diffeomorphism(&[x, y, 0.0]), [x, y, 0.0]);
    }

    #[test]
    fn curved_torus_points_lie_on_the_surface(t in 0.0f64..2.0 * PI, p in 0.0f64..2.0 * PI, r in 1.1f64..5.0) {
        let q = torus_r3_point(t, p, r);
        let rho = (q[0] * q[0] + q[1] * q[1]).sqrt();
        prop_assert!(((rho - r).powi(2) + q[2] * q[2] - 1.0).abs() < 1e-12);
    }
}
