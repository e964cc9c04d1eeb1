//! Closed-form reference values and comparison metrics.

use nalgebra::DMatrix;

use crate::designs::FlatTorusDesign;
use crate::error::{Error, Result};

/// Value and partial derivatives up to second order of a function of (θ,φ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub f: f64,
    pub d_t: f64,
    pub d_p: f64,
    pub d_tt: f64,
    pub d_tp: f64,
    pub d_pp: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum TestFunction {
    /// f = sinθ·sin2φ
    SinThetaSin2Phi,
    Constant(f64),
    Custom(fn(f64, f64) -> Jet),
}

impl TestFunction {
    pub fn jet(&self, theta: f64, phi: f64) -> Jet {
        match *self {
            TestFunction::SinThetaSin2Phi => {
                let (st, ct) = theta.sin_cos();
                let (s2, c2) = (2.0 * phi).sin_cos();
                Jet {
                    f: st * s2,
                    d_t: ct * s2,
                    d_p: 2.0 * st * c2,
                    d_tt: -st * s2,
                    d_tp: 2.0 * ct * c2,
                    d_pp: -4.0 * st * s2,
                }
            }
            TestFunction::Constant(c) => Jet { f: c, d_t: 0.0, d_p: 0.0, d_tt: 0.0, d_tp: 0.0, d_pp: 0.0 },
            TestFunction::Custom(f) => f(theta, phi),
        }
    }
}

/// ℒf = μ·∇f + C_ij ∂i∂j f for the flat-torus design, at each (θ,φ).
pub fn flat_torus_analytic_l(f: TestFunction, grid: &[(f64, f64)]) -> Vec<f64> {
    grid.iter()
        .map(|&(t, p)| {
            let j = f.jet(t, p);
            let mu = FlatTorusDesign::mu(t);
            let c = FlatTorusDesign::diffusion(p);
            mu[0] * j.d_t + mu[1] * j.d_p + c[0][0] * j.d_tt + 2.0 * c[0][1] * j.d_tp + c[1][1] * j.d_pp
        })
        .collect()
}

/// ℒ*f = −div(μ f) + ∂i∂j(C_ij f). C_θθ depends on φ only and the other entries
/// are constant, so the second-order part reduces to C_ij ∂i∂j f.
pub fn flat_torus_analytic_lstar(f: TestFunction, grid: &[(f64, f64)]) -> Vec<f64> {
    grid.iter()
        .map(|&(t, p)| {
            let j = f.jet(t, p);
            let mu = FlatTorusDesign::mu(t);
            let dmu_t = t.cos();
            let c = FlatTorusDesign::diffusion(p);
            -(dmu_t * j.f + mu[0] * j.d_t) - mu[1] * j.d_p
                + c[0][0] * j.d_tt
                + 2.0 * c[0][1] * j.d_tp
                + c[1][1] * j.d_pp
        })
        .collect()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// √g(θ) = √(1 + (a² − 1)cos²θ), the speed of θ ↦ (cosθ, a sinθ).
pub fn ellipse_speed(a: f64, theta: f64) -> f64 {
    (1.0 + (a * a - 1.0) * theta.cos().powi(2)).sqrt()
}

/// Sampling density (per unit arclength, up to normalization) of an ellipse
/// sampled uniformly in θ.
pub fn ellipse_density(a: f64, theta: f64) -> f64 {
    1.0 / ellipse_speed(a, theta)
}

/// z(θ) = ∫₀^θ √g, rescaled so that z(2π) = 2π.
pub fn ellipse_conformal_angle(a: f64, thetas: &[f64]) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::invalid("minor axis must be positive"));
    }
    let tol = 1e-10;
    let total = integrate(|t| ellipse_speed(a, t), 0.0, 2.0 * std::f64::consts::PI, tol);
    let mut order: Vec<usize> = (0..thetas.len()).collect();
    order.sort_by(|&i, &j| thetas[i].total_cmp(&thetas[j]));
    let mut z = vec![0.0; thetas.len()];
    let (mut prev, mut acc) = (0.0, 0.0);
    for &i in &order {
        acc += integrate(|t| ellipse_speed(a, t), prev, thetas[i], tol / thetas.len().max(1) as f64);
        prev = thetas[i];
        z[i] = acc * 2.0 * std::f64::consts::PI / total;
    }
    Ok(z)
}

/// (sin z(θ), cos z(θ)) for each θ.
pub fn ellipse_analytic_eigenfunctions(a: f64, thetas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let z = ellipse_conformal_angle(a, thetas)?;
    Ok((z.iter().map(|v| v.sin()).collect(), z.iter().map(|v| v.cos()).collect()))
}

/// ‖u − v‖/‖v‖.
pub fn relative_l2(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid("vectors have different lengths"));
    }
    let den: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::invalid("reference vector has zero norm"));
    }
    let num: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = a.clone().singular_values();
    if a.ncols() == 0 || a.nrows() < a.ncols() || sv.min() <= 1e-12 * sv.max() {
        return Err(Error::RankDeficient("basis for principal angles is not full rank".into()));
    }
    Ok(a.clone().qr().q())
}

/// Principal angles between the column spans of `u` and `v`, ascending.
pub fn subspace_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::invalid("bases live in different dimensions"));
    }
    let (a, b) = if u.ncols() >= v.ncols() { (u, v) } else { (v, u) };
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let cross = qa.transpose() * &qb;
    let mut cos: Vec<f64> = cross.singular_values().iter().map(|c| c.min(1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    let perp = &qb - &qa * &cross;
    let mut sin: Vec<f64> = perp.singular_values().iter().map(|s| s.min(1.0)).collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    Ok(cos.iter().zip(&sin).map(|(&c, &s)| if c * c < 0.5 { c.acos() } else { s.asin() }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn l_at_reference_points() {
        let v = flat_torus_analytic_l(TestFunction::SinThetaSin2Phi, &[(0.0, 0.0), (PI / 2.0, 0.0)]);
        assert!((v[0] - 4.0).abs() < 1e-14);
        // Every term carries sin2φ or cosθ, both zero at (π/2, 0).
        assert!(v[1].abs() < 1e-14);
        let c = flat_torus_analytic_l(TestFunction::Constant(3.0), &[(0.4, 1.3)]);
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn lstar_at_reference_points() {
        let v = flat_torus_analytic_lstar(TestFunction::SinThetaSin2Phi, &[(0.0, 0.0), (PI / 2.0, PI / 2.0)]);
        assert!((v[0] - 4.0).abs() < 1e-14);
        // sin2φ = 0, cosθ = 0: every term vanishes.
        assert!(v[1].abs() < 1e-14);
        let c = flat_torus_analytic_lstar(TestFunction::Constant(2.0), &[(0.7, 0.1)]);
        assert!((c[0] + 0.7f64.cos() * 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_term_by_term() {
        // The displayed closed forms, written out term by term.
        for &(t, p) in &[(0.3, 1.7), (2.5, -0.4), (4.0, 5.5)] {
            let (st, ct, sp) = (f64::sin(t), f64::cos(t), f64::sin(p));
            let (s2, c2) = ((2.0 * p).sin(), (2.0 * p).cos());
            let l = (2.0 + st) * ct * s2 - (3.0 + sp) * st * s2 + 4.0 * ct * c2 - 4.0 * st * s2;
            let ls = -(2.0 + st) * ct * s2 - ct * st * s2 - (3.0 + sp) * st * s2 + 4.0 * ct * c2 - 4.0 * st * s2;
            assert!((flat_torus_analytic_l(TestFunction::SinThetaSin2Phi, &[(t, p)])[0] - l).abs() < 1e-13);
            assert!((flat_torus_analytic_lstar(TestFunction::SinThetaSin2Phi, &[(t, p)])[0] - ls).abs() < 1e-13);
        }
    }

    #[test]
    fn circle_angle_is_identity() {
        let thetas = [0.1, 1.0, 3.0, 2.0 * PI];
        let z = ellipse_conformal_angle(1.0, &thetas).unwrap();
        for (a, b) in z.iter().zip(&thetas) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics() {
        let v = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&v, &v).unwrap(), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((relative_l2(&neg, &v).unwrap() - 2.0).abs() < 1e-15);
        assert!(relative_l2(&v, &[0.0; 3]).is_err());
    }
}
