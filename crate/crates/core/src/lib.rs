//! Local kernels on point clouds.
//!
//! Kernels are assembled into sparse matrices over a [`data::PointCloud`],
//! normalized into discrete generators ([`graph`]), and decomposed into spectral
//! embeddings ([`spectral`]). [`geometry`] builds the conformally invariant
//! embedding and the diffeomorphism reconstruction on top of these, and
//! [`experiments`] runs the reference experiments with their pass/fail metrics.

pub mod data;
pub mod designs;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod graph;
pub mod kernel;
pub mod knn;
pub mod moments;
pub mod sparse;
pub mod spectral;
pub mod validation;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Compensated summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
