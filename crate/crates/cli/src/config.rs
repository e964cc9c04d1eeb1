use std::path::{Path, PathBuf};
use std::str::FromStr;

use localkernel::graph::Sparsity;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonArg {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl EpsilonArg {
    pub fn value(self) -> Option<f64> {
        match self {
            EpsilonArg::Value(v) => Some(v),
            EpsilonArg::Auto(_) => None,
        }
    }
}

impl FromStr for EpsilonArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EpsilonArg::Auto(AutoTag::Auto));
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(EpsilonArg::Value(v)),
            _ => Err(format!("expected a positive number or 'auto', got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnnArg {
    Count(usize),
    Dense(DenseTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenseTag {
    Dense,
}

impl KnnArg {
    pub fn sparsity(self) -> Sparsity {
        match self {
            KnnArg::Count(k) => Sparsity::Knn(k),
            KnnArg::Dense(_) => Sparsity::Dense,
        }
    }
}

impl FromStr for KnnArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("dense") {
            return Ok(KnnArg::Dense(DenseTag::Dense));
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KnnArg::Count(k)),
            _ => Err(format!("expected a positive integer or 'dense', got {s:?}")),
        }
    }
}

/// Options shared by every command. Fields mirror the flag names; a JSON
/// config file supplies defaults and flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bandwidth, or `auto` for the nearest-neighbour heuristic.
    #[arg(long)]
    pub epsilon: Option<EpsilonArg>,
    /// Right-normalization exponent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Neighbours per row, or `dense`.
    #[arg(long)]
    pub knn: Option<KnnArg>,
    /// Number of eigenpairs.
    #[arg(long)]
    pub eigs: Option<usize>,
    /// Intrinsic dimension; switches `laplacian` to the conformal operator.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fraction of the full point count, in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => { $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )* };
}

impl RunConfig {
    pub fn load(path: &Path) -> localkernel::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| localkernel::Error::Parse { row: e.line(), msg: e.to_string() })
    }

    /// Fields set in `flags` win.
    pub fn merged(mut self, flags: &RunConfig) -> Self {
        overlay!(self, flags; epsilon, alpha, knn, eigs, dim, seed, threads, scale, out);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return Err(format!("alpha must be finite, got {a}"));
            }
        }
        if let Some(EpsilonArg::Value(e)) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(format!("epsilon must be positive, got {e}"));
            }
        }
        if let Some(KnnArg::Count(0)) = self.knn {
            return Err("knn must be positive".into());
        }
        if self.eigs == Some(0) {
            return Err("eigs must be positive".into());
        }
        if self.dim == Some(0) {
            return Err("dim must be positive".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be positive".into());
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(format!("scale must lie in (0, 1], got {s}"));
            }
        }
        Ok(())
    }

    pub fn sparsity(&self) -> Option<Sparsity> {
        self.knn.map(KnnArg::sparsity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = serde_json::from_str(r#"{"epsilon": "auto", "knn": 32, "alpha": 0.5}"#).unwrap();
        let flags = RunConfig { knn: Some("dense".parse().unwrap()), ..Default::default() };
        let m = file.merged(&flags);
        assert_eq!(m.epsilon, Some(EpsilonArg::Auto(AutoTag::Auto)));
        assert_eq!(m.knn, Some(KnnArg::Dense(DenseTag::Dense)));
        assert_eq!(m.alpha, Some(0.5));
    }

    #[test]
    fn parses_flag_values() {
        assert_eq!("0.25".parse::<EpsilonArg>().unwrap(), EpsilonArg::Value(0.25));
        assert!("-1".parse::<EpsilonArg>().is_err());
        assert_eq!("12".parse::<KnnArg>().unwrap(), KnnArg::Count(12));
        assert!("0".parse::<KnnArg>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"epsilom": 1}"#).is_err());
    }
}
