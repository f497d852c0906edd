//! JSON run configuration. Every key is optional except `schema_version`;
//! command-line flags take precedence over file values.

use std::path::Path;

use serde::Deserialize;
use sparse_barankin::QuadratureSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub n: Option<usize>,
    pub s: Option<usize>,
    pub sigma2: Option<f64>,
    /// Parameter vector for `bounds eval` and `risk`.
    pub x: Option<Vec<f64>>,
    /// Direction scaled along the SNR axis in sweeps.
    pub direction: Option<Vec<f64>>,
    pub snr_db: Option<Vec<f64>>,
    pub snr_ratios: Option<Vec<f64>>,
    pub n_vectors: Option<usize>,
    pub q: Option<usize>,
    pub alpha_sigmas: Option<f64>,
    pub trials: Option<usize>,
    pub threshold: Option<f64>,
    pub estimator: Option<EstimatorConfig>,
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    // Empty braces rather than unit variants: serde ignores extra keys on
    // unit variants of an internally tagged enum.
    Identity {},
    Ml {},
    Ht { threshold: Option<f64> },
    Oracle { support: Option<Vec<usize>> },
    Family { a: f64, c: f64, d: f64 },
    Counterexample { a: Option<f64> },
    TanhProduct {},
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| format!("invalid config: {e}"))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_full() {
        let c = RunConfig::parse(r#"{"schema_version": 1}"#).unwrap();
        assert!(c.n.is_none());
        let c = RunConfig::parse(
            r#"{"schema_version": 1, "n": 5, "s": 1, "sigma2": 1.0, "x": [1,0,0,0,0],
                "estimator": {"kind": "family", "a": 0.5, "c": 0.4, "d": 0.2},
                "quadrature": {"abs_tol": 1e-10, "rel_tol": 1e-8, "max_subdivisions": 100, "truncation_sigmas": 10}}"#,
        )
        .unwrap();
        assert_eq!(c.estimator, Some(EstimatorConfig::Family { a: 0.5, c: 0.4, d: 0.2 }));
    }

    #[test]
    fn rejects_unknown_and_wrong_version() {
        assert!(RunConfig::parse(r#"{"schema_version": 1, "nn": 5}"#).is_err());
        assert!(RunConfig::parse(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::parse(r#"{"n": 5}"#).is_err());
        assert!(RunConfig::parse(r#"{"schema_version": 1, "estimator": {"kind": "ml", "x": 1}}"#).is_err());
    }
}
