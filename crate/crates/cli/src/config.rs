//! Experiment configuration files.
//!
//! A config is a TOML table with shared keys at the top level and one
//! optional table per experiment kind. Everything has a default, so an
//! empty file (or no file) runs the documented default experiment.
//!
//! ```toml
//! seed = 7
//! n = 40000
//!
//! [params]
//! d = 2
//! alpha = 1.5
//! a = 1.0
//! m_cap = 2.0
//!
//! [domain]
//! d = 2
//! kind = "half_space"
//!
//! [bhp]
//! r = 0.5
//! ```

use std::path::Path;

use mixjump_core::geometry::DomainShape;
use mixjump_core::harness::{BhpOptions, ExitExperimentOptions, HarmonicOptions, LowerBoundOptions, PolicyTemplate};
use mixjump_core::Params;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    /// Paths per Monte Carlo estimate.
    pub n: Option<usize>,
    /// Thread count; left out of reports so outputs do not depend on it.
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    pub params: Option<Params>,
    pub domain: Option<DomainShape>,
    pub policy: Option<PolicyTemplate>,
    pub fraclap: FraclapConfig,
    pub exit: ExitConfig,
    pub levysystem: LevySystemConfig,
    pub scaling: ScalingConfig,
    pub harnack: HarnackConfig,
    pub carleson: CarlesonConfig,
    pub bhp: BhpConfig,
    pub lowerbound: LowerBoundConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn n_or(&self, default: usize) -> usize {
        self.n.unwrap_or(default)
    }

    pub fn policy(&self) -> PolicyTemplate {
        self.policy.unwrap_or_default()
    }

    /// `params` if given, else `(d, α, a, M) = (d, 1.5, 1, 2)`, untruncated.
    pub fn params_or(&self, d: usize) -> Result<Params, CliError> {
        let p = match self.params {
            Some(p) => p,
            None => Params::new(d, 1.5, 1.0, 2.0, None)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn domain_or(&self, default: DomainShape) -> Result<DomainShape, CliError> {
        let d = self.domain.clone().unwrap_or(default);
        d.validate()?;
        Ok(d)
    }
}

/// What the `fraclap` command evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FraclapMode {
    /// `Δ̂^{α/2}_{1,λ}` of the one-dimensional power function.
    #[default]
    Power,
    /// `Δ̂^{α/2}_{d,λ}` of `h_p` at the canonical boundary point of the domain.
    Hp,
    /// Generator sign checks of the two test functions.
    TestFunctions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FraclapConfig {
    pub mode: FraclapMode,
    pub d: usize,
    pub alpha: f64,
    pub p: Option<f64>,
    /// Truncation radius.
    pub lambda: f64,
    /// Log grid `[lo, hi]` with `points` points.
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Jump weight for the test-function mode.
    pub a: f64,
    pub rel_tol: Option<f64>,
}

impl Default for FraclapConfig {
    fn default() -> Self {
        Self {
            mode: FraclapMode::Power,
            d: 1,
            alpha: 1.5,
            p: None,
            lambda: 1.0,
            lo: 1e-6,
            hi: 1e-3,
            points: 9,
            a: 1.0,
            rel_tol: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitConfig {
    pub lambdas: Vec<f64>,
    /// Allowed max/min of `C8` across `lambdas`.
    pub factor: f64,
    pub options: ExitExperimentOptions,
}

impl Default for ExitConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0, 2.0, 4.0],
            factor: 3.0,
            options: ExitExperimentOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevySystemConfig {
    pub radius: f64,
    pub r_in: f64,
    pub r_out: f64,
    /// Independent repetitions; the z-distribution verdict needs several.
    pub repeats: usize,
}

impl Default for LevySystemConfig {
    fn default() -> Self {
        Self {
            radius: 0.5,
            r_in: 1.0,
            r_out: 2.0,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub lambda: f64,
    /// Observation time of the killed process on `λD`.
    pub t: f64,
    pub p_min: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            t: 0.1,
            p_min: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnackConfig {
    pub r: f64,
    pub options: HarmonicOptions,
}

impl Default for HarnackConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            options: HarmonicOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlesonConfig {
    pub r: f64,
    pub options: HarmonicOptions,
}

impl Default for CarlesonConfig {
    fn default() -> Self {
        Self {
            r: 0.4,
            options: HarmonicOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BhpConfig {
    pub r: f64,
    /// Boundary point; the domain's canonical one when absent.
    pub q: Option<Vec<f64>>,
    pub options: BhpOptions,
}

impl Default for BhpConfig {
    fn default() -> Self {
        Self {
            r: 0.5,
            q: None,
            options: BhpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerBoundConfig {
    pub options: LowerBoundOptions,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.seed(), 0);
        assert_eq!(c.bhp.r, 0.5);
        assert!(c.params_or(2).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sede = 3").is_err());
        assert!(ExperimentConfig::parse("[bhp]\nradius = 0.3").is_err());
    }

    #[test]
    fn nested_blocks_parse() {
        let c = ExperimentConfig::parse(
            "seed = 4\nn = 100\n[params]\nd = 2\nalpha = 1.2\na = 0.5\nm_cap = 1.0\n\
             [domain]\nd = 2\nkind = \"bump\"\ncoeff = 0.5\n\
             [bhp.options.harmonic]\na_grid = [0.5]\n[policy]\nsmall_jump = 0.02\n",
        )
        .unwrap();
        assert_eq!(c.n_or(1), 100);
        assert_eq!(c.params_or(2).unwrap().alpha, 1.2);
        assert_eq!(c.bhp.options.harmonic.a_grid, vec![0.5]);
        assert_eq!(c.policy().small_jump, 0.02);
        assert!(c.domain_or(DomainShape::half_space(2)).unwrap().is_c11());
    }

    #[test]
    fn invalid_params_are_schema_errors() {
        let c = ExperimentConfig::parse("[params]\nd = 2\nalpha = 2.5\na = 1.0\nm_cap = 2.0\n").unwrap();
        assert!(c.params_or(2).is_err());
    }
}
