//! JSON run configuration.

use anyhow::{bail, Context, Result};
use gps_core::free_energy::{GeometryRule, DEFAULT_C0};
use gps_core::loop_law::{FreeEndSpec, KernelSpec};
use gps_core::numerics::SlowVar;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Loop laws as written in a config file.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Delta,
    TwoPoint { p: f64, q: f64 },
    PowerLaw {
        alpha: f64,
        #[serde(default = "constant")]
        sv: SlowVar,
        #[serde(default = "default_cap")]
        cap: u64,
    },
    Truncated {
        alpha: f64,
        #[serde(default = "constant")]
        sv: SlowVar,
        cap: u64,
    },
    /// Unnormalized weights for `s = 2, 3, ...`
    Explicit(Vec<f64>),
}

fn constant() -> SlowVar {
    SlowVar::Constant
}

fn default_cap() -> u64 {
    10_000
}

impl KernelConfig {
    pub fn spec(&self) -> KernelSpec {
        match self {
            KernelConfig::Delta => KernelSpec::delta(),
            KernelConfig::TwoPoint { p, q } => KernelSpec::two_point(*p, *q),
            KernelConfig::PowerLaw { alpha, sv, cap } => KernelSpec::power_law(*alpha, *sv, *cap),
            KernelConfig::Truncated { alpha, sv, cap } => KernelSpec::truncated(*alpha, *sv, *cap),
            KernelConfig::Explicit(w) => KernelSpec::explicit(w.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Jsonl,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default = "csv")]
    pub format: Format,
}

fn csv() -> Format {
    Format::Csv
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    #[serde(default = "default_free_ends")]
    pub free_ends: FreeEndSpec,
    #[serde(default = "one")]
    pub h: f64,
    #[serde(default = "default_geometry")]
    pub geometry: GeometryRule,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_c0")]
    pub c0: f64,
    pub output: Option<OutputConfig>,
}

fn default_free_ends() -> FreeEndSpec {
    FreeEndSpec { alpha_bar: 3.5, sv_bar: SlowVar::Constant, j_max: 10_000 }
}

fn one() -> f64 {
    1.0
}

fn default_geometry() -> GeometryRule {
    GeometryRule::Linear(0.5)
}

fn default_grid() -> Vec<u64> {
    vec![100, 200, 400]
}

fn default_samples() -> u64 {
    10_000
}

fn default_c0() -> f64 {
    DEFAULT_C0
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelConfig::PowerLaw { alpha: 0.5, sv: SlowVar::Constant, cap: default_cap() },
            free_ends: default_free_ends(),
            h: 1.0,
            geometry: default_geometry(),
            n_grid: default_grid(),
            seed: 0,
            samples: default_samples(),
            c0: DEFAULT_C0,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("malformed config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            bail!("n_grid must not be empty");
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            bail!("n_grid must be strictly increasing");
        }
        if self.n_grid[0] == 0 {
            bail!("n_grid entries must be positive");
        }
        if !self.h.is_finite() {
            bail!("h must be finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(r#"{"kernel": {"two_point": {"p": 0.5, "q": 0.25}}}"#).unwrap();
        assert_eq!(c.kernel.spec(), KernelSpec::two_point(0.5, 0.25));
        assert_eq!(c.h, 1.0);
        assert_eq!(c.geometry, GeometryRule::Linear(0.5));
        assert_eq!(c.output, None);
    }

    #[test]
    fn full_config() {
        let text = r#"{
            "kernel": {"power_law": {"alpha": 1.5, "sv": {"family": "log_power", "beta": 1.0}, "cap": 500}},
            "free_ends": {"alpha_bar": 1.0, "sv_bar": {"family": "constant"}, "j_max": 2000},
            "h": 0.7,
            "geometry": {"sqrt_log": 2.0},
            "n_grid": [50, 100],
            "seed": 9,
            "samples": 100,
            "c0": 8.0,
            "output": {"path": "out.csv", "format": "jsonl"}
        }"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.kernel.spec(), KernelSpec::power_law(1.5, SlowVar::LogPower(1.0), 500));
        assert_eq!(c.geometry, GeometryRule::SqrtLog(2.0));
        assert_eq!(c.output.unwrap().format, Format::Jsonl);
        assert_eq!(c.free_ends.alpha_bar, 1.0);
    }

    #[test]
    fn rejects_bad_grids_and_double_geometry() {
        assert!(RunConfig::parse(r#"{"kernel": "delta", "n_grid": []}"#).is_err());
        assert!(RunConfig::parse(r#"{"kernel": "delta", "n_grid": [10, 10]}"#).is_err());
        assert!(RunConfig::parse(r#"{"kernel": "delta", "geometry": {"gamma": 1.0, "linear": 0.5}}"#).is_err());
        assert!(RunConfig::parse(r#"{"kernel": "delta", "surprise": 1}"#).is_err());
    }
}
