//! Configuration file, numeric settings and the reproducibility manifest.
//!
//! Config files are flat TOML: a `[model]` section with the five model
//! keys, an optional `[numerics]` section, and optional named
//! `[sweep.<name>]` sections whose unset keys inherit `[model]`. Command
//! line flags override file values; `STOPWELL_SEED` overrides the file
//! seed and is itself overridden by `--seed`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StopwellError};
use crate::model::ModelParams;

/// Partial model section; unset keys fall back to the base model.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ModelSection {
    pub mu0: Option<f64>,
    pub mu1: Option<f64>,
    pub sigma: Option<f64>,
    pub r: Option<f64>,
    pub invest_cost: Option<f64>,
}

impl ModelSection {
    pub fn resolve(&self, base: &ModelParams) -> Result<ModelParams> {
        ModelParams::new(
            self.mu0.unwrap_or(base.mu0),
            self.mu1.unwrap_or(base.mu1),
            self.sigma.unwrap_or(base.sigma),
            self.r.unwrap_or(base.r),
            self.invest_cost.unwrap_or(base.invest_cost),
        )
    }
}

/// Numeric settings shared by the solvers; every field has a default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Numerics {
    /// RNG seed; flags and `STOPWELL_SEED` take precedence.
    pub seed: u64,
    /// Boundary grid size (number of pi nodes).
    pub grid_size: usize,
    /// Monte-Carlo samples per evaluation point.
    pub samples: u64,
    /// Fixed-point tolerance; 0 means automatic (noise-floor based).
    pub tol: f64,
    pub max_iter: usize,
    /// Time step for path-based checks.
    pub dt: f64,
    /// Path horizon; 0 means the documented default `10/(r - mu1)`.
    pub horizon: f64,
    /// Oracle lattice size in x.
    pub ns: usize,
    /// Oracle lattice size in pi.
    pub npi: usize,
    /// Oracle domain half-widths in log-profit units around `ln x*_0`.
    pub left_width: f64,
    pub right_width: f64,
    pub max_sweeps: usize,
    pub omega: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            seed: 42,
            grid_size: 101,
            samples: 1_000_000,
            tol: 0.0,
            max_iter: 400,
            dt: 1e-3,
            horizon: 0.0,
            ns: 321,
            npi: 161,
            left_width: 4.0,
            right_width: 1.0,
            max_sweeps: 200_000,
            omega: 1.85,
        }
    }
}

impl Numerics {
    pub fn tol_option(&self) -> Option<f64> {
        if self.tol > 0.0 {
            Some(self.tol)
        } else {
            None
        }
    }

    pub fn horizon_for(&self, params: &ModelParams) -> f64 {
        if self.horizon > 0.0 {
            self.horizon
        } else {
            10.0 / (params.r - params.mu1)
        }
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: Numerics,
    /// Named parameter sets for sweeps; BTreeMap keeps emission order
    /// deterministic.
    #[serde(default)]
    pub sweep: BTreeMap<String, ModelSection>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| StopwellError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolved sweep sets in name order; an empty `[sweep.*]` table
    /// yields the base model under the name "model".
    pub fn sweep_sets(&self, base: &ModelParams) -> Result<Vec<(String, ModelParams)>> {
        if self.sweep.is_empty() {
            return Ok(vec![("model".to_string(), *base)]);
        }
        self.sweep
            .iter()
            .map(|(name, sec)| Ok((name.clone(), sec.resolve(base)?)))
            .collect()
    }
}

/// Record of one CLI run; re-running with the stored settings reproduces
/// the CSV outputs byte for byte (wall times vary and live only here).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub subcommand: String,
    pub params: ModelParams,
    pub numerics: Numerics,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub stage_timings: Vec<(String, f64)>,
    /// Iterations used by iterative solvers, when applicable.
    pub iterations: Option<usize>,
    /// Serialized task record consumed by `replay`.
    #[serde(default)]
    pub task_json: Option<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| StopwellError::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| StopwellError::Config(format!("{}: {e}", path.display())))
    }
}

/// The four documented representative parameter sets used by `figures`
/// when no sweep file is given: r = 0.05, mu1 = 0.03, I = 100 fixed,
/// spanning small and large signal-to-noise (mu1 - mu0)/sigma.
pub fn default_sweep() -> Vec<(String, ModelParams)> {
    let mk = |mu0: f64, sigma: f64| ModelParams::new(mu0, 0.03, sigma, 0.05, 100.0).unwrap();
    vec![
        ("reference".into(), mk(0.01, 0.2)),
        ("high_noise".into(), mk(0.01, 0.3)),
        ("fast_learning".into(), mk(-0.01, 0.2)),
        ("fast_learning_high_noise".into(), mk(-0.01, 0.3)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_params;

    #[test]
    fn parses_full_config() {
        let text = r#"
[model]
mu0 = 0.01
mu1 = 0.03
sigma = 0.2
r = 0.05
invest_cost = 100.0

[numerics]
seed = 7
grid_size = 51
samples = 20000

[sweep.noisy]
sigma = 0.3

[sweep.fast]
mu0 = -0.01
"#;
        let cfg: ConfigFile = toml::from_str(text).unwrap();
        let base = cfg.model.resolve(&reference_params()).unwrap();
        assert_eq!(base.sigma, 0.2);
        assert_eq!(cfg.numerics.seed, 7);
        assert_eq!(cfg.numerics.grid_size, 51);
        assert_eq!(cfg.numerics.max_iter, Numerics::default().max_iter);
        let sets = cfg.sweep_sets(&base).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].0, "fast");
        assert_eq!(sets[0].1.mu0, -0.01);
        assert_eq!(sets[1].1.sigma, 0.3);
        assert_eq!(sets[1].1.mu0, 0.01);
    }

    #[test]
    fn invalid_sweep_set_is_rejected() {
        let text = "[model]\nmu0 = 0.01\n[sweep.bad]\nmu1 = -0.5\n";
        let cfg: ConfigFile = toml::from_str(text).unwrap();
        assert!(cfg.sweep_sets(&reference_params()).is_err());
    }

    #[test]
    fn default_sweep_sets_all_validate() {
        assert_eq!(default_sweep().len(), 4);
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            code_version: "test".into(),
            subcommand: "boundary".into(),
            params: reference_params(),
            numerics: Numerics::default(),
            seed: 9,
            outputs: vec!["boundary.csv".into()],
            wall_time_secs: 1.0,
            stage_timings: vec![("solve".into(), 0.9)],
            iterations: Some(12),
            task_json: None,
        };
        let dir = std::env::temp_dir().join("stopwell_manifest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back.subcommand, "boundary");
        assert_eq!(back.numerics, m.numerics);
        assert_eq!(back.seed, 9);
    }
}
