//! Experiment configuration: the versioned JSON schema consumed by the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AngleGrid;
use crate::scene::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

/// Which schedule optimizer drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerMethod {
    /// Fresh uniform phases every slot.
    Random,
    /// Block-coordinate Riemannian ascent on the per-sensor SNR objectives.
    Bcgd,
    /// Riemannian descent on the quadratic CRLB surrogate.
    CrlbSurrogate,
}

impl BeamformerMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BeamformerMethod::Random => "random",
            BeamformerMethod::Bcgd => "bcgd",
            BeamformerMethod::CrlbSurrogate => "crlb_surrogate",
        }
    }
}

impl std::str::FromStr for BeamformerMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BeamformerMethod::Random),
            "bcgd" => Ok(BeamformerMethod::Bcgd),
            "crlb_surrogate" => Ok(BeamformerMethod::CrlbSurrogate),
            other => Err(Error::Config(format!(
                "unknown beamformer method '{other}' (expected random, bcgd, or crlb_surrogate)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Treat the target count as known (the default); otherwise stop on the
    /// residual threshold.
    #[serde(default = "default_true")]
    pub k_known: bool,
    /// Relative residual threshold used when `k_known` is false.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    /// Selection cap when `k_known` is false; defaults to twice the target
    /// count.
    #[serde(default)]
    pub k_cap: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k_known: true,
            residual_tol: default_residual_tol(),
            k_cap: None,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_residual_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformerConfig {
    pub method: BeamformerMethod,
    /// Ascent iterations per subproblem; kept deliberately small.
    #[serde(default = "default_inner_iters")]
    pub inner_iters: usize,
    /// Optional per-slot phase jitter (radians, standard deviation) applied
    /// before each sweep; off by default.
    #[serde(default)]
    pub slot_jitter_rad: f64,
    /// Rerun the alternating loop even for the random method; off by default
    /// (a loop cannot improve a schedule it never optimizes).
    #[serde(default)]
    pub loop_random: bool,
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            method: BeamformerMethod::Bcgd,
            inner_iters: default_inner_iters(),
            slot_jitter_rad: 0.0,
            loop_random: false,
        }
    }
}

fn default_inner_iters() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Convergence threshold on the largest per-target angle change.
    #[serde(default = "default_doa_tol")]
    pub doa_tol_deg: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_outer: default_max_outer(),
            doa_tol_deg: default_doa_tol(),
        }
    }
}

fn default_max_outer() -> usize {
    10
}

fn default_doa_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub methods: Vec<BeamformerMethod>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
        }
    }
}

fn default_trials() -> usize {
    100
}

/// Estimation grid; the uniform sampling defaults to 61 points per axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_grid_low")]
    pub low_deg: f64,
    #[serde(default = "default_grid_high")]
    pub high_deg: f64,
    #[serde(default = "default_grid_step")]
    pub step_deg: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            low_deg: default_grid_low(),
            high_deg: default_grid_high(),
            step_deg: default_grid_step(),
        }
    }
}

fn default_grid_low() -> f64 {
    -90.0
}

fn default_grid_high() -> f64 {
    90.0
}

fn default_grid_step() -> f64 {
    3.0
}

impl GridConfig {
    pub fn build(&self) -> Result<AngleGrid> {
        AngleGrid::new(self.low_deg, self.high_deg, self.step_deg)
    }
}

/// Root experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub beamformer: BeamformerConfig,
    #[serde(default, rename = "loop")]
    pub outer_loop: LoopConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    /// Output directory for CSV/JSON artifacts.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Optional minimum received SNR gamma_0 (dB); checked after each run
    /// and reported as a warning flag, never enforced during optimization.
    #[serde(default)]
    pub min_snr_db: Option<f64>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    /// Desk defaults around a given scenario.
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario,
            grid: GridConfig::default(),
            estimator: EstimatorConfig::default(),
            beamformer: BeamformerConfig::default(),
            outer_loop: LoopConfig::default(),
            sweep: None,
            monte_carlo: MonteCarloConfig::default(),
            output: None,
            seed: 0,
            min_snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.grid.build().map_err(|e| Error::Config(e.to_string()))?;
        if self.monte_carlo.trials < 1 {
            return Err(Error::Config("monte_carlo.trials must be >= 1".into()));
        }
        if !(self.outer_loop.doa_tol_deg > 0.0) {
            return Err(Error::Config("loop.doa_tol_deg must be > 0".into()));
        }
        if self.outer_loop.max_outer < 1 {
            return Err(Error::Config("loop.max_outer must be >= 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.snr_db.is_empty() || sweep.methods.is_empty() {
                return Err(Error::Config("sweep needs snr_db and methods".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
