//! Experiment configuration, read from TOML. Every field has a default, so an
//! empty file (or no file) gives the reference setup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub data: DataConfig,
    pub gp: GpConfig,
    pub mpc: MpcConfig,
    pub evolving: EvolvingSection,
    pub experiment: ExperimentSection,
    pub sweep: SweepConfig,
    pub roa: RoaConfig,
    pub outliers: OutlierConfig,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            data: DataConfig::default(),
            gp: GpConfig::default(),
            mpc: MpcConfig::default(),
            evolving: EvolvingSection::default(),
            experiment: ExperimentSection::default(),
            sweep: SweepConfig::default(),
            roa: RoaConfig::default(),
            outliers: OutlierConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Sampling time (min).
    pub ts: f64,
    /// Measurement noise standard deviation (mol/l).
    pub noise_sigma: f64,
    pub noise_bound_sigmas: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            ts: 0.5,
            noise_sigma: 0.003,
            noise_bound_sigmas: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Initial output (mol/l); the plant starts at the steady state producing it.
    pub y0: f64,
    /// Reference input (K); the reference output is its steady state.
    pub u_ref: f64,
    /// Number of past outputs beyond the current one in the NARX state.
    pub m_y: usize,
    pub chirp_amplitude: f64,
    pub chirp_f0: f64,
    pub chirp_f1: f64,
    /// Length of each chirp pass (min).
    pub chirp_pass_duration: f64,
    /// Output neighborhood radius for local sets (mol/l).
    pub radius: f64,
    pub target_points: usize,
    /// Units of the thinning distance.
    pub thinning: ThinningUnits,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            y0: 0.6,
            u_ref: 356.0,
            m_y: 2,
            chirp_amplitude: 9.0,
            chirp_f0: 0.01,
            chirp_f1: 0.2,
            chirp_pass_duration: 400.0,
            radius: 0.03,
            target_points: 40,
            thinning: ThinningUnits::Physical,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinningUnits {
    /// Regressors scaled to the unit box.
    Normalized,
    /// Raw regressors (mol/l and K), where the input coordinate dominates.
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub starts: usize,
    /// Simplex iterations per start.
    pub budget: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            budget: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q_diag: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub hard_output_constraints: bool,
    pub hard_penalty: f64,
    /// Optional `[lo, hi]` band (mol/l) outside which the barrier acts.
    pub soft_band: Option<[f64; 2]>,
    pub barrier_gain: f64,
    /// Multiplier on the designed terminal matrix.
    pub p_scale: f64,
    pub max_iter: usize,
    pub f_tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            q_diag: vec![100.0, 0.0, 0.0],
            r: 5.0,
            lambda: 1.0,
            u_min: 335.0,
            u_max: 372.0,
            y_min: 0.35,
            y_max: 0.65,
            hard_output_constraints: true,
            hard_penalty: 1e6,
            soft_band: None,
            barrier_gain: 1e3,
            p_scale: 1.0,
            max_iter: 200,
            f_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolvingSection {
    /// Prediction-error threshold (mol/l).
    pub e_bar: f64,
    /// Posterior-variance threshold ((mol/l)²).
    pub sigma2_bar: f64,
    /// Maximum training points; 0 for unbounded.
    pub capacity: usize,
}

impl Default for EvolvingSection {
    fn default() -> Self {
        Self {
            e_bar: 0.0,
            sigma2_bar: 0.0,
            capacity: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialSet {
    D0,
    Dref,
    Dcomb,
}

impl InitialSet {
    pub const ALL: [InitialSet; 3] = [InitialSet::D0, InitialSet::Dref, InitialSet::Dcomb];

    pub fn name(&self) -> &'static str {
        match self {
            InitialSet::D0 => "D0",
            InitialSet::Dref => "Dref",
            InitialSet::Dcomb => "Dcomb",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerChoice {
    #[serde(rename = "oMPC")]
    Oracle,
    #[serde(rename = "bGP")]
    Batch,
    #[serde(rename = "rGP")]
    Recursive,
    #[serde(rename = "rGP-ungated")]
    RecursiveUngated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub initial_set: InitialSet,
    pub controller: ControllerChoice,
    pub n_sim: usize,
    pub n_step: usize,
    /// Time (min) spent regulating at the initial set-point before the
    /// reference switches.
    pub hold_time: f64,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            initial_set: InitialSet::Dref,
            controller: ControllerChoice::Recursive,
            n_sim: 50,
            n_step: 60,
            hold_time: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    EBar,
    Sigma2Bar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::EBar,
            grid: vec![0.0, 0.002, 0.005, 0.01, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoaConfig {
    pub initial_set: InitialSet,
    pub y0_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
    pub replicates: usize,
    pub n_step: usize,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self {
            initial_set: InitialSet::Dcomb,
            y0_grid: vec![0.36, 0.38, 0.40, 0.42, 0.46, 0.50, 0.54, 0.58, 0.62, 0.64],
            noise_grid: vec![0.003, 0.006, 0.009, 0.012],
            replicates: 30,
            n_step: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    /// Times (min) at which a spike is added to the measurement.
    pub times: Vec<f64>,
    /// Spike size as a multiple of the noise bound.
    pub bound_multiple: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            times: vec![7.0, 10.0, 12.5, 20.0],
            bound_multiple: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![50, 100, 200, 400],
            trials: 21,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_round_trips() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_sections_override() {
        let c = Config::from_toml(
            "[experiment]\nn_sim = 3\ncontroller = \"bGP\"\ninitial_set = \"D0\"\n[mpc]\nlambda = 2.5\n",
        )
        .unwrap();
        assert_eq!(c.experiment.n_sim, 3);
        assert_eq!(c.experiment.controller, ControllerChoice::Batch);
        assert_eq!(c.experiment.initial_set, InitialSet::D0);
        assert_eq!(c.mpc.lambda, 2.5);
        assert_eq!(c.mpc.horizon, 5);
        assert!(Config::from_toml("[mpc]\nunknown = 1\n").is_err());
    }
}
