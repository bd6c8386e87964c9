use std::path::{Path, PathBuf};

use griffiths_core::annealer::{Backend, CalibrationParams, DEFAULT_T_PHYS};
use griffiths_core::lattice::{DilutionPattern, DisorderDistribution};
use griffiths_core::qmc::{ChainParams, InitKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::recipes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Qmc,
    DeviceSim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dilution {
    None,
    Default,
}

impl Dilution {
    pub fn pattern(self) -> DilutionPattern {
        match self {
            Dilution::None => DilutionPattern::None,
            Dilution::Default => DilutionPattern::Default,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub sizes: Vec<usize>,
    #[serde(default = "default_dilution")]
    pub dilution: Dilution,
}

fn default_dilution() -> Dilution {
    Dilution::Default
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    /// Defaults to the six-level law matching the mode.
    #[serde(default)]
    pub distribution: Option<DisorderDistribution>,
    pub instances: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub s_stars: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QmcRun {
    pub trotter: usize,
    pub sweeps: usize,
    /// Defaults to a quarter of `sweeps`.
    pub thermalize: Option<usize>,
    pub measure_interval: usize,
    pub cluster: bool,
    pub init: InitKind,
}

impl Default for QmcRun {
    fn default() -> Self {
        QmcRun { trotter: 64, sweeps: 1 << 17, thermalize: None, measure_interval: 8, cluster: false, init: InitKind::Random }
    }
}

impl QmcRun {
    pub fn chain_params(&self) -> ChainParams {
        let mut p = ChainParams::with_defaults(self.trotter, self.sweeps);
        if let Some(t) = self.thermalize {
            p.n_thermalize = t;
        }
        p.measure_interval = self.measure_interval;
        p.cluster = self.cluster;
        p.init = self.init;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceRun {
    pub n_rep: usize,
    /// Quench probability; defaults to `min(1, 0.5 / L)`.
    pub quench: Option<f64>,
    /// Static biases are drawn uniformly from `[-bias_scale, bias_scale]`.
    pub bias_scale: f64,
    /// Seed of the bias draw; defaults to one derived from the master seed.
    pub bias_seed: Option<u64>,
    pub t_phys: f64,
    /// Schedule CSV; the bundled table if absent.
    pub schedule: Option<PathBuf>,
    /// Largest programmed field of the susceptibility sweep.
    pub field_max: f64,
    /// Field values on each side of zero.
    pub field_points: usize,
    pub fit_degree: usize,
    pub backend: Backend,
}

impl Default for DeviceRun {
    fn default() -> Self {
        DeviceRun {
            n_rep: 100,
            quench: None,
            bias_scale: 0.05,
            bias_seed: None,
            t_phys: DEFAULT_T_PHYS,
            schedule: None,
            field_max: 0.04,
            field_points: 2,
            fit_degree: 3,
            backend: Backend::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub s_star: f64,
    pub h_up0: f64,
    pub h_low0: f64,
    pub rounds: usize,
    pub reads_per_call: usize,
    pub max_doublings: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { s_star: 0.6, h_up0: 0.1, h_low0: -0.1, rounds: 20, reads_per_call: 5000, max_doublings: 16 }
    }
}

impl CalibrationConfig {
    pub fn params(&self) -> CalibrationParams {
        let mut p = CalibrationParams::new(self.s_star, self.h_up0, self.h_low0, self.rounds);
        p.reads_per_call = self.reads_per_call;
        p.max_doublings = self.max_doublings;
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub bins: usize,
    /// Overrides of the tail-fit cutoffs.
    pub start_factor: Option<f64>,
    pub density_floor: Option<f64>,
    pub min_count: Option<u64>,
    /// Critical point used by the dynamical-exponent scan; the largest-size
    /// Binder crossing if absent.
    pub critical_gamma: Option<f64>,
    pub z_min: f64,
    pub z_max: f64,
    pub z_step: f64,
    /// Search box of the collapse fits, `[lower, upper]` for `nu`.
    pub nu_range: [f64; 2],
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bins: 40,
            start_factor: None,
            density_floor: None,
            min_count: None,
            critical_gamma: None,
            z_min: 0.5,
            z_max: 2.0,
            z_step: 0.05,
            nu_range: [0.3, 4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Master seed. Required here or through `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub recipes: Vec<String>,
    pub lattice: LatticeSpec,
    pub disorder: DisorderSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub qmc: QmcRun,
    #[serde(default)]
    pub device: DeviceRun,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// Configuration problem, reported with the offending field path.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn distribution(&self) -> DisorderDistribution {
        self.disorder.distribution.unwrap_or(match self.mode {
            Mode::Qmc => DisorderDistribution::QmcSixLevel,
            Mode::DeviceSim => DisorderDistribution::DwaveSixLevel,
        })
    }

    /// The master seed; only call after `validate`.
    pub fn master_seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut err = |path: &str, message: String| errs.push(FieldError { path: path.into(), message });
        if self.seed.is_none() {
            err("seed", "a master seed is required (set `seed` or pass --seed)".into());
        }
        if self.lattice.sizes.is_empty() {
            err("lattice.sizes", "must list at least one size".into());
        }
        for (k, &l) in self.lattice.sizes.iter().enumerate() {
            if !(1..=16).contains(&l) {
                err(&format!("lattice.sizes[{k}]"), format!("L = {l} outside 1..=16"));
            }
        }
        if self.disorder.instances == 0 {
            err("disorder.instances", "must be at least 1".into());
        }
        let finite_positive = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x > 0.0);
        match self.mode {
            Mode::Qmc => {
                if self.grid.betas.is_empty() {
                    err("grid.betas", "must be non-empty in qmc mode".into());
                } else if !finite_positive(&self.grid.betas) {
                    err("grid.betas", "values must be positive".into());
                }
                if self.grid.gammas.is_empty() {
                    err("grid.gammas", "must be non-empty in qmc mode".into());
                } else if !finite_positive(&self.grid.gammas) {
                    err("grid.gammas", "values must be positive".into());
                }
                if !self.grid.s_stars.is_empty() {
                    err("grid.s_stars", "only used in device-sim mode".into());
                }
                if let Err(e) = self.qmc.chain_params().validate() {
                    err("qmc", e.to_string());
                }
            }
            Mode::DeviceSim => {
                if self.grid.s_stars.is_empty() {
                    err("grid.s_stars", "must be non-empty in device-sim mode".into());
                }
                for (k, s) in self.grid.s_stars.iter().enumerate() {
                    if !(*s > 0.0 && *s < 1.0) {
                        err(&format!("grid.s_stars[{k}]"), format!("{s} outside (0, 1)"));
                    }
                }
                if !self.grid.betas.is_empty() || !self.grid.gammas.is_empty() {
                    err("grid", "betas/gammas are only used in qmc mode".into());
                }
                let d = &self.device;
                if d.n_rep < 2 {
                    err("device.n_rep", "need at least 2 repetitions".into());
                }
                if let Some(q) = d.quench {
                    if !(0.0..=1.0).contains(&q) {
                        err("device.quench", format!("{q} outside [0, 1]"));
                    }
                }
                if !(d.bias_scale >= 0.0) {
                    err("device.bias_scale", "must be non-negative".into());
                }
                if !(d.t_phys > 0.0) {
                    err("device.t_phys", "must be positive".into());
                }
                if !(d.field_max > 0.0) {
                    err("device.field_max", "must be positive".into());
                }
                if d.field_points == 0 {
                    err("device.field_points", "must be at least 1".into());
                }
                if d.fit_degree % 2 == 0 || d.fit_degree > 2 * d.field_points {
                    err(
                        "device.fit_degree",
                        format!("must be odd and at most 2 * field_points = {}", 2 * d.field_points),
                    );
                }
                if let Err(e) = self.calibration.params().validate() {
                    err("calibration", e.to_string());
                }
                if !(self.calibration.s_star > 0.0 && self.calibration.s_star < 1.0) {
                    err("calibration.s_star", "must lie in (0, 1)".into());
                }
            }
        }
        let a = &self.analysis;
        if a.bins < 3 {
            err("analysis.bins", "need at least 3 bins".into());
        }
        if !(a.z_step > 0.0 && a.z_min <= a.z_max) {
            err("analysis.z_step", "need z_step > 0 and z_min <= z_max".into());
        }
        if !(a.nu_range[0] > 0.0 && a.nu_range[0] < a.nu_range[1]) {
            err("analysis.nu_range", "need 0 < lower < upper".into());
        }
        for (k, r) in self.recipes.iter().enumerate() {
            match recipes::find(r) {
                None => err(&format!("recipes[{k}]"), format!("unknown recipe `{r}`")),
                Some(recipe) if recipe.mode != self.mode => {
                    err(&format!("recipes[{k}]"), format!("recipe `{r}` needs mode {:?}", recipe.mode))
                }
                _ => {}
            }
        }
        errs
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
