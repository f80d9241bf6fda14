use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qudit_ctrl::analysis::{duration_grid, CertificateConfig, ScanMode, DEFAULT_QUADRATURE_INTERVALS};
use qudit_ctrl::model::BasisLabel;
use qudit_ctrl::objective::ObjectiveConfig;
use qudit_ctrl::optimizer::OptimizerConfig;
use qudit_ctrl::problem::ProblemConfig;

/// One experiment, read from a TOML file. Relative paths resolve against the
/// file's directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub device: PathBuf,
    pub hamiltonian: PathBuf,
    /// Overrides the device file's truncation.
    pub levels: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub optimize: OptimizeSettings,
    #[serde(default)]
    pub scan: ScanSettings,
    #[serde(default)]
    pub certify: CertifySettings,
    #[serde(default)]
    pub dyson: DysonSettings,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSettings {
    pub starts: usize,
    /// Start from this schedule instead of a random pulse.
    pub init: Option<PathBuf>,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        OptimizeSettings { starts: 1, init: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    /// ns.
    pub min_duration: f64,
    pub max_duration: f64,
    pub step: f64,
    pub starts: usize,
    pub mode: ScanMode,
    pub chunk: usize,
    pub stop_at_target: bool,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            min_duration: 6.0,
            max_duration: 20.0,
            step: 0.5,
            starts: 100,
            mode: ScanMode::Full,
            chunk: 4,
            stop_at_target: true,
        }
    }
}

impl ScanSettings {
    pub fn durations(&self) -> Vec<f64> {
        duration_grid(self.min_duration, self.max_duration, self.step)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySettings {
    pub schedule: Option<PathBuf>,
    /// Terminal costate. The default is the literal `H psi(T)`.
    pub objective: ObjectiveConfig,
    pub epsilon: f64,
    pub saturation_tol: f64,
}

impl Default for CertifySettings {
    fn default() -> Self {
        let t = CertificateConfig::default();
        CertifySettings {
            schedule: None,
            objective: ObjectiveConfig::unnormalized(),
            epsilon: t.epsilon,
            saturation_tol: t.saturation_tol,
        }
    }
}

impl CertifySettings {
    pub fn thresholds(&self) -> CertificateConfig {
        CertificateConfig {
            epsilon: self.epsilon,
            saturation_tol: self.saturation_tol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DysonSettings {
    pub schedule: Option<PathBuf>,
    pub initial: BasisLabel,
    pub target: BasisLabel,
    pub quadrature_intervals: usize,
}

impl Default for DysonSettings {
    fn default() -> Self {
        DysonSettings {
            schedule: None,
            initial: BasisLabel(vec![0, 1]),
            target: BasisLabel(vec![1, 0]),
            quadrature_intervals: DEFAULT_QUADRATURE_INTERVALS,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.device = base.join(&cfg.device);
        cfg.hamiltonian = base.join(&cfg.hamiltonian);
        cfg.out = base.join(&cfg.out);
        for p in [&mut cfg.optimize.init, &mut cfg.certify.schedule, &mut cfg.dyson.schedule].into_iter().flatten() {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }
}
