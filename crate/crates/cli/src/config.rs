//! Run configuration: one JSON file, then command-line overrides.
//!
//! Relative paths inside the file resolve against the file's directory;
//! relative paths given as flags resolve against the working directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use rrg_core::baseline::BaselineConfig;
use rrg_core::sysid::FaultProfile;

use crate::failure::{io_error, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    /// Mandatory for commands that draw random numbers.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub baseline: BaselineConfig,
    pub identify: IdentifySection,
    pub detect: DetectSection,
    pub sweep: SweepSection,
    pub fx: FxSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub data: Option<PathBuf>,
    pub p: usize,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self { data: None, p: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub data: Option<PathBuf>,
    /// Defaults to `<out>/markov.json`.
    pub markov: Option<PathBuf>,
    /// Defaults to `<out>/gram.json`.
    pub gram: Option<PathBuf>,
    #[serde(rename = "L", alias = "horizon")]
    pub horizon: usize,
    pub alpha: f64,
    /// Known innovation covariance; the identification estimate otherwise.
    pub sigma_e: Option<Vec<Vec<f64>>>,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            data: None,
            markov: None,
            gram: None,
            horizon: 20,
            alpha: 0.005,
            sigma_e: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(rename = "L", alias = "horizons")]
    pub horizons: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub table_snr_db: Vec<f64>,
    pub table_trials: usize,
    pub sequential: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            horizons: vec![5, 10, 20, 40],
            snr_db: vec![-20.0, 0.0, 20.0],
            trials: 20,
            table_snr_db: vec![-20.0, 0.0, 20.0, 40.0],
            table_trials: 200,
            sequential: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FxSection {
    /// Single-pass mode when set.
    pub formats: Option<PathBuf>,
    pub frac: u32,
    /// Format map whose `static_min`/`static_max` entries widen proposals.
    pub static_bounds: Option<PathBuf>,
}

impl Default for FxSection {
    fn default() -> Self {
        Self {
            formats: None,
            frac: 6,
            static_bounds: None,
        }
    }
}

/// Predictor-form plant `(Φ, B̃, C, D, K, Σ_e)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub phi: Vec<Vec<f64>>,
    pub b_tilde: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub sigma_e: Vec<Vec<f64>>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            phi: vec![vec![0.5]],
            b_tilde: vec![vec![1.0]],
            c: vec![vec![1.0]],
            d: vec![vec![2.0]],
            k: vec![vec![0.3]],
            sigma_e: vec![vec![1.0]],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub plant: PlantSection,
    pub id_samples: usize,
    pub samples: usize,
    pub input_sigma: f64,
    pub fault: Option<FaultProfile>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            plant: PlantSection::default(),
            id_samples: 600,
            samples: 1000,
            input_sigma: 1.0,
            fault: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let file = File::open(path).map_err(|e| io_error(path, "open config", e))?;
        let mut cfg: Self = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        if let Some(v) = cfg.schema_version {
            if v != crate::artifacts::SCHEMA_VERSION {
                return Err(Failure::config(format!(
                    "{}: unsupported schema_version {v}",
                    path.display()
                )));
            }
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.out);
        fix(&mut cfg.identify.data);
        fix(&mut cfg.detect.data);
        fix(&mut cfg.detect.markov);
        fix(&mut cfg.detect.gram);
        fix(&mut cfg.fx.formats);
        fix(&mut cfg.fx.static_bounds);
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// The explicit seed, copied into the baseline section.
    pub fn require_seed(&mut self) -> Result<u64, Failure> {
        let seed = self.seed.ok_or_else(|| {
            Failure::config("a seed is required (--seed or \"seed\" in the config)")
        })?;
        self.baseline.seed = seed;
        Ok(seed)
    }
}
