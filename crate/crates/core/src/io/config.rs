use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ObservationSet, PhysicalConstants};
use crate::dynamics::{ThicknessSolver, DEFAULT_H_MAX};
use crate::error::{Error, Result};
use crate::gp::DEFAULT_MEAN_FLOOR;
use crate::inference::{ChainConfig, PriorSpec};
use crate::simulation::{StudySettings, TruthSource, TRUE_A};
use crate::smoothing::SmoothingConfig;

use super::read_series_csv;

/// Input series files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub thickness: PathBuf,
    pub velocity: PathBuf,
    pub elevation: PathBuf,
    pub accumulation: PathBuf,
    pub thinning: PathBuf,
    /// Width candidates by name.
    #[serde(default)]
    pub widths: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to the furthest input location.
    pub domain_length: Option<f64>,
    pub quad_spacing: f64,
    /// Spacing of prediction locations (from one spacing past the divide).
    pub prediction_spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            domain_length: None,
            quad_spacing: 1000.0,
            prediction_spacing: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub rho: f64,
    pub g: f64,
    pub h_max: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        let c = PhysicalConstants::default();
        ConstantsConfig {
            rho: c.rho,
            g: c.g,
            h_max: DEFAULT_H_MAX,
        }
    }
}

impl ConstantsConfig {
    pub fn solver(&self) -> Result<ThicknessSolver> {
        ThicknessSolver::new(PhysicalConstants::new(self.rho, self.g)?, self.h_max)
    }
}

/// Root choice by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RootRule {
    #[default]
    Continuity,
    MaxRealPositive,
    /// Nearest to observed thickness (naive inversion only).
    NearestObserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Matérn range (m).
    pub phi: f64,
    /// Flux through the divide (m³/yr).
    pub c0: f64,
    /// Plug-in width candidate for the width mean (`narrowest` or a name).
    pub width: String,
    pub width_floor: f64,
    pub root_selection: RootRule,
    /// Rheologic coefficients swept by `naive`.
    pub naive_a: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            phi: 40_000.0,
            c0: 0.0,
            width: "narrowest".into(),
            width_floor: DEFAULT_MEAN_FLOOR,
            root_selection: RootRule::Continuity,
            naive_a: vec![0.0, 1e-18, 1e-17, 5e-17, 1e-16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub truth: TruthSource,
    pub n_train: Vec<usize>,
    pub noise_sd: Vec<f64>,
    pub true_a: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            truth: TruthSource::Builtin,
            n_train: vec![5, 10, 25],
            noise_sd: vec![10.0, 50.0, 100.0],
            true_a: TRUE_A,
        }
    }
}

/// Everything a command needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub inputs: Option<InputPaths>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Omitted: defaults with h0 centred on the first thickness observation.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config plus the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: Vec<u8>,
    pub path: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, parses, resolves paths and checks that referenced files exist.
    pub fn load(path: impl AsRef<Path>) -> Result<LoadedConfig> {
        let path = path.as_ref();
        let source = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&source).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        config.check_paths()?;
        Ok(LoadedConfig {
            config,
            source,
            path: path.to_path_buf(),
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        if let Some(inp) = &mut self.inputs {
            for p in [
                &mut inp.thickness,
                &mut inp.velocity,
                &mut inp.elevation,
                &mut inp.accumulation,
                &mut inp.thinning,
            ] {
                resolve(base, p);
            }
            for p in inp.widths.values_mut() {
                resolve(base, p);
            }
        }
        if let TruthSource::Csv {
            thickness,
            width,
            elevation,
            accumulation,
            thinning,
        } = &mut self.simulation.truth
        {
            for p in [thickness, width, elevation, accumulation, thinning] {
                resolve(base, p);
            }
        }
    }

    fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&PathBuf> = Vec::new();
        if let Some(inp) = &self.inputs {
            paths.extend([&inp.thickness, &inp.velocity, &inp.elevation, &inp.accumulation, &inp.thinning]);
            paths.extend(inp.widths.values());
        }
        if let TruthSource::Csv {
            thickness,
            width,
            elevation,
            accumulation,
            thinning,
        } = &self.simulation.truth
        {
            paths.extend([thickness, width, elevation, accumulation, thinning]);
        }
        match paths.into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(Error::Config(format!("input file {} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn solver(&self) -> Result<ThicknessSolver> {
        self.constants.solver()
    }

    /// Reads every input series; requires an `[inputs]` table.
    pub fn observations(&self) -> Result<ObservationSet> {
        let inp = self
            .inputs
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs an [inputs] table".into()))?;
        let obs = ObservationSet {
            thickness: read_series_csv(&inp.thickness)?,
            velocity: read_series_csv(&inp.velocity)?,
            elevation: read_series_csv(&inp.elevation)?,
            accumulation: read_series_csv(&inp.accumulation)?,
            thinning: read_series_csv(&inp.thinning)?,
            width_candidates: inp
                .widths
                .iter()
                .map(|(n, p)| Ok((n.clone(), read_series_csv(p)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        obs.validate()?;
        Ok(obs)
    }

    /// Prior with the h0 mean taken from the first thickness observation
    /// when no prior is configured.
    pub fn prior_for(&self, h_obs: &[f64]) -> PriorSpec {
        self.prior
            .unwrap_or_else(|| PriorSpec::default_for(h_obs.first().copied().unwrap_or(1000.0)))
    }

    pub fn study_settings(&self) -> Result<StudySettings> {
        Ok(StudySettings {
            phi: self.model.phi,
            c0: self.model.c0,
            width_floor: self.model.width_floor,
            solver: self.solver()?,
            prior: self.prior,
            h0_from_data: true,
        })
    }
}
