//! TOML run configuration shared by every pipeline stage, and the report
//! container that records it alongside each result.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bmu::{BmuConfig, CoefficientPrior};
use crate::discover::PrepareConfig;
use crate::dynamics::{PdeModel, SolverConfig, System};
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::hbi::HbiConfig;
use crate::pesbl::{PesblConfig, SparseModel};
use crate::propagate::{PropagateConfig, Section};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateSettings {
    pub draws: usize,
    pub max_dropped: f64,
    /// Chosen per system when absent.
    pub section: Option<Section>,
}

impl Default for PropagateSettings {
    fn default() -> Self {
        let base = PropagateConfig::default();
        PropagateSettings {
            draws: base.draws,
            max_dropped: base.max_dropped,
            section: None,
        }
    }
}

impl PropagateSettings {
    pub fn config(&self) -> PropagateConfig {
        PropagateConfig {
            draws: self.draws,
            max_dropped: self.max_dropped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    /// Shift magnitude whose exceedance probability is reported.
    pub threshold: f64,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        DiagnoseSettings { threshold: 0.0 }
    }
}

/// Population of systems whose solver arguments are drawn independently from
/// `N(mean, std²)` and whose noise levels are uniform on `[0, max_noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub size: usize,
    /// Defaults to the reference solver arguments.
    pub mean: Option<Vec<f64>>,
    pub std: Vec<f64>,
    pub max_noise: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            size: 0,
            mean: None,
            std: Vec::new(),
            max_noise: 0.5,
        }
    }
}

impl PopulationConfig {
    /// Solver arguments, noise level and noise seed of member `index`.
    pub fn draw(&self, seed: u64, index: usize) -> Result<(Vec<f64>, f64, u64)> {
        let mean = self
            .mean
            .as_ref()
            .ok_or_else(|| Error::Config("population mean is unset".into()))?;
        let mut rng = crate::rng::stream(seed, index as u64 + 1);
        let parameters = mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| crate::stats::normal(&mut rng, *m, s * s))
            .collect();
        let noise = rng.gen::<f64>() * self.max_noise;
        // Reports are TOML, whose integers are signed 64-bit.
        Ok((parameters, noise, u64::from(rng.gen::<u32>())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: System,
    /// Solver arguments of the system (e.g. viscosity); reference values when absent.
    pub parameters: Option<Vec<f64>>,
    pub grid: Option<GridSpec>,
    /// Seed of the measurement noise; sampler seeds live in their own sections.
    pub seed: u64,
    pub noise: Vec<f64>,
    pub out: PathBuf,
    pub solver: Option<SolverConfig>,
    pub prepare: Option<PrepareConfig>,
    pub pesbl: PesblConfig,
    pub bmu: BmuConfig,
    pub propagate: PropagateSettings,
    pub diagnose: DiagnoseSettings,
    pub hbi: HbiConfig,
    pub population: PopulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: System::Burgers1d,
            parameters: None,
            grid: None,
            seed: 0,
            noise: vec![0.1],
            out: PathBuf::from("out"),
            solver: None,
            prepare: None,
            pesbl: PesblConfig::default(),
            bmu: BmuConfig::default(),
            propagate: PropagateSettings::default(),
            diagnose: DiagnoseSettings::default(),
            hbi: HbiConfig::default(),
            population: PopulationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("run configuration", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|_| Error::MissingInput(path.display().to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Sets every seeded stage to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.bmu.seed = seed;
        self.hbi.sampler.seed = seed;
        if let Some(p) = &mut self.prepare {
            p.denoiser.seed = seed;
        }
    }

    /// Fills every system-dependent default from the reference scenario and
    /// checks the result.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.system != System::Generic {
            let reference = Scenario::reference(c.system)?;
            c.parameters.get_or_insert(reference.parameters);
            c.grid.get_or_insert(reference.grid);
            c.solver.get_or_insert(reference.solver);
            c.prepare.get_or_insert(reference.prepare);
            if c.propagate.section.is_none() {
                c.propagate.section = Some(default_section(c.system));
            }
            if c.population.mean.is_none() {
                c.population.mean = c.parameters.clone();
            }
        } else {
            c.prepare.get_or_insert_with(PrepareConfig::default);
            c.solver.get_or_insert_with(SolverConfig::default);
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        if [self.seed, self.bmu.seed, self.hbi.sampler.seed]
            .iter()
            .any(|&s| s > i64::MAX as u64)
        {
            return Err(Error::Config(format!("seeds must not exceed {}", i64::MAX)));
        }
        if let Some(l) = self.noise.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!(
                "noise level {l} must be non-negative"
            )));
        }
        self.bmu.validate()?;
        self.hbi.sampler.validate()?;
        let p = &self.population;
        if p.size > 0 {
            let n = p.mean.as_ref().map_or(0, |m| m.len());
            if p.std.len() != n {
                return Err(Error::Config(format!(
                    "population needs one standard deviation per parameter ({n}), got {}",
                    p.std.len()
                )));
            }
            if !(p.max_noise >= 0.0) {
                return Err(Error::Config(
                    "population max_noise must be non-negative".into(),
                ));
            }
        }
        if self.propagate.draws < crate::propagate::MIN_TRAJECTORIES {
            return Err(Error::Config(format!(
                "propagation needs at least {} draws",
                crate::propagate::MIN_TRAJECTORIES
            )));
        }
        Ok(())
    }

    /// The reference scenario with this configuration's overrides applied.
    pub fn scenario(&self) -> Result<Scenario> {
        let c = self.resolved()?;
        let mut s = Scenario::reference(c.system)?;
        s.parameters = c.parameters.expect("resolved");
        s.grid = c.grid.expect("resolved");
        s.solver = c.solver.expect("resolved");
        s.prepare = c.prepare.expect("resolved");
        s.evidence = c.bmu.evidence.clone();
        Ok(s)
    }
}

/// Cross-sections used to judge predictions beyond the data window.
pub fn default_section(system: System) -> Section {
    match system {
        System::Burgers1d => Section::AtX {
            x: -0.6,
            from: 1.0,
            to: 2.0,
        },
        System::Burgers2d => Section::AtT { t: 2.0 },
        _ => Section::AtT { t: 1.6 },
    }
}

/// `sha256:<hex>` of a byte string.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// A stage result together with the configuration and inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report<T> {
    pub kind: String,
    pub version: String,
    /// Input file name (without directory) to content hash.
    pub inputs: BTreeMap<String, String>,
    pub result: T,
    pub config: RunConfig,
}

impl<T: Serialize + DeserializeOwned> Report<T> {
    pub fn new(kind: &str, config: &RunConfig, result: T) -> Self {
        Report {
            kind: kind.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: BTreeMap::new(),
            result,
            config: config.clone(),
        }
    }

    /// Records an input file and its content hash.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|_| Error::MissingInput(path.display().to_string()))?;
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        self.inputs.insert(name, content_hash(&bytes));
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|_| Error::MissingInput(path.display().to_string()))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

/// Serializable digest of a learned sparse model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSummary {
    pub terms: Vec<String>,
    pub positions: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub posterior_std: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted move.
    pub trace: Vec<f64>,
}

impl ModelSummary {
    pub fn of(model: &SparseModel<f64>) -> Self {
        ModelSummary {
            terms: model.names(),
            positions: model.positions.clone(),
            mean: model.mean.clone(),
            std: model.std.clone(),
            posterior_std: model.posterior_std.clone(),
            log_likelihood: model.log_likelihood,
            trace: model.trace.clone(),
        }
    }

    pub fn prior(&self) -> Result<CoefficientPrior> {
        CoefficientPrior::new(self.terms.clone(), self.mean.clone(), self.std.clone())
    }

    /// The learned equation as a solvable model.
    pub fn form(&self) -> Result<PdeModel> {
        let pairs: Vec<(&str, f64)> = self
            .terms
            .iter()
            .map(String::as_str)
            .zip(self.mean.iter().copied())
            .collect();
        PdeModel::from_names(&pairs, System::Generic)
    }
}

/// Result of the learning stage, compared with the reference equation when
/// the system has one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnResult {
    pub model: ModelSummary,
    pub reference_terms: Option<Vec<String>>,
    pub matches_reference: Option<bool>,
}

impl LearnResult {
    pub fn new(model: ModelSummary, system: System) -> Self {
        if system == System::Generic {
            return LearnResult {
                model,
                reference_terms: None,
                matches_reference: None,
            };
        }
        let mut reference: Vec<String> = crate::scenario::truth(system, &[0.0; 2])
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        reference.sort();
        let mut found = model.terms.clone();
        found.sort();
        LearnResult {
            matches_reference: Some(found == reference),
            reference_terms: Some(reference),
            model,
        }
    }
}

/// One generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    /// Path relative to the manifest.
    pub file: String,
    pub noise: f64,
    /// Seed of the measurement noise.
    pub seed: u64,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub system: System,
    pub datasets: Vec<DatasetEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|_| Error::MissingInput(path.display().to_string()))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    /// Dataset paths resolved against the manifest's directory.
    pub fn paths(&self, manifest: &Path) -> Vec<PathBuf> {
        let dir = manifest.parent().unwrap_or(Path::new(""));
        self.datasets.iter().map(|d| dir.join(&d.file)).collect()
    }
}
