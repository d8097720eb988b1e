//! Reference set-ups of the benchmark systems: grid, true coefficients,
//! data-generation solver and the preprocessing that recovers them.

use std::f64::consts::PI;

use crate::bmu::EvidenceConfig;
use crate::discover::{PrepareConfig, SmootherKind};
use crate::dynamics::{add_noise, simulate, SolverConfig, System};
use crate::error::{Error, Result};
use crate::field::{Boundary, GridSpec};
use crate::propagate::extend_time;
use crate::Field;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: System,
    pub grid: GridSpec,
    /// Arguments of the system's dedicated solver.
    pub parameters: Vec<f64>,
    pub solver: SolverConfig,
    pub prepare: PrepareConfig,
    pub evidence: EvidenceConfig,
}

impl Scenario {
    pub fn reference(system: System) -> Result<Self> {
        match system {
            System::Burgers1d => Ok(Scenario {
                system,
                grid: GridSpec::new_1d((-1.0, 1.0, 256), (0.0, 1.0, 101), Boundary::Dirichlet)?,
                parameters: vec![0.01 / PI],
                // The shock needs a fine computational grid to stay resolved.
                solver: SolverConfig {
                    refine: 8,
                    ..SolverConfig::default()
                },
                prepare: PrepareConfig::default(),
                evidence: EvidenceConfig::default(),
            }),
            System::Kdv => Ok(Scenario {
                system,
                grid: GridSpec::new_1d((-1.0, 1.0, 256), (0.0, 1.0, 101), Boundary::Periodic)?,
                parameters: vec![-1.0, -0.0025],
                solver: SolverConfig::default(),
                prepare: PrepareConfig {
                    smoother: SmootherKind::Fourier,
                    fourier_threshold: 4.0,
                    cutoff: vec![0.1, 0.05],
                    ..PrepareConfig::default()
                },
                evidence: EvidenceConfig::default(),
            }),
            System::Burgers2d => Ok(Scenario {
                system,
                grid: GridSpec::new_2d(
                    (-1.0, 1.0, 64),
                    (-1.0, 1.0, 64),
                    (0.0, 2.0, 51),
                    Boundary::Periodic,
                )?,
                parameters: vec![-1.0, 0.01],
                solver: SolverConfig::default(),
                prepare: PrepareConfig {
                    cutoff: vec![0.15],
                    ..PrepareConfig::default()
                },
                evidence: EvidenceConfig::default(),
            }),
            System::Generic => Err(Error::Config(
                "generic models have no reference scenario".into(),
            )),
        }
    }

    /// Library terms of the true equation and their coefficients.
    pub fn truth(&self) -> Vec<(String, f64)> {
        truth(self.system, &self.parameters)
    }

    pub fn clean(&self) -> Result<Field> {
        simulate(self.system, &self.parameters, &self.grid, &self.solver)
    }

    pub fn noisy(&self, level: f64, seed: u64) -> Result<Field> {
        add_noise(&self.clean()?, level, seed)
    }

    /// Clean solution continued to `t_end` and thinned like the update evidence.
    pub fn extended_evidence(&self, t_end: f64) -> Result<Field> {
        let grid = extend_time(&self.grid, t_end)?;
        let (space, time) = self.evidence.strides(&self.grid);
        simulate(self.system, &self.parameters, &grid, &self.solver)?.subsample(space, time)
    }
}

/// Library terms and coefficients of a benchmark system with the given solver arguments.
pub fn truth(system: System, parameters: &[f64]) -> Vec<(String, f64)> {
    let named = |names: &[&str], values: &[f64]| {
        names
            .iter()
            .zip(values)
            .map(|(n, v)| (n.to_string(), *v))
            .collect()
    };
    match system {
        System::Burgers1d => named(&["uu_x", "u_xx"], &[-1.0, parameters[0]]),
        System::Kdv => named(&["uu_x", "u_xxx"], parameters),
        System::Burgers2d => named(&["(u.grad)u", "lap(u)"], parameters),
        System::Generic => Vec::new(),
    }
}
