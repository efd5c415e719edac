//! The TOML run configuration. Every table is optional; command-line flags
//! override whatever the file sets.
//!
//! ```toml
//! [test]
//! select = "bic"
//! k_max = 6
//! b = 500
//! seed = 7
//!
//! [test.em]
//! n_restarts = 20
//!
//! [power.grid]
//! designs = ["K3_P10"]
//! n = [100]
//! sigma = [2.4]
//! delta = [0.0, 0.5, 1.0]
//! k_fit = [3, "bic"]
//!
//! [power.settings]
//! reps = 200
//! ```

use std::path::Path;

use mvi_core::coupling::EgOptions;
use mvi_core::mixture::{select_k, fit_mixture, CovarianceStructure, Criterion, DataView, EmOptions, MixtureFit};
use mvi_core::simulate::{MeanCatalog, NoiseFamily, PowerGrid, PowerSettings};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub test: TestConfig,
    pub fit: FitConfig,
    pub simulate: SimulateConfig,
    pub power: PowerConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Fixed,
    Bic,
    Aic,
}

/// How many components to fit in a view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KPolicy {
    pub select: Selection,
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub min_k_two: bool,
}

/// A fit plus the criterion trace when `K` was selected.
pub struct PolicyFit {
    pub fit: MixtureFit,
    pub scores: Vec<(usize, Option<f64>)>,
}

impl KPolicy {
    pub fn fit(&self, view: &DataView, structure: CovarianceStructure, em: &EmOptions) -> Result<PolicyFit> {
        let criterion = match self.select {
            Selection::Fixed => {
                let k = self
                    .k
                    .ok_or_else(|| CliError::Invalid("a fixed number of components needs --k".into()))?;
                return Ok(PolicyFit {
                    fit: fit_mixture(view, k, structure, em)?,
                    scores: Vec::new(),
                });
            }
            Selection::Bic => Criterion::Bic,
            Selection::Aic => Criterion::Aic,
        };
        let sel = select_k(view, self.k_min..=self.k_max, structure, criterion, self.min_k_two, em)?;
        Ok(PolicyFit {
            fit: sel.fit,
            scores: sel.scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub select: Selection,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub min_k_two: bool,
    pub structure: CovarianceStructure,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub add_one: bool,
    pub id_col: bool,
    pub standardize: bool,
    pub impute_mean: bool,
    pub em: EmOptions,
    pub eg: EgOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            select: Selection::Fixed,
            k1: None,
            k2: None,
            k_min: 1,
            k_max: 9,
            min_k_two: false,
            structure: CovarianceStructure::SphericalShared,
            b: 200,
            alpha: 0.05,
            seed: 0,
            add_one: false,
            id_col: false,
            standardize: false,
            impute_mean: false,
            em: EmOptions::default(),
            eg: EgOptions::default(),
        }
    }
}

impl TestConfig {
    pub fn policy(&self, k: Option<usize>) -> KPolicy {
        KPolicy {
            select: self.select,
            k,
            k_min: self.k_min,
            k_max: self.k_max,
            min_k_two: self.min_k_two,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(CliError::Invalid("B must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Invalid("alpha must lie in (0, 1)".into()));
        }
        if self.select == Selection::Fixed && (self.k1.is_none() || self.k2.is_none()) {
            return Err(CliError::Invalid(
                "fixed selection needs --k (or --k1 and --k2); use --select bic to choose K".into(),
            ));
        }
        if self.select != Selection::Fixed && (self.k_min == 0 || self.k_min > self.k_max) {
            return Err(CliError::Invalid(format!("empty K range {}..={}", self.k_min, self.k_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub select: Selection,
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub min_k_two: bool,
    pub structure: CovarianceStructure,
    pub id_col: bool,
    pub standardize: bool,
    pub impute_mean: bool,
    pub em: EmOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        let t = TestConfig::default();
        Self {
            select: t.select,
            k: None,
            k_min: t.k_min,
            k_max: t.k_max,
            min_k_two: t.min_k_two,
            structure: t.structure,
            id_col: false,
            standardize: false,
            impute_mean: false,
            em: t.em,
        }
    }
}

impl FitConfig {
    pub fn policy(&self) -> KPolicy {
        KPolicy {
            select: self.select,
            k: self.k,
            k_min: self.k_min,
            k_max: self.k_max,
            min_k_two: self.min_k_two,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: Option<MeanCatalog>,
    pub n: usize,
    pub sigma: f64,
    pub delta: f64,
    pub seed: u64,
    pub family: NoiseFamily,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            design: None,
            n: 100,
            sigma: 1.0,
            delta: 0.0,
            seed: 0,
            family: NoiseFamily::Spherical,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub grid: Option<PowerGrid>,
    pub settings: PowerSettings,
}
