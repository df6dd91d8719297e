use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hjb_core::model::{builtin_model, BuiltinModel, CatalogOptions, ConditionBounds, DomainBox, ModelSpec};
use hjb_core::montecarlo::SimConfig;
use hjb_core::pde::{Axis, Grid, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Version stamped into every JSON file this crate writes and required of configs.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Allow catalog entries outside the checked envelope.
    #[serde(default)]
    pub unchecked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per state axis, log-prices first.
    pub nodes: Vec<usize>,
    pub time_steps: usize,
    /// `[lower, upper]` per axis; the default box is centred on `z0`.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub t0: f64,
    pub z0: Vec<f64>,
    pub w0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsConfig {
    pub samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainBox>,
    pub bounds: ConditionBounds,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig { samples: 2000, seed: 0, domain: None, bounds: ConditionBounds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub monte_carlo: SimConfig,
    pub point: PointConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoffs: Option<Vec<f64>>,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Parses and validates; every error is a usage error.
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let model = self.model()?;
        let grid = self.grid(&model)?;
        grid.check_point(&self.point.z0).map_err(usage)?;
        self.solver.validate().map_err(usage)?;
        self.monte_carlo.validate().map_err(usage)?;
        let t0 = self.point.t0;
        if !(0.0..model.horizon()).contains(&t0) {
            return Err(CliError::Usage(format!("t0 = {t0} must lie in [0, {})", model.horizon())));
        }
        if !(self.point.w0 > 0.0 && self.point.w0.is_finite()) {
            return Err(CliError::Usage(format!("w0 must be positive, got {}", self.point.w0)));
        }
        if let Some(radii) = &self.cutoffs {
            if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                return Err(CliError::Usage("cutoff radii must be positive".into()));
            }
            if radii.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::Usage("cutoff radii must be strictly ascending".into()));
            }
        }
        if self.conditions.samples == 0 {
            return Err(CliError::Usage("condition checks need at least one sample".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let kind: BuiltinModel = self.model.name.parse().map_err(usage)?;
        let options = CatalogOptions { unchecked: self.model.unchecked };
        builtin_model(kind, &self.model.params, options).map_err(usage)
    }

    pub fn grid(&self, model: &ModelSpec) -> Result<Grid, CliError> {
        let spec = &self.grid;
        match &spec.bounds {
            None => Grid::default_for(model, &self.point.z0, &spec.nodes, spec.time_steps).map_err(usage),
            Some(bounds) => {
                let dim = model.dims().state();
                if bounds.len() != dim || spec.nodes.len() != dim {
                    return Err(CliError::Usage(format!(
                        "grid needs {dim} axes, got {} bounds and {} node counts",
                        bounds.len(),
                        spec.nodes.len()
                    )));
                }
                let axes = bounds
                    .iter()
                    .zip(&spec.nodes)
                    .map(|(b, &nodes)| Axis { lower: b[0], upper: b[1], nodes })
                    .collect();
                Grid::new(model.horizon(), spec.time_steps, axes).map_err(usage)
            }
        }
    }

    /// Applies `--out` and `--seed` overrides.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seed: Option<u64>) -> RunConfig {
        if let Some(out) = out {
            self.output_dir = out;
        }
        if let Some(seed) = seed {
            self.monte_carlo.seed = seed;
        }
        self
    }

    /// Sets a sweep parameter: `cutoff` (a radius, or any non-positive value
    /// for none) or a model parameter.
    pub fn with_parameter(&self, axis: &str, value: f64) -> Result<RunConfig, CliError> {
        let mut cfg = self.clone();
        if axis == "cutoff" {
            cfg.solver.cutoff = (value > 0.0).then_some(value);
        } else {
            cfg.model.params.insert(axis.to_string(), value);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn usage(e: hjb_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}
