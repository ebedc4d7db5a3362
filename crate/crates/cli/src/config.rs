//! Declarative experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use mclt_core::bounds::{BoundId, RateParams};
use mclt_core::kernel::{KernelSpec, RegistryKernel};
use mclt_core::lipschitz::{CoordinateLaw, CoordinateMetric, Functional, LipschitzModel};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ConfigError;

/// Smallest replicate count accepted for rate experiments.
pub const MIN_RATE_REPLICATES: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Rates,
    BoundsTable,
    LemmaSuite,
    Lipschitz,
    TransformsCheck,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Rates => "rates",
            ExperimentKind::BoundsTable => "bounds-table",
            ExperimentKind::LemmaSuite => "lemma-suite",
            ExperimentKind::Lipschitz => "lipschitz",
            ExperimentKind::TransformsCheck => "transforms-check",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    #[default]
    N,
    Epsilon,
}

/// Registry kernel reference: `{"name": "...", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRef {
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Replicates.
    #[serde(default)]
    pub m: usize,
    /// Merged over the kernel parameters.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    /// `Σ η_i / √n`, Rademacher coordinates.
    RademacherAverage,
    /// `max(η_1, η_2)`, fair bits.
    MaxOfTwoBits,
    /// `Σ η_i`, uniform on {0, 1, 2}.
    UniformSum,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Builtin {
        builtin: BuiltinModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    Explicit {
        /// Per-coordinate laws, or one law repeated `n` times via `coordinate`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<CoordinateLaw>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coordinate: Option<CoordinateLaw>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        functional: Functional,
        d1: Vec<CoordinateMetric>,
        d2: Vec<CoordinateMetric>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_p_values")]
    pub p_values: Vec<f64>,
    /// Support sizes are drawn from `2..=max_support`.
    #[serde(default = "default_max_support")]
    pub max_support: usize,
    /// Joint laws use supports of at most `joint_support × joint_support`.
    #[serde(default = "default_max_support")]
    pub joint_support: usize,
    #[serde(default = "default_k_max")]
    pub bernstein_k_max: u32,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            cases: default_cases(),
            s: default_s(),
            t_grid: default_t_grid(),
            p_values: default_p_values(),
            max_support: default_max_support(),
            joint_support: default_max_support(),
            bernstein_k_max: default_k_max(),
        }
    }
}

fn default_cases() -> usize {
    100
}
fn default_s() -> f64 {
    4.0
}
fn default_t_grid() -> Vec<f64> {
    vec![2.25, 2.5, 3.0, 3.5]
}
fn default_p_values() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_max_support() -> usize {
    5
}
fn default_k_max() -> u32 {
    10
}
fn default_rho() -> f64 {
    1.0
}
fn default_p() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_dominance_factor() -> f64 {
    50.0
}
fn default_certify_count() -> usize {
    10_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub grid: Vec<GridPoint>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Rate functionals evaluated at every grid point.
    #[serde(default)]
    pub bounds: Vec<BoundId>,
    #[serde(default)]
    pub abscissa: Abscissa,
    /// Functional for the `d_hat / reference` spread of the rate fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<BoundId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Paths used when exhaustive certification is out of reach.
    #[serde(default = "default_certify_count")]
    pub certify_count: usize,
    /// Parameter records of a bounds table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<RateParams>,
    /// `n` values for the comparison at `ε = n^{-1/3}`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dominance_n: Vec<f64>,
    /// `n` values for the comparison at `ε = sqrt(3/(4n))`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_n: Vec<f64>,
    /// Smallest accepted ratio in the `ε = n^{-1/3}` comparison.
    #[serde(default = "default_dominance_factor")]
    pub dominance_factor: f64,
    #[serde(default)]
    pub lemma: LemmaConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| ConfigError::new("seed is mandatory"))
    }

    /// Kernel spec for grid point `index`: point parameters override the base
    /// parameters, and the point's `n` overrides both.
    pub fn kernel_spec(&self, index: usize) -> Result<KernelSpec, ConfigError> {
        let base = self
            .kernel
            .as_ref()
            .ok_or_else(|| ConfigError::new(format!("{} experiments need a kernel", self.kind)))?;
        let point = &self.grid[index];
        let mut params = base.params.clone();
        params.extend(point.params.clone());
        if let Some(n) = point.n {
            params.insert("n".into(), Value::from(n));
        }
        let value = serde_json::json!({ "name": base.name, "params": params });
        serde_json::from_value(value)
            .map_err(|e| ConfigError::new(format!("grid point {index}: kernel `{}`: {e}", base.name)))
    }

    pub fn build_kernel(&self, index: usize) -> Result<RegistryKernel, ConfigError> {
        let spec = self.kernel_spec(index)?;
        RegistryKernel::from_spec(&spec).map_err(|e| ConfigError::new(format!("grid point {index}: {e}")))
    }

    /// Lipschitz model for grid point `index`, or the bare model when the grid is empty.
    pub fn build_model(&self, index: Option<usize>) -> Result<LipschitzModel, ConfigError> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ConfigError::new("lipschitz experiments need a model"))?;
        let point_n = index.and_then(|i| self.grid[i].n);
        let err = |e: mclt_core::lipschitz::LipschitzError| ConfigError::new(format!("model: {e}"));
        match model {
            ModelConfig::Builtin { builtin, n } => {
                let n = point_n.or(*n);
                let mut m = match builtin {
                    BuiltinModel::RademacherAverage => {
                        let n = n.ok_or_else(|| ConfigError::new("rademacher_average needs n"))?;
                        LipschitzModel::rademacher_average(n).map_err(err)?
                    }
                    BuiltinModel::MaxOfTwoBits => LipschitzModel::max_of_two_bits(),
                    BuiltinModel::UniformSum => {
                        let n = n.ok_or_else(|| ConfigError::new("uniform_sum needs n"))?;
                        let law = CoordinateLaw::uniform(vec![0.0, 1.0, 2.0]).map_err(ConfigError::new)?;
                        LipschitzModel::new(
                            vec![law; n],
                            Functional::Sum,
                            vec![CoordinateMetric::abs_diff()],
                            vec![CoordinateMetric::abs_diff()],
                            self.rho,
                        )
                        .map_err(err)?
                    }
                };
                m.rho = self.rho;
                Ok(m)
            }
            ModelConfig::Explicit {
                coords,
                coordinate,
                n,
                functional,
                d1,
                d2,
            } => {
                let coords = match (coords, coordinate) {
                    (Some(c), None) => c.clone(),
                    (None, Some(law)) => {
                        let n = point_n
                            .or(*n)
                            .ok_or_else(|| ConfigError::new("a repeated coordinate needs n"))?;
                        vec![law.clone(); n]
                    }
                    _ => return Err(ConfigError::new("give exactly one of `coords` and `coordinate`")),
                };
                LipschitzModel::new(coords, functional.clone(), d1.clone(), d2.clone(), self.rho).map_err(err)
            }
        }
    }

    /// Checks everything that can be checked without running the experiment.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::new(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(ConfigError::new(format!("rho = {} must be positive", self.rho)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(ConfigError::new(format!("p = {} must be at least 1", self.p)));
        }
        match self.kind {
            ExperimentKind::Rates | ExperimentKind::TransformsCheck => {
                if self.grid.is_empty() {
                    return Err(ConfigError::new("grid is empty"));
                }
                for (i, point) in self.grid.iter().enumerate() {
                    let min = if self.kind == ExperimentKind::Rates {
                        MIN_RATE_REPLICATES
                    } else {
                        1
                    };
                    if point.m < min {
                        return Err(ConfigError::new(format!(
                            "grid point {i}: m = {} below the minimum {min}",
                            point.m
                        )));
                    }
                    if self.abscissa == Abscissa::Epsilon && self.kind == ExperimentKind::Rates {
                        match point.epsilon {
                            Some(e) if e > 0.0 => {}
                            _ => {
                                return Err(ConfigError::new(format!(
                                    "grid point {i}: epsilon abscissa needs a positive epsilon"
                                )))
                            }
                        }
                    }
                    self.build_kernel(i)?;
                }
                if self.certify_count == 0 {
                    return Err(ConfigError::new("certify_count must be positive"));
                }
            }
            ExperimentKind::BoundsTable => {
                if self.table.is_empty() && self.dominance_n.is_empty() && self.boundary_n.is_empty() {
                    return Err(ConfigError::new(
                        "bounds table needs `table` records, `dominance_n` or `boundary_n`",
                    ));
                }
                if !self.table.is_empty() && self.bounds.is_empty() {
                    return Err(ConfigError::new("bounds table needs `bounds` ids"));
                }
                if let Some(n) = self.dominance_n.iter().find(|n| !(**n >= 8.0 && n.is_finite())) {
                    return Err(ConfigError::new(format!("dominance n = {n} must be at least 8")));
                }
                if let Some(n) = self.boundary_n.iter().find(|n| !(**n >= 3.0 && n.is_finite())) {
                    return Err(ConfigError::new(format!("boundary n = {n} must be at least 3")));
                }
            }
            ExperimentKind::LemmaSuite => {
                let l = &self.lemma;
                if l.cases == 0 {
                    return Err(ConfigError::new("lemma.cases must be positive"));
                }
                if l.max_support < 2 || l.joint_support < 1 {
                    return Err(ConfigError::new("lemma support sizes too small"));
                }
                if l.p_values.iter().any(|p| !(*p >= 1.0)) {
                    return Err(ConfigError::new("lemma.p_values must be at least 1"));
                }
                if !(3..=20).contains(&l.bernstein_k_max) {
                    return Err(ConfigError::new("lemma.bernstein_k_max must lie in 3..=20"));
                }
                if !(l.s > 2.0) || l.t_grid.iter().any(|t| !(*t >= 2.0 && *t < l.s)) {
                    return Err(ConfigError::new("lemma needs s > 2 and every t in [2, s)"));
                }
            }
            ExperimentKind::Lipschitz => {
                if self.grid.is_empty() {
                    self.build_model(None)?;
                } else {
                    for i in 0..self.grid.len() {
                        self.build_model(Some(i))?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(grid: &str) -> String {
        format!(
            r#"{{"kind":"rates","kernel":{{"name":"three_point","params":{{"b":0.3}}}},
                "grid":{grid},"seed":7,"bounds":["T1","BOLT_A"]}}"#
        )
    }

    #[test]
    fn grid_parameters_override_kernel() {
        let c = ExperimentConfig::from_json(&rates(r#"[{"n":100,"m":1000,"params":{"b":0.2}}]"#)).unwrap();
        c.validate().unwrap();
        assert_eq!(
            c.kernel_spec(0).unwrap(),
            KernelSpec::ThreePoint {
                b: 0.2,
                q: None,
                n: 100
            }
        );
        assert_eq!(c.bounds, vec![BoundId::T1, BoundId::BoltA]);
        assert_eq!((c.rho, c.p, c.alpha), (1.0, 1.0, 0.05));
    }

    #[test]
    fn rejects_invalid_configs() {
        let empty = ExperimentConfig::from_json(&rates("[]")).unwrap();
        assert!(empty.validate().is_err());
        let small = ExperimentConfig::from_json(&rates(r#"[{"n":10,"m":10}]"#)).unwrap();
        assert!(small.validate().is_err());
        let bad_kernel = ExperimentConfig::from_json(&rates(r#"[{"n":10,"m":1000,"params":{"b":-1}}]"#)).unwrap();
        assert!(bad_kernel.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind":"rates","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind":"nope"}"#).is_err());
        let no_seed = ExperimentConfig::from_json(r#"{"kind":"lemma-suite"}"#).unwrap();
        assert!(no_seed.validate().is_err());
    }

    #[test]
    fn lipschitz_models() {
        let c = ExperimentConfig::from_json(
            r#"{"kind":"lipschitz","seed":1,"model":{"builtin":"rademacher_average"},"grid":[{"n":4},{"n":8}]}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.build_model(Some(1)).unwrap().n(), 8);
        let c = ExperimentConfig::from_json(
            r#"{"kind":"lipschitz","seed":1,"model":{
                "coordinate":{"values":[0,1],"probs":[0.5,0.5]},"n":3,
                "functional":{"kind":"max"},"d1":[{"kind":"zero"}],"d2":[{"kind":"abs_diff"}]}}"#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.build_model(None).unwrap().n(), 3);
    }
}
