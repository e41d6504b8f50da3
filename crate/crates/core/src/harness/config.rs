//! Declarative experiment configuration.
//!
//! Configs deserialize from a key-value tree (TOML in the CLI, JSON in
//! sidecars). Unknown keys are rejected everywhere, and each section
//! validates that exactly the parameters of the chosen kind are present.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorId, LossId};
use crate::expfam::FamilyModel;
use crate::jacobian::ProbeKind;
use crate::predictors::{
    DesignMatrix, GridShape, LassoOrthogonal, LinearFilter, NonLocalMeans, Predictor,
};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Noise model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `gaussian`, `gamma`, `poisson`, `binomial` or `negbinomial`.
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<f64>,
}

impl ModelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        ModelSpec { family: "gaussian".into(), sigma: Some(sigma), shape: None, trials: None, failures: None }
    }

    pub fn gamma(shape: f64) -> Self {
        ModelSpec { family: "gamma".into(), sigma: None, shape: Some(shape), trials: None, failures: None }
    }

    pub fn poisson() -> Self {
        ModelSpec { family: "poisson".into(), sigma: None, shape: None, trials: None, failures: None }
    }

    pub fn build(&self, dim: usize) -> Result<FamilyModel> {
        let need = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "family '{}' takes exactly the parameter(s): {what}",
                    self.family
                )))
            }
        };
        match self.family.as_str() {
            "gaussian" => {
                need(
                    self.sigma.is_some()
                        && self.shape.is_none()
                        && self.trials.is_none()
                        && self.failures.is_none(),
                    "sigma",
                )?;
                FamilyModel::gaussian(dim, self.sigma.unwrap())
            }
            "gamma" => {
                need(
                    self.shape.is_some()
                        && self.sigma.is_none()
                        && self.trials.is_none()
                        && self.failures.is_none(),
                    "shape",
                )?;
                FamilyModel::gamma(dim, self.shape.unwrap())
            }
            "poisson" => {
                need(
                    self.sigma.is_none()
                        && self.shape.is_none()
                        && self.trials.is_none()
                        && self.failures.is_none(),
                    "none",
                )?;
                FamilyModel::poisson(dim)
            }
            "binomial" => {
                need(
                    self.trials.is_some()
                        && self.sigma.is_none()
                        && self.shape.is_none()
                        && self.failures.is_none(),
                    "trials",
                )?;
                FamilyModel::binomial(dim, self.trials.unwrap())
            }
            "negbinomial" => {
                need(
                    self.failures.is_some()
                        && self.sigma.is_none()
                        && self.shape.is_none()
                        && self.trials.is_none(),
                    "failures",
                )?;
                FamilyModel::neg_binomial(dim, self.failures.unwrap())
            }
            other => Err(Error::config(format!("unknown family '{other}'"))),
        }
    }
}

/// Clean-signal section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    /// `constant`, `chirp` or `stripes`.
    pub kind: String,
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<f64>,
    /// Shading axis for chirps: `horizontal` or `vertical`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientation: Option<String>,
    /// Chirp fades into a `dark` or `bright` homogeneous region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shade_to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
}

impl SignalSpec {
    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.height, self.width)
    }

    pub fn generate(&self) -> Result<Vec<f64>> {
        use super::synth;
        let shape = self.shape()?;
        match self.kind.as_str() {
            "constant" => {
                let v = self.value.ok_or_else(|| Error::config("constant signal needs 'value'"))?;
                if !(v > 0.0) {
                    return Err(Error::config("constant signal value must be > 0"));
                }
                Ok(vec![v; shape.len()])
            }
            "chirp" => {
                let params = synth::ChirpParams {
                    mu_max: self.mu_max.unwrap_or(8.0),
                    contrast: self.contrast.unwrap_or(0.85),
                    cycles: self.cycles.unwrap_or(6.0),
                    orientation: match self.orientation.as_deref().unwrap_or("horizontal") {
                        "horizontal" => synth::Orientation::Horizontal,
                        "vertical" => synth::Orientation::Vertical,
                        other => {
                            return Err(Error::config(format!("unknown orientation '{other}'")))
                        }
                    },
                    shade_to: match self.shade_to.as_deref().unwrap_or("dark") {
                        "dark" => synth::ShadeTo::Dark,
                        "bright" => synth::ShadeTo::Bright,
                        other => return Err(Error::config(format!("unknown shade_to '{other}'"))),
                    },
                };
                synth::generate_chirp(shape, &params)
            }
            "stripes" => synth::generate_stripes(
                shape,
                self.mu_min.unwrap_or(0.5),
                self.mu_max.unwrap_or(8.0),
                self.period.unwrap_or(4.0),
                self.angle_deg.unwrap_or(30.0),
            ),
            other => Err(Error::config(format!("unknown signal kind '{other}'"))),
        }
    }
}

/// Predictor section; the tuning parameter itself comes from the sweep grid
/// (or `denoise.tuning` for single evaluations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    /// `identity`, `constant_mean`, `linear_filter`, `nonlocal_means`
    /// or `lasso`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<bool>,
    /// `identity` or `hadamard` (lasso only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
}

impl PredictorSpec {
    pub fn design_matrix(&self) -> Result<DesignMatrix> {
        match self.design.as_deref().unwrap_or("hadamard") {
            "identity" => Ok(DesignMatrix::Identity),
            "hadamard" => Ok(DesignMatrix::Hadamard),
            other => Err(Error::config(format!("unknown design '{other}'"))),
        }
    }

    pub fn build(
        &self,
        model: &FamilyModel,
        shape: GridShape,
        tuning: f64,
    ) -> Result<Predictor> {
        match self.kind.as_str() {
            "identity" => Ok(Predictor::Identity),
            "constant_mean" => Ok(Predictor::ConstantMean),
            "linear_filter" => Ok(Predictor::LinearFilter(LinearFilter::gaussian(shape, tuning)?)),
            "nonlocal_means" => Ok(Predictor::NonLocalMeans(NonLocalMeans::with_windows(
                model.clone(),
                shape,
                tuning,
                self.patch_radius.unwrap_or(2),
                self.search_radius.unwrap_or(5),
                self.normalized.unwrap_or(true),
            )?)),
            "lasso" => Ok(Predictor::LassoOrthogonal(LassoOrthogonal::new(
                model.clone(),
                self.design_matrix()?,
                tuning,
            )?)),
            other => Err(Error::config(format!("unknown predictor kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Geometric,
    Linear,
}

/// Sweep section: tuning grid, realization count and which curves to record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid_scale: GridScale,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub realizations: usize,
    pub estimators: Vec<EstimatorId>,
    #[serde(default)]
    pub oracle_losses: Vec<LossId>,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.grid_points == 0 {
            return Err(Error::config("grid needs at least one point"));
        }
        if self.grid_points > 1 && !(self.grid_min < self.grid_max) {
            return Err(Error::config("grid bounds must satisfy min < max"));
        }
        if matches!(self.grid_scale, GridScale::Geometric) && !(self.grid_min > 0.0) {
            return Err(Error::config("geometric grids need min > 0"));
        }
        let n = self.grid_points;
        if n == 1 {
            return Ok(vec![self.grid_min]);
        }
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.grid_scale {
                    GridScale::Geometric => {
                        (self.grid_min.ln() + t * (self.grid_max.ln() - self.grid_min.ln())).exp()
                    }
                    GridScale::Linear => self.grid_min + t * (self.grid_max - self.grid_min),
                }
            })
            .collect();
        if vals.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("grid must be strictly increasing"));
        }
        Ok(vals)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.realizations == 0 {
            return Err(Error::config("realizations must be >= 1"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("at least one estimator is required"));
        }
        Ok(())
    }
}

/// Monte-Carlo probe section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Probe count; defaults per problem dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default = "default_probe_kind")]
    pub kind: ProbeKind,
}

fn default_probe_kind() -> ProbeKind {
    ProbeKind::GaussianProbe
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { count: None, kind: ProbeKind::GaussianProbe }
    }
}

/// Single-evaluation (denoise) section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSpec {
    pub tuning: f64,
}

/// Variable-selection experiment section (Gamma noise over an orthonormal
/// design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoSpec {
    /// Problem size; power of two (Hadamard design).
    pub q: usize,
    /// Gamma shape of the noise.
    pub shape: f64,
    /// Fraction of nonzero coefficients.
    pub sparsity: f64,
    pub amplitude: f64,
    pub realizations: usize,
    pub grid_points: usize,
    /// Lambda grid spans `[lambda_max 10^-decades, lambda_max]`.
    #[serde(default = "default_grid_decades")]
    pub grid_decades: f64,
    pub objectives: Vec<EstimatorId>,
    /// Multiplier on the shape used by the estimators (model
    /// misspecification); 1 means correctly specified.
    #[serde(default = "default_misspecify")]
    pub misspecify: f64,
    /// Baseline added through the constant design column.
    #[serde(default = "default_mu_base")]
    pub mu_base: f64,
    #[serde(default = "default_lasso_probes")]
    pub probes: usize,
}

fn default_grid_decades() -> f64 {
    3.0
}

fn default_misspecify() -> f64 {
    1.0
}

fn default_mu_base() -> f64 {
    1.0
}

fn default_lasso_probes() -> usize {
    16
}

/// Top-level experiment description. Sections beyond `model` are optional;
/// each command validates that the sections it needs are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub probes: ProbeSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoise: Option<DenoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lasso: Option<LassoSpec>,
}

impl ExperimentConfig {
    pub fn check_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(())
    }

    pub fn signal_section(&self) -> Result<&SignalSpec> {
        self.signal.as_ref().ok_or_else(|| Error::config("missing [signal] section"))
    }

    pub fn predictor_section(&self) -> Result<&PredictorSpec> {
        self.predictor.as_ref().ok_or_else(|| Error::config("missing [predictor] section"))
    }

    pub fn sweep_section(&self) -> Result<&SweepSpec> {
        self.sweep.as_ref().ok_or_else(|| Error::config("missing [sweep] section"))
    }

    pub fn lasso_section(&self) -> Result<&LassoSpec> {
        self.lasso.as_ref().ok_or_else(|| Error::config("missing [lasso] section"))
    }
}
