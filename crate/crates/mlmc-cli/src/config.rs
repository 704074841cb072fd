//! Experiment configuration: one TOML document covering the kernel, the
//! level schedule, quadrature, caps, and output layout. Unknown keys are
//! rejected, and every validation error names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mlmc_core::io;
use mlmc_core::kernels::{BoundaryPolicy, KernelFamily, KernelSpec};
use mlmc_core::multilevel::{LevelSchedule, PipelineMode, DEFAULT_COST_SLACK};
use mlmc_core::partition::{Partition, DEFAULT_STATE_CAP};
use mlmc_core::quadrature::{QuadRule, QuadratureSpec};
use mlmc_core::{Error, Result};

/// Full experiment description. Scalar fields precede the tables so the
/// document serializes cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mode")]
    pub mode: PipelineMode,
    #[serde(default = "default_epsilon")]
    pub target_epsilon: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Omitted means the dimension-dependent default rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureConfig>,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default)]
    pub slack: SlackConfig,
}

fn default_mode() -> PipelineMode {
    PipelineMode::QuantumCostModel
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            target_epsilon: default_epsilon(),
            output_dir: default_output_dir(),
            kernel: KernelConfig::default(),
            schedule: ScheduleConfig::default(),
            quadrature: None,
            caps: CapsConfig::default(),
            slack: SlackConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Serializes back to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// A copy with the dimension-dependent quadrature default filled in, so
    /// the printed document shows every effective setting.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.quadrature.is_none() {
            let d = cfg.schedule.dimension()?;
            cfg.quadrature = Some(QuadratureConfig::from_spec(&QuadratureSpec::default_for(d)));
        }
        Ok(cfg)
    }

    /// Field-level validation beyond what parsing enforces.
    pub fn validate(&self) -> Result<()> {
        if !(self.target_epsilon > 0.0 && self.target_epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_epsilon: must lie in (0,1), got {}",
                self.target_epsilon
            )));
        }
        self.kernel.validate()?;
        self.schedule.validate()?;
        if let Some(q) = &self.quadrature {
            q.validate()?;
        }
        self.slack.validate()?;
        Ok(())
    }

    /// The quadrature request, with the dimension-dependent default when the
    /// section is omitted.
    pub fn quad_spec(&self) -> Result<QuadratureSpec> {
        let d = self.schedule.dimension()?;
        match &self.quadrature {
            Some(q) => q.to_spec(),
            None => Ok(QuadratureSpec::default_for(d)),
        }
    }

    /// Builds the kernel named by the `[kernel]` table.
    pub fn build_kernel(&self) -> Result<KernelSpec> {
        self.kernel.build(self.schedule.dimension()?)
    }

    /// Checks every scheduled level against the state cap.
    pub fn check_capacity(&self) -> Result<()> {
        let d = self.schedule.dimension()?;
        for n in self.schedule.resolutions()? {
            Partition::with_cap(n, d, self.caps.states)?;
        }
        Ok(())
    }
}

/// Kernel family names accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    GaussAr1,
    UniformWindow,
    GridDefined,
}

/// Lipschitz bound: an explicit positive number, or `"auto"` for the bound
/// derived from the family parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Fixed(f64),
    Named(String),
}

impl Default for LambdaConfig {
    fn default() -> Self {
        Self::Named("auto".into())
    }
}

/// The `[kernel]` table. Family parameters live in `[kernel.params]`; each
/// family requires exactly its own parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: FamilyName,
    pub boundary: BoundaryPolicy,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub params: KernelParams,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::GaussAr1,
            boundary: BoundaryPolicy::RenormalizeRows,
            lambda: LambdaConfig::default(),
            params: KernelParams {
                a: Some(0.5),
                sigma: Some(0.3),
                ..KernelParams::default()
            },
        }
    }
}

/// Union of the per-family parameters; validation enforces the right subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_json: Option<PathBuf>,
}

impl KernelConfig {
    fn required(&self, name: &str, value: Option<f64>) -> Result<f64> {
        value.ok_or_else(|| {
            Error::InvalidParameter(format!(
                "kernel.params.{name}: required for family {}",
                self.family_name()
            ))
        })
    }

    fn forbid(&self, name: &str, present: bool) -> Result<()> {
        if present {
            return Err(Error::InvalidParameter(format!(
                "kernel.params.{name}: not a parameter of family {}",
                self.family_name()
            )));
        }
        Ok(())
    }

    fn family_name(&self) -> &'static str {
        match self.family {
            FamilyName::GaussAr1 => "gauss-ar1",
            FamilyName::UniformWindow => "uniform-window",
            FamilyName::GridDefined => "grid-defined",
        }
    }

    fn lambda_value(&self) -> Result<Option<f64>> {
        match &self.lambda {
            LambdaConfig::Fixed(v) => {
                if !(*v > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel.lambda: must be positive, got {v}"
                    )));
                }
                Ok(Some(*v))
            }
            LambdaConfig::Named(s) if s == "auto" => Ok(None),
            LambdaConfig::Named(s) => Err(Error::InvalidParameter(format!(
                "kernel.lambda: expected a positive number or \"auto\", got {s:?}"
            ))),
        }
    }

    /// Validation that needs no file access.
    pub fn validate(&self) -> Result<()> {
        self.lambda_value()?;
        match self.family {
            FamilyName::GaussAr1 => {
                self.forbid("w", self.params.w.is_some())?;
                self.forbid("matrix_csv", self.params.matrix_csv.is_some())?;
                self.forbid("matrix_json", self.params.matrix_json.is_some())?;
                self.required("a", self.params.a)?;
                self.required("sigma", self.params.sigma)?;
            }
            FamilyName::UniformWindow => {
                self.forbid("a", self.params.a.is_some())?;
                self.forbid("sigma", self.params.sigma.is_some())?;
                self.forbid("matrix_csv", self.params.matrix_csv.is_some())?;
                self.forbid("matrix_json", self.params.matrix_json.is_some())?;
                self.required("w", self.params.w)?;
            }
            FamilyName::GridDefined => {
                self.forbid("a", self.params.a.is_some())?;
                self.forbid("sigma", self.params.sigma.is_some())?;
                self.forbid("w", self.params.w.is_some())?;
                if self.params.matrix_csv.is_none() || self.params.matrix_json.is_none() {
                    return Err(Error::InvalidParameter(
                        "kernel.params.matrix_csv and kernel.params.matrix_json: \
                         required for family grid-defined"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the kernel, loading the matrix dump for grid-defined families.
    pub fn build(&self, dim: u32) -> Result<KernelSpec> {
        self.validate()?;
        let family = match self.family {
            FamilyName::GaussAr1 => KernelFamily::GaussAr1 {
                a: self.params.a.unwrap(),
                sigma: self.params.sigma.unwrap(),
            },
            FamilyName::UniformWindow => KernelFamily::UniformWindow {
                w: self.params.w.unwrap(),
            },
            FamilyName::GridDefined => {
                let matrix = io::read_matrix(
                    self.params.matrix_csv.as_ref().unwrap(),
                    self.params.matrix_json.as_ref().unwrap(),
                )?;
                KernelFamily::GridDefined { matrix }
            }
        };
        match self.lambda_value()? {
            Some(lambda) => KernelSpec::with_lambda(family, self.boundary, dim, lambda),
            None => KernelSpec::new(family, self.boundary, dim),
        }
    }
}

/// The `[schedule]` table: coarsest and finest mesh widths as dyadic
/// fractions, plus the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub h_max: String,
    pub h_min: String,
    pub d: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { h_max: "1/2".into(), h_min: "1/16".into(), d: 1 }
    }
}

fn parse_h(text: &str, field: &str) -> Result<u32> {
    let (num, den) = match text.split_once('/') {
        None => (text.trim(), "1"),
        Some((n, d)) => (n.trim(), d.trim()),
    };
    let bad = |detail: &str| {
        Error::InvalidParameter(format!("{field}: {detail}, got {text:?}"))
    };
    let num: u64 = num.parse().map_err(|_| bad("expected a fraction like 1/8"))?;
    let den: u64 = den.parse().map_err(|_| bad("expected a fraction like 1/8"))?;
    if num == 0 || den == 0 {
        return Err(bad("numerator and denominator must be positive"));
    }
    if den % num != 0 {
        return Err(bad("mesh width must be 1 over a power of two"));
    }
    let n = den / num;
    if !n.is_power_of_two() || n > u64::from(u32::MAX) {
        return Err(bad("mesh width must be 1 over a power of two"));
    }
    Ok(n as u32)
}

impl ScheduleConfig {
    pub fn dimension(&self) -> Result<u32> {
        if self.d == 0 {
            return Err(Error::InvalidParameter(
                "schedule.d: dimension must be positive".into(),
            ));
        }
        Ok(self.d)
    }

    /// Doubling ladder of resolutions, coarsest first. A single level is
    /// allowed here; the pipeline's schedule is stricter.
    pub fn resolutions(&self) -> Result<Vec<u32>> {
        self.dimension()?;
        let coarsest = parse_h(&self.h_max, "schedule.h_max")?;
        let finest = parse_h(&self.h_min, "schedule.h_min")?;
        if finest < coarsest {
            return Err(Error::InvalidParameter(format!(
                "schedule.h_min: must be at most h_max, got {} > {}",
                self.h_min, self.h_max
            )));
        }
        let mut out = Vec::new();
        let mut n = coarsest;
        while n < finest {
            out.push(n);
            n *= 2;
        }
        out.push(finest);
        Ok(out)
    }

    /// The multilevel schedule; requires at least one halving.
    pub fn schedule(&self) -> Result<LevelSchedule> {
        let resolutions = self.resolutions()?;
        let coarsest = resolutions[0];
        let finest = *resolutions.last().unwrap();
        if coarsest == finest {
            return Err(Error::Schedule(format!(
                "schedule.h_min: the pipeline needs at least two levels, \
                 got h_max = h_min = {}",
                self.h_min
            )));
        }
        LevelSchedule::new(coarsest, finest, self.d)
    }

    fn validate(&self) -> Result<()> {
        self.resolutions().map(|_| ())
    }
}

/// Quadrature rule names accepted in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    GaussLegendre,
    MonteCarlo,
}

/// The `[quadrature]` table. `points` belongs to gauss-legendre, `samples`
/// to monte-carlo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub rule: RuleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u32>,
    #[serde(default)]
    pub subdivide: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl QuadratureConfig {
    pub fn to_spec(&self) -> Result<QuadratureSpec> {
        let rule = match self.rule {
            RuleName::GaussLegendre => {
                if self.samples.is_some() {
                    return Err(Error::InvalidParameter(
                        "quadrature.samples: not a parameter of rule gauss-legendre".into(),
                    ));
                }
                let points = self.points.ok_or_else(|| {
                    Error::InvalidParameter(
                        "quadrature.points: required for rule gauss-legendre".into(),
                    )
                })?;
                QuadRule::GaussLegendre { points }
            }
            RuleName::MonteCarlo => {
                if self.points.is_some() {
                    return Err(Error::InvalidParameter(
                        "quadrature.points: not a parameter of rule monte-carlo".into(),
                    ));
                }
                let samples = self.samples.ok_or_else(|| {
                    Error::InvalidParameter(
                        "quadrature.samples: required for rule monte-carlo".into(),
                    )
                })?;
                QuadRule::MonteCarlo { samples }
            }
        };
        let spec = QuadratureSpec { rule, subdivide: self.subdivide, seed: self.seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &QuadratureSpec) -> Self {
        let (rule, points, samples) = match spec.rule {
            QuadRule::GaussLegendre { points } => (RuleName::GaussLegendre, Some(points), None),
            QuadRule::MonteCarlo { samples } => (RuleName::MonteCarlo, None, Some(samples)),
        };
        Self { rule, points, samples, subdivide: spec.subdivide, seed: spec.seed }
    }

    fn validate(&self) -> Result<()> {
        self.to_spec().map(|_| ())
    }
}

/// The `[caps]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsConfig {
    /// Largest admissible state count per level.
    #[serde(default = "default_state_cap")]
    pub states: u64,
}

fn default_state_cap() -> u64 {
    DEFAULT_STATE_CAP
}

impl Default for CapsConfig {
    fn default() -> Self {
        Self { states: DEFAULT_STATE_CAP }
    }
}

/// The `[slack]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackConfig {
    /// Multiplicative slack on the geometric total-cost bound.
    #[serde(default = "default_cost_slack")]
    pub cost: f64,
}

fn default_cost_slack() -> f64 {
    DEFAULT_COST_SLACK
}

impl Default for SlackConfig {
    fn default() -> Self {
        Self { cost: DEFAULT_COST_SLACK }
    }
}

impl SlackConfig {
    fn validate(&self) -> Result<()> {
        if !(self.cost >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "slack.cost: must be nonnegative, got {}",
                self.cost
            )));
        }
        Ok(())
    }
}
