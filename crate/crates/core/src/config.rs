//! Experiment configuration: TOML schema, validation, and construction of the
//! model objects it describes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envmodel::{ComponentMeasure, FeatureMap, MixtureKernel, DEFAULT_REJECTION_CAP};
use crate::linalg::{self, Mat, Vector};
use crate::linctl::{CostMatrices, LinearSystem};
use crate::lsvi::{InitialDistribution, LearnerConfig, TargetGainIndex, UpdateMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostBlock {
    /// `(Cx − s)ᵀM(Cx − s) + uᵀRu`.
    Tracking { c: Vec<Vec<f64>>, m: Vec<Vec<f64>>, r: Vec<Vec<f64>> },
    Full {
        w: Vec<Vec<f64>>,
        f: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        m: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentSpec {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    PointMass { at: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// `φ_i(s) = f_i(s)/Σ_j f_j(s)` with `f_i(s) = exp(−‖s − ν_i‖²/(2ρ_i²))`.
    NormalizedGaussian { centers: Vec<Vec<f64>>, widths: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub delta_s: f64,
    pub feature: FeatureSpec,
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub enforce_norm_bound: bool,
    #[serde(default = "default_rejection_cap")]
    pub rejection_cap: usize,
}

fn default_rejection_cap() -> usize {
    DEFAULT_REJECTION_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Incremental,
    FullResum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainIndexSpec {
    Successor,
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerBlock {
    pub episodes: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub r_theta: f64,
    pub seed: u64,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
    pub s0_mean: Vec<f64>,
    pub s0_cov: Vec<Vec<f64>>,
    #[serde(default = "default_mode")]
    pub mode: ModeSpec,
    #[serde(default = "default_gain_index")]
    pub gain_index: GainIndexSpec,
}

fn default_mode() -> ModeSpec {
    ModeSpec::Incremental
}

fn default_gain_index() -> GainIndexSpec {
    GainIndexSpec::Successor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XBarSpec {
    Theoretical,
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub crn: bool,
    #[serde(default = "default_gamma_samples")]
    pub gamma_samples: usize,
    #[serde(default = "default_x_bar")]
    pub x_bar: XBarSpec,
    /// Initial states of the learned-vs-optimal comparison rollout; the
    /// learner means when absent.
    #[serde(default)]
    pub comparison_x0: Option<Vec<f64>>,
    #[serde(default)]
    pub comparison_s0: Option<Vec<f64>>,
}

fn default_n_eval() -> usize {
    500
}

fn default_mc_samples() -> usize {
    10_000
}

fn default_delta() -> f64 {
    0.05
}

fn default_gamma_samples() -> usize {
    10_000
}

fn default_x_bar() -> XBarSpec {
    XBarSpec::Theoretical
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        Self {
            n_eval: default_n_eval(),
            mc_samples: default_mc_samples(),
            delta: default_delta(),
            crn: false,
            gamma_samples: default_gamma_samples(),
            x_bar: default_x_bar(),
            comparison_x0: None,
            comparison_s0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub plots: bool,
    /// Log-log axes on the cumulative-regret panel.
    #[serde(default)]
    pub loglog: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_dir(), plots: true, loglog: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    pub cost: CostBlock,
    pub kernel: KernelBlock,
    pub learner: LearnerBlock,
    #[serde(default)]
    pub evaluation: EvaluationBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Model objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sys: LinearSystem,
    pub cost: CostMatrices,
    pub kern: MixtureKernel,
    pub learner: LearnerConfig,
    pub comparison_x0: Vector,
    pub comparison_s0: Vector,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Mat, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(invalid(field, "matrix must be non-empty"));
    }
    let m = linalg::from_rows(rows).ok_or_else(|| invalid(field, "rows have different lengths"))?;
    if !linalg::is_finite(&m) {
        return Err(invalid(field, "non-finite entry"));
    }
    Ok(m)
}

fn vector(field: &str, v: &[f64]) -> Result<Vector, ConfigError> {
    if v.is_empty() {
        return Err(invalid(field, "vector must be non-empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "non-finite entry"));
    }
    Ok(Vector::from_column_slice(v))
}

fn shape(field: &str, m: &Mat, rows: usize, cols: usize) -> Result<(), ConfigError> {
    if m.shape() != (rows, cols) {
        return Err(invalid(field, format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(parse_message(text, &e)))?;
        cfg.instance()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates every block and builds the model objects.
    pub fn instance(&self) -> Result<Instance, ConfigError> {
        let a = matrix("system.a", &self.system.a)?;
        let n = a.nrows();
        shape("system.a", &a, n, n)?;
        let b = matrix("system.b", &self.system.b)?;
        if b.nrows() != n {
            return Err(invalid("system.b", format!("expected {n} rows, got {}", b.nrows())));
        }
        let m_in = b.ncols();
        let sys = LinearSystem::new(a, b).map_err(|e| invalid("system", e.to_string()))?;

        let kb = &self.kernel;
        if !(kb.delta_s.is_finite() && kb.delta_s > 0.0) {
            return Err(invalid("kernel.delta_s", "must be positive"));
        }
        let fm = match &kb.feature {
            FeatureSpec::NormalizedGaussian { centers, widths } => {
                let centers = centers
                    .iter()
                    .enumerate()
                    .map(|(i, c)| vector(&format!("kernel.feature.centers[{i}]"), c))
                    .collect::<Result<Vec<_>, _>>()?;
                FeatureMap::normalized_gaussian(centers, widths.clone(), kb.delta_s)
                    .map_err(|e| invalid("kernel.feature", e.to_string()))?
            }
        }
        .with_norm_bound_enforced(kb.enforce_norm_bound);
        let p = fm.p();
        let components = kb
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let field = format!("kernel.components[{i}]");
                Ok(match c {
                    ComponentSpec::Gaussian { mean, std } => {
                        ComponentMeasure::Gaussian { mean: vector(&field, mean)?, std: vector(&field, std)? }
                    }
                    ComponentSpec::PointMass { at } => ComponentMeasure::PointMass(vector(&field, at)?),
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let kern = MixtureKernel::new(fm, components)
            .map_err(|e| invalid("kernel.components", e.to_string()))?
            .with_rejection_cap(kb.rejection_cap);

        let cost = match &self.cost {
            CostBlock::Tracking { c, m, r } => {
                let c = matrix("cost.c", c)?;
                shape("cost.c", &c, p, n)?;
                let m = matrix("cost.m", m)?;
                shape("cost.m", &m, p, p)?;
                let r = matrix("cost.r", r)?;
                shape("cost.r", &r, m_in, m_in)?;
                CostMatrices::tracking(&c, m, r)
            }
            CostBlock::Full { w, f, d, m, h, r } => {
                let w = matrix("cost.w", w)?;
                shape("cost.w", &w, n, n)?;
                let f = matrix("cost.f", f)?;
                shape("cost.f", &f, n, p)?;
                let d = matrix("cost.d", d)?;
                shape("cost.d", &d, n, m_in)?;
                let m = matrix("cost.m", m)?;
                shape("cost.m", &m, p, p)?;
                let h = matrix("cost.h", h)?;
                shape("cost.h", &h, p, m_in)?;
                let r = matrix("cost.r", r)?;
                shape("cost.r", &r, m_in, m_in)?;
                CostMatrices::new(w, f, d, m, h, r)
            }
        }
        .map_err(|e| invalid("cost", e.to_string()))?;

        let lb = &self.learner;
        if lb.episodes == 0 {
            return Err(invalid("learner.episodes", "must be at least 1"));
        }
        let x0_mean = vector("learner.x0_mean", &lb.x0_mean)?;
        if x0_mean.len() != n {
            return Err(invalid("learner.x0_mean", format!("expected length {n}")));
        }
        let x0_cov = matrix("learner.x0_cov", &lb.x0_cov)?;
        shape("learner.x0_cov", &x0_cov, n, n)?;
        let s0_mean = vector("learner.s0_mean", &lb.s0_mean)?;
        if s0_mean.len() != p {
            return Err(invalid("learner.s0_mean", format!("expected length {p}")));
        }
        let s0_cov = matrix("learner.s0_cov", &lb.s0_cov)?;
        shape("learner.s0_cov", &s0_cov, p, p)?;
        let learner = LearnerConfig {
            lambda: lb.lambda,
            r_theta: lb.r_theta,
            episodes: lb.episodes,
            horizon: lb.horizon,
            x0: InitialDistribution::new(x0_mean.clone(), x0_cov).map_err(|e| invalid("learner.x0_cov", e.to_string()))?,
            s0: InitialDistribution::new(s0_mean.clone(), s0_cov).map_err(|e| invalid("learner.s0_cov", e.to_string()))?,
            seed: lb.seed,
            mode: match lb.mode {
                ModeSpec::Incremental => UpdateMode::Incremental,
                ModeSpec::FullResum => UpdateMode::FullResum,
            },
            gain_index: match lb.gain_index {
                GainIndexSpec::Successor => TargetGainIndex::Successor,
                GainIndexSpec::AsPrinted => TargetGainIndex::AsPrinted,
            },
        };
        learner.validate().map_err(|e| invalid("learner", e.to_string()))?;

        let ev = &self.evaluation;
        if ev.n_eval < crate::oracle::MIN_EVAL {
            return Err(invalid("evaluation.n_eval", format!("must be at least {}", crate::oracle::MIN_EVAL)));
        }
        if ev.mc_samples < crate::envmodel::MIN_MC_SAMPLES {
            return Err(invalid("evaluation.mc_samples", format!("must be at least {}", crate::envmodel::MIN_MC_SAMPLES)));
        }
        if !(ev.delta > 0.0 && ev.delta <= 1.0 / 3.0) {
            return Err(invalid("evaluation.delta", "must lie in (0, 1/3]"));
        }
        if ev.gamma_samples < 100 {
            return Err(invalid("evaluation.gamma_samples", "must be at least 100"));
        }
        let comparison_x0 = match &ev.comparison_x0 {
            Some(v) => vector("evaluation.comparison_x0", v)?,
            None => x0_mean,
        };
        if comparison_x0.len() != n {
            return Err(invalid("evaluation.comparison_x0", format!("expected length {n}")));
        }
        let comparison_s0 = match &ev.comparison_s0 {
            Some(v) => vector("evaluation.comparison_s0", v)?,
            None => s0_mean,
        };
        if comparison_s0.len() != p {
            return Err(invalid("evaluation.comparison_s0", format!("expected length {p}")));
        }
        if !kern.feature().in_ball(&comparison_s0) {
            return Err(invalid("evaluation.comparison_s0", "outside the delta_s ball"));
        }
        Ok(Instance { sys, cost, kern, learner, comparison_x0, comparison_s0 })
    }
}

fn parse_message(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg.to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    ExperimentConfig::from_toml_str(&text)
}
