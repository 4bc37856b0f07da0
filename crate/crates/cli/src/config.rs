//! Experiment configuration documents.

use ahx::flow::TraceOptions;
use ahx::metric::MetricSpec;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A boundary coordinate given either as a number (n = 1) or as a vector.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Point {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Point::Scalar(x) => vec![*x],
            Point::Vector(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceCfg {
    pub y: Point,
    pub eta: Point,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "yes")]
    pub svg: bool,
}

/// Cross-product grid of incoming covectors.
#[derive(Clone, Debug, Deserialize)]
pub struct CovectorGrid {
    pub ys: Vec<Point>,
    pub etas: Vec<Point>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ScatterCfg {
    #[serde(flatten)]
    pub grid: CovectorGrid,
    #[serde(default)]
    pub jacobian: bool,
    #[serde(default = "default_fd")]
    pub fd_step: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Regularized,
    Mellin,
    Both,
}

#[derive(Clone, Debug, Deserialize)]
pub struct LengthCfg {
    #[serde(flatten)]
    pub grid: CovectorGrid,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceCfg {
    /// `[y₋, y₊]` pairs.
    pub pairs: Vec<[Point; 2]>,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
}

/// Scalar field `A ρ^w exp(−(|ρ−ρc|² + |y−yc|²)/(2σ²))` of declared weight `w`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpField {
    pub center: Vec<f64>,
    pub width: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "two")]
    pub weight: i32,
}

#[derive(Clone, Debug, Deserialize)]
pub struct XrayCfg {
    pub field: BumpField,
    #[serde(flatten)]
    pub grid: CovectorGrid,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverCfg {
    pub y0: Point,
    pub directions: Vec<Point>,
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: f64,
    /// Offset used for tangential derivatives.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub fit: bool,
    #[serde(default = "default_kmax")]
    pub k_max: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseCfg {
    pub ys: Vec<f64>,
    pub etas: Vec<f64>,
    #[serde(default)]
    pub t_asym: Option<f64>,
    #[serde(default)]
    pub base_times: Option<Vec<f64>>,
    #[serde(default)]
    pub conjugate_span: Option<f64>,
}

/// Top-level document: a metric, shared integration controls and one section per command.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: MetricSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    pub trace: Option<TraceCfg>,
    pub scatter: Option<ScatterCfg>,
    pub length: Option<LengthCfg>,
    pub distance: Option<DistanceCfg>,
    pub xray: Option<XrayCfg>,
    pub recover: Option<RecoverCfg>,
    pub diagnose: Option<DiagnoseCfg>,
}

fn default_samples() -> usize {
    201
}
fn yes() -> bool {
    true
}
fn default_fd() -> f64 {
    1e-6
}
fn default_method() -> MethodChoice {
    MethodChoice::Regularized
}
fn default_newton_tol() -> f64 {
    1e-11
}
fn one() -> f64 {
    1.0
}
fn two() -> i32 {
    2
}
fn default_step() -> f64 {
    0.05
}
fn default_kmax() -> usize {
    2
}
fn default_tol() -> f64 {
    1e-10
}
fn default_t_max() -> f64 {
    60.0
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates a document; returns it with the SHA-256 of the raw bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String), CliError> {
        let cfg: ExperimentConfig = serde_json::from_slice(bytes).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        let hash = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok((cfg, hash))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        positive("tol", self.tol)?;
        positive("t_max", self.t_max)?;
        if let Some(t) = &self.trace {
            if t.samples < 2 {
                return Err(CliError::Config("trace.samples must be at least 2".into()));
            }
        }
        if let Some(s) = &self.scatter {
            positive("scatter.fd_step", s.fd_step)?;
        }
        if let Some(d) = &self.distance {
            positive("distance.newton_tol", d.newton_tol)?;
        }
        if let Some(x) = &self.xray {
            positive("xray.field.width", x.field.width)?;
        }
        if let Some(r) = &self.recover {
            if let Some(ds) = &r.deltas {
                for &d in ds {
                    positive("recover.deltas", d)?;
                }
            }
            if !(r.noise >= 0.0) {
                return Err(CliError::Config("recover.noise must be non-negative".into()));
            }
            positive("recover.step", r.step)?;
        }
        if let Some(d) = &self.diagnose {
            if let Some(t) = d.t_asym {
                positive("diagnose.t_asym", t)?;
            }
        }
        Ok(())
    }

    pub fn trace_options(&self) -> TraceOptions<f64> {
        TraceOptions { t_max: self.t_max, ..TraceOptions::with_tol(self.tol) }
    }
}
