use std::f64::consts::PI;

use pulseopt::arma::ArmaModel;
use pulseopt::composite::CompositeKind;
use pulseopt::control::{NoiseModel, PulseSequence};
use serde::Deserialize;

fn default_theta_q() -> f64 {
    PI
}

fn default_points() -> usize {
    512
}

/// Explicit list of values or an inclusive linear range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Range(r) if r.points == 1 => vec![r.start],
            Grid::Range(r) => (0..r.points)
                .map(|i| r.start + (r.stop - r.start) * i as f64 / (r.points - 1) as f64)
                .collect(),
        }
    }
}

/// Frequency grid: `points` uniform samples on (0, π] unless listed explicitly.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaGrid {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub omegas: Option<Vec<f64>>,
}

impl Default for OmegaGrid {
    fn default() -> Self {
        Self {
            points: default_points(),
            omegas: None,
        }
    }
}

impl OmegaGrid {
    pub fn values(&self) -> Vec<f64> {
        match &self.omegas {
            Some(w) => w.clone(),
            None => (1..=self.points).map(|k| PI * k as f64 / self.points as f64).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub noise: NoiseModel,
    #[serde(default = "default_theta_q")]
    pub theta_q: f64,
    pub n_min: usize,
    pub n_max: usize,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub noise: NoiseModel,
    pub sequence: PulseSequence,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceChoice {
    Optimal,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCase {
    pub label: String,
    pub noise: NoiseModel,
    #[serde(default = "default_theta_q")]
    pub theta_q: f64,
    pub n: Vec<usize>,
    pub sequence: SequenceChoice,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub num_trajectories: usize,
    pub seed: u64,
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub cases: Vec<SimulateCase>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub kind: CompositeKind,
    /// Optional segment count; must match the composite pulse when given.
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub comparisons: Vec<ComparisonSpec>,
    pub a1: Grid,
    pub b1: Grid,
    #[serde(default = "default_theta_q")]
    pub theta_q: f64,
    pub total_power: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseModel {
    pub a1: f64,
    pub b1: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub base_models: Vec<BaseModel>,
    pub sigma_w2: f64,
    pub deviations: Vec<f64>,
    pub samples_per_eps: usize,
    #[serde(default = "default_theta_q")]
    pub theta_q: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub model: ArmaModel,
    #[serde(default)]
    pub grid: OmegaGrid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterFunctionConfig {
    pub sequence: PulseSequence,
    #[serde(default)]
    pub grid: OmegaGrid,
}
