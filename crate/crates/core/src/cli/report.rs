//! JSON report layouts. Field order is fixed by declaration order.

use serde::Serialize;

use super::RunConfig;
use crate::balance::WeightSummary;
use crate::inference::{HessianMethod, VarianceMethod};
use crate::model::Dataset;
use crate::pipeline::{BalancedWeights, Estimate, EstimatorConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Reproducibility {
    pub version: &'static str,
    /// Resolved configuration; feeding it back through `--config` (as a
    /// `.json` file) reruns the same computation.
    pub config: RunConfig,
}

impl Reproducibility {
    pub fn new(cfg: &RunConfig) -> Self {
        // The output path is not part of the computation.
        Self { version: env!("CARGO_PKG_VERSION"), config: RunConfig { output: None, ..cfg.clone() } }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceInfo {
    pub method: VarianceMethod,
    pub hessian: Option<HessianMethod>,
    pub condition: f64,
    pub kernel_fallbacks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitInfo {
    pub loss: String,
    pub link: String,
    pub foc_norm: f64,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    pub weights: WeightSummary,
    pub variance: VarianceInfo,
    pub fit: FitInfo,
    pub reproducibility: Reproducibility,
}

impl EstimateReport {
    pub fn new(est: &Estimate, config: &EstimatorConfig, cfg: &RunConfig) -> Self {
        Self {
            n: est.variance.n,
            beta: est.beta.clone(),
            se: est.se.clone(),
            ci_lower: est.ci.iter().map(|c| c.0).collect(),
            ci_upper: est.ci.iter().map(|c| c.1).collect(),
            level: config.level,
            weights: est.weights.solution.summary(),
            variance: VarianceInfo {
                method: est.variance.method,
                hessian: est.variance.hessian,
                condition: est.variance.condition,
                kernel_fallbacks: est.variance.fallbacks,
            },
            fit: FitInfo {
                loss: config.loss.to_string(),
                link: config.link.to_string(),
                foc_norm: est.fit.foc_norm,
                objective: est.fit.objective,
                iterations: est.fit.iterations,
            },
            reproducibility: Reproducibility::new(cfg),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub n: usize,
    pub k1: usize,
    pub k2: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub weights: WeightSummary,
    /// `(1/N) Σ π̂ᵢ u(Tᵢ)v(Xᵢ)ᵀ − ū v̄ᵀ`, one row per treatment basis function.
    pub residual: Vec<Vec<f64>>,
    pub reproducibility: Reproducibility,
}

impl BalanceReport {
    pub fn new(data: &Dataset, weights: &BalancedWeights, cfg: &RunConfig) -> Self {
        let sol = &weights.solution;
        let r = &sol.balance_residual;
        Self {
            n: data.len(),
            k1: r.nrows(),
            k2: r.ncols(),
            objective: sol.objective,
            gradient_norm: sol.gradient_norm,
            weights: sol.summary(),
            residual: r.row_iter().map(|row| row.iter().copied().collect()).collect(),
            reproducibility: Reproducibility::new(cfg),
        }
    }
}
