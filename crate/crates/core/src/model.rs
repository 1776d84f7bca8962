//! Shared data model: datasets, loss functions and effect-function links.
//!
//! Every estimator in the crate minimizes a weighted loss `Σ πᵢ L(Yᵢ − g(Tᵢ; β))`.
//! This module owns `L` (through [`LossSpec`]) and `g` (through [`LinkSpec`]),
//! together with their pointwise derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed sample `{Yᵢ, Tᵢ, Xᵢ}`, i = 1..N.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcomes: Vec<f64>,
    treatments: Vec<f64>,
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, rejecting mismatched lengths and non-finite entries.
    ///
    /// Covariate columns are named `x1..xr`.
    pub fn new(outcomes: Vec<f64>, treatments: Vec<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        let names = (1..=covariates.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(outcomes, treatments, covariates, names)
    }

    pub fn with_names(
        outcomes: Vec<f64>,
        treatments: Vec<f64>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
        }
        if treatments.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {} outcomes, {} treatments, {} covariate rows",
                n,
                treatments.len(),
                covariates.nrows()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if let Some(i) = outcomes.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite outcome at row {i}")));
        }
        if let Some(i) = treatments.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite treatment at row {i}")));
        }
        for j in 0..covariates.ncols() {
            if let Some(i) = covariates.column(j).iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite covariate '{}' at row {i}",
                    covariate_names[j]
                )));
            }
        }
        Ok(Self { outcomes, treatments, covariates, covariate_names })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of covariates `r`.
    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[f64] {
        &self.treatments
    }

    /// N×r covariate matrix.
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Copy of this dataset with every outcome replaced.
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        Self::with_names(
            outcomes,
            self.treatments.clone(),
            self.covariates.clone(),
            self.covariate_names.clone(),
        )
    }
}

/// Loss function `L(v)` applied to residuals `v = Y − g(T; β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `v²`: mean effects.
    SquaredError,
    /// `v(τ − 1{v ≤ 0})`: quantile effects.
    Check { tau: f64 },
    /// `v²|τ − 1{v ≤ 0}|`: expectile effects.
    AsymmetricSquared { tau: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::SquaredError => Ok(()),
            LossSpec::Check { tau } | LossSpec::AsymmetricSquared { tau } => {
                if tau > 0.0 && tau < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("loss level tau must lie in (0,1), got {tau}")))
                }
            }
        }
    }

    /// True when `L` is twice differentiable almost everywhere with a
    /// bounded second derivative (squared and expectile losses).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, LossSpec::Check { .. })
    }

    pub fn value(&self, v: f64) -> f64 {
        loss_value(*self, v)
    }

    pub fn derivative(&self, v: f64) -> f64 {
        loss_subderivative(*self, v)
    }

    pub fn second_derivative(&self, v: f64) -> f64 {
        loss_second_derivative(*self, v)
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossSpec::SquaredError => write!(f, "mean"),
            LossSpec::Check { tau } => write!(f, "quantile:{tau}"),
            LossSpec::AsymmetricSquared { tau } => write!(f, "expectile:{tau}"),
        }
    }
}

#[inline]
fn below_or_at_zero(v: f64) -> f64 {
    if v <= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn loss_value(spec: LossSpec, v: f64) -> f64 {
    match spec {
        LossSpec::SquaredError => v * v,
        LossSpec::Check { tau } => v * (tau - below_or_at_zero(v)),
        LossSpec::AsymmetricSquared { tau } => v * v * (tau - below_or_at_zero(v)).abs(),
    }
}

/// Almost-everywhere derivative `L′(v)`.
///
/// At the kink of the check loss the indicator convention `1{0 ≤ 0} = 1`
/// applies, so `L′(0) = τ − 1`.
pub fn loss_subderivative(spec: LossSpec, v: f64) -> f64 {
    match spec {
        LossSpec::SquaredError => 2.0 * v,
        LossSpec::Check { tau } => tau - below_or_at_zero(v),
        LossSpec::AsymmetricSquared { tau } => 2.0 * v * (tau - below_or_at_zero(v)).abs(),
    }
}

/// `L″(v)`; zero almost everywhere for the check loss.
pub fn loss_second_derivative(spec: LossSpec, v: f64) -> f64 {
    match spec {
        LossSpec::SquaredError => 2.0,
        LossSpec::Check { .. } => 0.0,
        LossSpec::AsymmetricSquared { tau } => 2.0 * (tau - below_or_at_zero(v)).abs(),
    }
}

/// Effect function `g(t; β)`. Both variants are linear in `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkSpec {
    /// `β₀ + β₁t + … + β_d t^d`.
    Polynomial { degree: usize },
    /// `Σⱼ βⱼ 1{t = levelⱼ}`.
    Indicator { levels: Vec<f64> },
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LinkSpec::Polynomial { .. } => Ok(()),
            LinkSpec::Indicator { levels } => {
                if levels.is_empty() {
                    return Err(Error::InvalidInput("indicator link needs at least one level".into()));
                }
                if levels.iter().any(|l| !l.is_finite()) {
                    return Err(Error::InvalidInput("indicator levels must be finite".into()));
                }
                for (a, la) in levels.iter().enumerate() {
                    if levels[a + 1..].contains(la) {
                        return Err(Error::InvalidInput(format!("duplicate indicator level {la}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Number of coefficients `p`.
    pub fn n_coefficients(&self) -> usize {
        match self {
            LinkSpec::Polynomial { degree } => degree + 1,
            LinkSpec::Indicator { levels } => levels.len(),
        }
    }

    pub fn eval(&self, t: f64, beta: &[f64]) -> Result<f64> {
        link_eval(self, t, beta)
    }

    pub fn gradient(&self, t: f64) -> Result<DVector<f64>> {
        link_gradient(self, t)
    }

    /// N×p matrix whose rows are `m(Tᵢ)ᵀ`.
    pub fn design(&self, treatments: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.n_coefficients();
        let mut out = DMatrix::zeros(treatments.len(), p);
        for (i, &t) in treatments.iter().enumerate() {
            let m = link_gradient(self, t)?;
            out.row_mut(i).copy_from(&m.transpose());
        }
        Ok(out)
    }
}

impl std::fmt::Display for LinkSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkSpec::Polynomial { degree } => write!(f, "poly:{degree}"),
            LinkSpec::Indicator { levels } => {
                let joined: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
                write!(f, "levels:{}", joined.join(","))
            }
        }
    }
}

pub fn link_eval(spec: &LinkSpec, t: f64, beta: &[f64]) -> Result<f64> {
    let p = spec.n_coefficients();
    if beta.len() != p {
        return Err(Error::InvalidInput(format!("beta has length {}, link needs {p}", beta.len())));
    }
    let m = link_gradient(spec, t)?;
    Ok(m.iter().zip(beta).map(|(a, b)| a * b).sum())
}

/// `m(t) = ∇β g(t; β)`, independent of `β` for both supported links.
pub fn link_gradient(spec: &LinkSpec, t: f64) -> Result<DVector<f64>> {
    match spec {
        LinkSpec::Polynomial { degree } => {
            let mut m = DVector::zeros(degree + 1);
            let mut power = 1.0;
            for k in 0..=*degree {
                m[k] = power;
                power *= t;
            }
            Ok(m)
        }
        LinkSpec::Indicator { levels } => {
            let j = levels.iter().position(|&l| l == t).ok_or_else(|| {
                Error::InvalidInput(format!("treatment value {t} is not one of the indicator levels"))
            })?;
            let mut m = DVector::zeros(levels.len());
            m[j] = 1.0;
            Ok(m)
        }
    }
}
