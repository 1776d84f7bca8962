//! Dose-response curve `θ(t) = E[Y*(t)]` by series regression of `π̂Y` on
//! the treatment basis, and the average effect `ψ = E[Y*(T)]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{kernel_regression, normal_quantile, Conditioning, KernelConfig};
use crate::linalg::inverse_checked;
use crate::model::Dataset;
use crate::sieve::SieveBasis;

/// Number of points in a reported curve grid.
pub const GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub gamma: DVector<f64>,
    pub basis: SieveBasis,
    /// `(1/N) Σ uᵢuᵢᵀ`.
    pub phi: DMatrix<f64>,
    /// `(1/N) Σ uᵢuᵢᵀ ε̂ᵢ²` with `ε̂ᵢ = π̂ᵢYᵢ − γ̂ᵀuᵢ`.
    pub sigma: DMatrix<f64>,
    phi_inv: DMatrix<f64>,
    pub n: usize,
}

/// One row of a reported curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub theta_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Regresses `π̂ᵢYᵢ` on the (orthonormalized) treatment basis.
pub fn fit_curve(data: &Dataset, weights: &[f64], basis: &SieveBasis) -> Result<CurveFit> {
    let n = data.len();
    if weights.len() != n {
        return Err(Error::InvalidInput(format!("{} weights for {n} observations", weights.len())));
    }
    let u = basis.matrix();
    if u.nrows() != n {
        return Err(Error::InvalidInput("treatment basis does not match the dataset".into()));
    }
    let nf = n as f64;
    let target = DVector::from_fn(n, |i, _| weights[i] * data.outcomes()[i]);
    let gram = u.tr_mul(u);
    let rhs = u.tr_mul(&target);
    let gamma = gram.clone().lu().solve(&rhs).ok_or(Error::SingularMatrix { context: "Phi", condition: f64::INFINITY })?;
    let phi = gram / nf;
    let phi_inv = inverse_checked(&phi, "Phi")?;
    let resid = &target - u * &gamma;
    let mut sigma = DMatrix::zeros(u.ncols(), u.ncols());
    for i in 0..n {
        let ui = u.row(i).transpose();
        sigma += (resid[i] * resid[i] / nf) * &ui * ui.transpose();
    }
    Ok(CurveFit { gamma, basis: basis.clone(), phi, sigma, phi_inv, n })
}

impl CurveFit {
    fn basis_row(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.basis.evaluate_at_treatments(&[t])?.row(0).transpose())
    }

    /// `θ̂(t) = γ̂ᵀu(t)`.
    pub fn theta(&self, t: f64) -> Result<f64> {
        Ok(self.gamma.dot(&self.basis_row(t)?))
    }

    /// `‖Φ̂γ̂ − (1/N) Σ uᵢπ̂ᵢYᵢ‖∞`.
    pub fn normal_equation_residual(&self, data: &Dataset, weights: &[f64]) -> f64 {
        let u = self.basis.matrix();
        let target = DVector::from_fn(data.len(), |i, _| weights[i] * data.outcomes()[i]);
        (&self.phi * &self.gamma - u.tr_mul(&target) / self.n as f64).amax()
    }

    /// Pointwise band `θ̂(t) ± z·√(V̂_K(t)/N)`.
    pub fn point(&self, t: f64, level: f64) -> Result<CurvePoint> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!("confidence level must lie in (0,1), got {level}")));
        }
        let theta_hat = self.theta(t)?;
        let se = (curve_variance(self, t)? / self.n as f64).sqrt();
        let z = normal_quantile((1.0 + level) / 2.0);
        Ok(CurvePoint { t, theta_hat, se, lower: theta_hat - z * se, upper: theta_hat + z * se })
    }

    pub fn report(&self, grid: &[f64], level: f64) -> Result<Vec<CurvePoint>> {
        grid.iter().map(|&t| self.point(t, level)).collect()
    }
}

/// `V̂_K(t) = u(t)ᵀ Φ̂⁻¹ Σ̂ Φ̂⁻¹ u(t)`.
pub fn curve_variance(fit: &CurveFit, t: f64) -> Result<f64> {
    let u = fit.basis_row(t)?;
    let a = &fit.phi_inv * &u;
    let v = a.dot(&(&fit.sigma * &a));
    if v < 0.0 {
        if v > -1e-12 * (1.0 + fit.sigma.amax()) {
            return Ok(0.0);
        }
        return Err(Error::InvalidInput(format!("negative curve variance {v} at t = {t}")));
    }
    Ok(v)
}

/// Linear-interpolation sample quantile.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 101 equally spaced points between the 1st and 99th percentiles of `t`.
pub fn grid(treatments: &[f64]) -> Result<Vec<f64>> {
    if treatments.is_empty() {
        return Err(Error::InvalidInput("empty treatment sample".into()));
    }
    let mut sorted = treatments.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.01);
    let hi = percentile(&sorted, 0.99);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    Ok((0..GRID_POINTS).map(|k| if k == GRID_POINTS - 1 { hi } else { lo + step * k as f64 }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageEffect {
    pub psi: f64,
    pub se: f64,
    pub fallbacks: usize,
}

/// `ψ̂ = (1/N) Σ π̂ᵢYᵢ` with a standard error from the plug-in influence
/// `π̂(Y − Ê[Y|T,X]) + (Ê[π̂Y|X] − ψ̂) + (Ê[π̂Y|T] − ψ̂)`.
pub fn average_effect(data: &Dataset, weights: &[f64], config: &KernelConfig) -> Result<AverageEffect> {
    let n = data.len();
    if weights.len() != n {
        return Err(Error::InvalidInput(format!("{} weights for {n} observations", weights.len())));
    }
    let y = data.outcomes();
    let nf = n as f64;
    let psi = (0..n).map(|i| weights[i] * y[i]).sum::<f64>() / nf;

    let y_col = DMatrix::from_column_slice(n, 1, y);
    let wy = DMatrix::from_fn(n, 1, |i, _| weights[i] * y[i]);
    let (e_y_tx, f1) = kernel_regression(data, config, Conditioning::TreatmentAndCovariates, &y_col)?;
    let (e_wy_x, f2) = kernel_regression(data, config, Conditioning::Covariates, &wy)?;
    let (e_wy_t, f3) = kernel_regression(data, config, Conditioning::Treatment, &wy)?;
    let var = (0..n)
        .map(|i| {
            let phi = weights[i] * (y[i] - e_y_tx[(i, 0)]) + (e_wy_x[(i, 0)] - psi) + (e_wy_t[(i, 0)] - psi);
            phi * phi
        })
        .sum::<f64>()
        / nf;
    Ok(AverageEffect { psi, se: (var / nf).sqrt(), fallbacks: f1 + f2 + f3 })
}
