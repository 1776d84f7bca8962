//! Variance estimation for `β̂` and normal confidence intervals.
//!
//! Two estimators are provided:
//!
//! * a kernel plug-in of the efficient influence function, valid for every
//!   loss, with `Ĥ` either differentiated directly (smooth losses) or
//!   obtained by integration by parts against a kernel density (check loss);
//! * a stacked-moment sandwich for smooth losses that treats the dual
//!   coefficients `Λ̂` as estimated parameters.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::balance::{rho_prime, rho_second, tensor_rows};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, inverse_checked, symmetrize};
use crate::model::{Dataset, LinkSpec, LossSpec};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Gaussian product-kernel bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelConfig {
    pub h_y: f64,
    pub h_t: f64,
    pub h_x: Vec<f64>,
    /// Density floor relative to the Gaussian peak density implied by the
    /// sample standard deviations of the coordinates involved.
    pub density_floor: f64,
}

impl KernelConfig {
    /// `hⱼ = 1.06·σ̂ⱼ·N^{−1/(r+6)}` for every coordinate, floor `1e-8`.
    pub fn rule_of_thumb(data: &Dataset) -> Self {
        Self::rule_of_thumb_scaled(data, 1.0)
    }

    /// Rule-of-thumb bandwidths multiplied by `factor`.
    pub fn rule_of_thumb_scaled(data: &Dataset, factor: f64) -> Self {
        let n = data.len() as f64;
        let r = data.n_covariates();
        let rate = factor * 1.06 * n.powf(-1.0 / (r as f64 + 6.0));
        let bw = |values: &[f64]| {
            let s = sample_sd(values);
            rate * if s > 0.0 { s } else { 1.0 }
        };
        let x = data.covariates();
        let h_x = (0..r).map(|j| bw(x.column(j).as_slice())).collect();
        Self { h_y: bw(data.outcomes()), h_t: bw(data.treatments()), h_x, density_floor: 1e-8 }
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.h_x.len() != n_covariates {
            return Err(Error::InvalidInput(format!(
                "{} covariate bandwidths for {} covariates",
                self.h_x.len(),
                n_covariates
            )));
        }
        let ok = |h: f64| h.is_finite() && h > 0.0;
        if !ok(self.h_y) || !ok(self.h_t) || !self.h_x.iter().all(|&h| ok(h)) {
            return Err(Error::InvalidInput("bandwidths must be positive and finite".into()));
        }
        if !(self.density_floor >= 0.0 && self.density_floor.is_finite()) {
            return Err(Error::InvalidInput("density floor must be a nonnegative number".into()));
        }
        Ok(())
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Coordinates of the kernel: `y`, `t`, `x₁..x_r` as columns of an N×(r+2) matrix.
fn coordinates(data: &Dataset) -> (DMatrix<f64>, Vec<f64>) {
    let n = data.len();
    let r = data.n_covariates();
    let mut z = DMatrix::zeros(n, r + 2);
    z.column_mut(0).copy_from_slice(data.outcomes());
    z.column_mut(1).copy_from_slice(data.treatments());
    z.view_mut((0, 2), (n, r)).copy_from(data.covariates());
    let sds = (0..r + 2).map(|j| sample_sd(z.column(j).as_slice())).collect();
    (z, sds)
}

fn all_bandwidths(config: &KernelConfig) -> Vec<f64> {
    let mut h = vec![config.h_y, config.h_t];
    h.extend_from_slice(&config.h_x);
    h
}

/// Absolute density floor for the coordinate subset `dims`.
fn floor_for(config: &KernelConfig, dims: &[usize], sds: &[f64], h: &[f64]) -> f64 {
    let peak: f64 = dims.iter().map(|&d| 1.0 / (SQRT_2PI * sds[d].max(h[d]))).product();
    config.density_floor * peak
}

/// `(f̂, ∂f̂/∂y)` of the product-Gaussian density of `(Y, T, X)` at a point,
/// with `f̂` reported as `max(f̂, δ)`.
pub fn kernel_density(y: f64, t: f64, x: &[f64], data: &Dataset, config: &KernelConfig) -> Result<(f64, f64)> {
    config.validate(data.n_covariates())?;
    if x.len() != data.n_covariates() {
        return Err(Error::InvalidInput("evaluation point has the wrong covariate dimension".into()));
    }
    let (z, sds) = coordinates(data);
    let h = all_bandwidths(config);
    let mut point = vec![y, t];
    point.extend_from_slice(x);
    let dims: Vec<usize> = (0..h.len()).collect();
    let norm: f64 = h.iter().map(|hd| 1.0 / (SQRT_2PI * hd)).product();
    let n = data.len() as f64;
    let (mut f, mut df) = (0.0, 0.0);
    for i in 0..data.len() {
        let mut q = 0.0;
        for &d in &dims {
            let u = (point[d] - z[(i, d)]) / h[d];
            q += u * u;
        }
        let k = (-0.5 * q).exp() * norm / n;
        f += k;
        df -= k * (y - z[(i, 0)]) / (h[0] * h[0]);
    }
    Ok((f.max(floor_for(config, &dims, &sds, &h)), df))
}

/// Nadaraya–Watson regressions of each column of `targets` on the
/// coordinates `dims`, evaluated at every sample point with that point left
/// out.
/// Returns the fitted values and the number of points that fell back to the
/// global mean.
fn nadaraya_watson(
    z: &DMatrix<f64>,
    dims: &[usize],
    h: &[f64],
    targets: &DMatrix<f64>,
    floor: f64,
) -> (DMatrix<f64>, usize) {
    let n = z.nrows();
    let q = targets.ncols();
    let norm: f64 = dims.iter().map(|&d| 1.0 / (SQRT_2PI * h[d])).product();
    let mut num = DMatrix::zeros(n, q);
    let mut den = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for &d in dims {
                let u = (z[(i, d)] - z[(j, d)]) / h[d];
                s += u * u;
            }
            let k = (-0.5 * s).exp();
            if k == 0.0 {
                continue;
            }
            den[i] += k;
            den[j] += k;
            for c in 0..q {
                num[(i, c)] += k * targets[(j, c)];
                num[(j, c)] += k * targets[(i, c)];
            }
        }
    }
    let means: Vec<f64> = (0..q).map(|c| targets.column(c).sum() / n as f64).collect();
    let mut fallbacks = 0;
    for i in 0..n {
        if den[i] == 0.0 || den[i] * norm / (n as f64) < floor {
            fallbacks += 1;
            for c in 0..q {
                num[(i, c)] = means[c];
            }
        } else {
            for c in 0..q {
                num[(i, c)] /= den[i];
            }
        }
    }
    (num, fallbacks)
}

/// Conditioning set of a kernel regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    TreatmentAndCovariates,
    Treatment,
    Covariates,
}

/// Nadaraya–Watson estimates of `E[targetⱼ | ·]` at every sample point, plus
/// the number of points that fell back to the global mean.
pub fn kernel_regression(
    data: &Dataset,
    config: &KernelConfig,
    on: Conditioning,
    targets: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize)> {
    config.validate(data.n_covariates())?;
    if targets.nrows() != data.len() {
        return Err(Error::InvalidInput("regression targets do not match the dataset".into()));
    }
    let (z, sds) = coordinates(data);
    let h = all_bandwidths(config);
    let k = h.len();
    let dims: Vec<usize> = match on {
        Conditioning::TreatmentAndCovariates => (1..k).collect(),
        Conditioning::Treatment => vec![1],
        Conditioning::Covariates => (2..k).collect(),
    };
    if dims.is_empty() {
        let n = data.len();
        return Ok((DMatrix::from_fn(n, targets.ncols(), |_, c| targets.column(c).sum() / n as f64), 0));
    }
    Ok(nadaraya_watson(&z, &dims, &h, targets, floor_for(config, &dims, &sds, &h)))
}

/// Estimated influence values `ψ̂ᵢ` (N×p) and the number of kernel
/// regressions that fell back to a global mean.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceEstimate {
    pub psi: DMatrix<f64>,
    pub fallbacks: usize,
}

fn residuals(data: &Dataset, beta: &[f64], m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if beta.len() != m.ncols() {
        return Err(Error::InvalidInput(format!("beta has length {}, link needs {}", beta.len(), m.ncols())));
    }
    let fitted = m * DVector::from_column_slice(beta);
    Ok(data.outcomes().iter().zip(fitted.iter()).map(|(y, f)| y - f).collect())
}

fn check_weights(data: &Dataset, weights: &[f64]) -> Result<()> {
    if weights.len() != data.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} observations", weights.len(), data.len())));
    }
    Ok(())
}

/// `ψ̂ᵢ = π̂ᵢL′ᵢmᵢ − π̂ᵢÊ[L′|T,X]ᵢmᵢ + Ê[π̂L′m | T=Tᵢ] + Ê[π̂L′m | X=Xᵢ]`.
pub fn estimate_influence(
    data: &Dataset,
    weights: &[f64],
    beta: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
    config: &KernelConfig,
) -> Result<InfluenceEstimate> {
    config.validate(data.n_covariates())?;
    check_weights(data, weights)?;
    let m = link.design(data.treatments())?;
    let r = residuals(data, beta, &m)?;
    let (n, p) = (data.len(), m.ncols());
    let dl: Vec<f64> = r.iter().map(|&v| loss.derivative(v)).collect();

    let direct = DMatrix::from_fn(n, p, |i, c| weights[i] * dl[i] * m[(i, c)]);
    let dl_col = DMatrix::from_column_slice(n, 1, &dl);
    let (e_tx, f1) = kernel_regression(data, config, Conditioning::TreatmentAndCovariates, &dl_col)?;
    let (e_t, f2) = kernel_regression(data, config, Conditioning::Treatment, &direct)?;
    let (e_x, f3) = kernel_regression(data, config, Conditioning::Covariates, &direct)?;

    let psi = DMatrix::from_fn(n, p, |i, c| {
        direct[(i, c)] - weights[i] * e_tx[(i, 0)] * m[(i, c)] + e_t[(i, c)] + e_x[(i, c)]
    });
    Ok(InfluenceEstimate { psi, fallbacks: f1 + f2 + f3 })
}

/// How `Ĥ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMethod {
    /// `(1/N) Σ π̂ᵢ L″(rᵢ) mᵢmᵢᵀ`.
    Direct,
    /// `−(1/N) Σ π̂ᵢ L′(rᵢ) (∂_y f̂ / f̂) mᵢmᵢᵀ`.
    Kernel,
}

impl HessianMethod {
    /// Direct for smooth losses, kernel for the check loss.
    pub fn default_for(loss: LossSpec) -> Self {
        if loss.is_smooth() {
            HessianMethod::Direct
        } else {
            HessianMethod::Kernel
        }
    }
}

/// `Ĥ` with the ∇β m term omitted (both links are linear in `β`).
pub fn estimate_h(
    data: &Dataset,
    weights: &[f64],
    beta: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
    config: &KernelConfig,
    method: HessianMethod,
) -> Result<DMatrix<f64>> {
    check_weights(data, weights)?;
    let m = link.design(data.treatments())?;
    let r = residuals(data, beta, &m)?;
    let (n, p) = (data.len(), m.ncols());
    let coef: Vec<f64> = match method {
        HessianMethod::Direct => (0..n).map(|i| weights[i] * loss.second_derivative(r[i])).collect(),
        HessianMethod::Kernel => {
            config.validate(data.n_covariates())?;
            let (z, sds) = coordinates(data);
            let h = all_bandwidths(config);
            let dims: Vec<usize> = (0..h.len()).collect();
            let floor = floor_for(config, &dims, &sds, &h);
            let score = joint_log_density_slope(&z, &h, floor);
            (0..n).map(|i| -weights[i] * loss.derivative(r[i]) * score[i]).collect()
        }
    };
    let mut out = DMatrix::zeros(p, p);
    for i in 0..n {
        let mi = m.row(i).transpose();
        out += (coef[i] / n as f64) * &mi * mi.transpose();
    }
    Ok(symmetrize(&out))
}

/// `(∂_y f̂ / max(f̂, δ))` at every sample point, with `f̂` built from the
/// other observations.
fn joint_log_density_slope(z: &DMatrix<f64>, h: &[f64], floor: f64) -> Vec<f64> {
    let n = z.nrows();
    let norm: f64 = h.iter().map(|hd| 1.0 / (SQRT_2PI * hd)).product::<f64>() / n as f64;
    let mut f = vec![0.0; n];
    let mut df = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for d in 0..h.len() {
                let u = (z[(i, d)] - z[(j, d)]) / h[d];
                s += u * u;
            }
            let k = (-0.5 * s).exp() * norm;
            if k == 0.0 {
                continue;
            }
            let slope = (z[(i, 0)] - z[(j, 0)]) / (h[0] * h[0]);
            f[i] += k;
            f[j] += k;
            df[i] -= k * slope;
            df[j] += k * slope;
        }
    }
    (0..n).map(|i| if f[i] > 0.0 { df[i] / f[i].max(floor) } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Kernel,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub h: DMatrix<f64>,
    /// `(1/N) Σ ψ̂ᵢψ̂ᵢᵀ` (or the moment covariance for the sandwich).
    pub psi_cov: DMatrix<f64>,
    /// Asymptotic variance of `√N(β̂ − β)`.
    pub v: DMatrix<f64>,
    pub method: VarianceMethod,
    pub hessian: Option<HessianMethod>,
    /// Condition number of the matrix inverted.
    pub condition: f64,
    pub fallbacks: usize,
    pub n: usize,
}

impl VarianceEstimate {
    /// `√(V̂ⱼⱼ / N)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.v.nrows()).map(|j| (self.v[(j, j)].max(0.0) / self.n as f64).sqrt()).collect()
    }
}

/// Kernel plug-in `V̂ = Ĥ⁻¹ Ψ̂ Ĥ⁻ᵀ`.
pub fn kernel_variance(
    data: &Dataset,
    weights: &[f64],
    beta: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
    config: &KernelConfig,
    hessian: HessianMethod,
) -> Result<VarianceEstimate> {
    let h = estimate_h(data, weights, beta, loss, link, config, hessian)?;
    let influence = estimate_influence(data, weights, beta, loss, link, config)?;
    let n = data.len();
    let psi_cov = symmetrize(&(influence.psi.tr_mul(&influence.psi) / n as f64));
    let condition = condition_number(&h);
    let h_inv = inverse_checked(&h, "H")?;
    let v = symmetrize(&(&h_inv * &psi_cov * h_inv.transpose()));
    Ok(VarianceEstimate {
        h,
        psi_cov,
        v,
        method: VarianceMethod::Kernel,
        hessian: Some(hessian),
        condition,
        fallbacks: influence.fallbacks,
        n,
    })
}

/// Sandwich for smooth losses from the stacked moments of `θ = (vec Λ, β)`:
/// the dual balance conditions (with the sample means linearized) and the
/// weighted fit conditions.
pub fn sandwich_variance_smooth(
    data: &Dataset,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    beta: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
) -> Result<VarianceEstimate> {
    if !loss.is_smooth() {
        return Err(Error::InvalidInput("the stacked sandwich needs a smooth loss".into()));
    }
    let n = data.len();
    if u.nrows() != n || v.nrows() != n {
        return Err(Error::InvalidInput("basis matrices do not match the dataset".into()));
    }
    if lambda.nrows() != u.ncols() || lambda.ncols() != v.ncols() {
        return Err(Error::InvalidInput("Lambda does not match the basis dimensions".into()));
    }
    let m = link.design(data.treatments())?;
    let r = residuals(data, beta, &m)?;
    let (k1, k2, p) = (u.ncols(), v.ncols(), m.ncols());
    let k = k1 * k2;
    let z = tensor_rows(u, v);
    let lam = DVector::from_column_slice(lambda.as_slice());
    let s = &z * &lam;
    let nf = n as f64;
    let ubar = DVector::from_fn(k1, |a, _| u.column(a).sum() / nf);
    let vbar = DVector::from_fn(k2, |b, _| v.column(b).sum() / nf);

    let dim = k + p;
    let mut jac = DMatrix::zeros(dim, dim);
    let mut meat = DMatrix::zeros(dim, dim);
    let mut hvec = DVector::zeros(dim);
    for i in 0..n {
        let w1 = rho_prime(s[i]);
        let w2 = rho_second(s[i]);
        let dl = loss.derivative(r[i]);
        let d2 = loss.second_derivative(r[i]);
        for idx in 0..k {
            let (a, b) = (idx % k1, idx / k1);
            hvec[idx] = w1 * u[(i, a)] * v[(i, b)] - u[(i, a)] * vbar[b] - ubar[a] * v[(i, b)] + ubar[a] * vbar[b];
        }
        for c in 0..p {
            hvec[k + c] = w1 * dl * m[(i, c)];
        }
        meat += &hvec * hvec.transpose();

        let zi = z.row(i).transpose();
        let mi = m.row(i).transpose();
        jac.view_mut((0, 0), (k, k)).add_assign(&(w2 * &zi * zi.transpose()));
        jac.view_mut((k, 0), (p, k)).add_assign(&(w2 * dl * &mi * zi.transpose()));
        jac.view_mut((k, k), (p, p)).add_assign(&(-w1 * d2 * &mi * mi.transpose()));
    }
    jac /= nf;
    meat /= nf;
    meat = symmetrize(&meat);
    let condition = condition_number(&jac);
    let jinv = inverse_checked(&jac, "stacked Jacobian")?;
    let full = &jinv * &meat * jinv.transpose();
    let vb = symmetrize(&full.view((k, k), (p, p)).into_owned());
    let hb = -jac.view((k, k), (p, p)).into_owned();
    let psi_cov = meat.view((k, k), (p, p)).into_owned();
    Ok(VarianceEstimate {
        h: hb,
        psi_cov,
        v: vb,
        method: VarianceMethod::Sandwich,
        hessian: None,
        condition,
        fallbacks: 0,
        n,
    })
}

/// Normal-approximation intervals `β̂ⱼ ± z_{(1+level)/2} √(V̂ⱼⱼ/N)`.
pub fn confidence_interval(beta: &[f64], v: &DMatrix<f64>, n: usize, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must lie in (0,1), got {level}")));
    }
    if v.nrows() != beta.len() || v.ncols() != beta.len() {
        return Err(Error::InvalidInput("variance matrix does not match beta".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    beta.iter()
        .enumerate()
        .map(|(j, &b)| {
            let vjj = v[(j, j)];
            if vjj < 0.0 {
                return Err(Error::InvalidInput(format!("negative variance {vjj} for coefficient {j}")));
            }
            let half = z * (vjj / n as f64).sqrt();
            Ok((b - half, b + half))
        })
        .collect()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// A fully discrete design: finite treatment and covariate supports with a
/// known joint law and known conditional outcome moments.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDesign {
    pub t_levels: Vec<f64>,
    /// `P(T = t_a, X = x_b)`, indexed `[a][b]`.
    pub joint: Vec<Vec<f64>>,
    /// `E[Y | T = t_a, X = x_b]`.
    pub mean: Vec<Vec<f64>>,
    /// `Var(Y | T = t_a, X = x_b)`.
    pub variance: Vec<Vec<f64>>,
}

/// Closed-form efficient and known-weights asymptotic variances of the
/// mean-effect coefficients under the indicator link over `t_levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVariances {
    pub beta: Vec<f64>,
    pub v_eff: DMatrix<f64>,
    pub v_ineff: DMatrix<f64>,
}

impl DiscreteDesign {
    pub fn variances(&self) -> Result<DiscreteVariances> {
        let na = self.t_levels.len();
        if na == 0 || self.joint.len() != na || self.mean.len() != na || self.variance.len() != na {
            return Err(Error::InvalidInput("discrete design tables do not match the treatment levels".into()));
        }
        let nb = self.joint[0].len();
        let total: f64 = self.joint.iter().flatten().sum();
        if self.joint.iter().flatten().any(|&q| !(q > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("joint law must be strictly positive and sum to one".into()));
        }
        let pt: Vec<f64> = self.joint.iter().map(|row| row.iter().sum()).collect();
        let px: Vec<f64> = (0..nb).map(|b| self.joint.iter().map(|row| row[b]).sum()).collect();
        let pi = |a: usize, b: usize| pt[a] * px[b] / self.joint[a][b];
        let beta: Vec<f64> = (0..na).map(|a| (0..nb).map(|b| px[b] * self.mean[a][b]).sum()).collect();

        // L(v) = v², m(t) = e_a: H = 2 diag(P(T = t_a)).
        let h_inv = DMatrix::from_fn(na, na, |a, c| if a == c { 1.0 / (2.0 * pt[a]) } else { 0.0 });

        // ψ = π·2(Y − β_T)e_T − π·2(μ(T,X) − β_T)e_T + E[π L′ m | T] + E[π L′ m | X];
        // the T-term vanishes at the truth.
        let mut s_eff = DMatrix::zeros(na, na);
        let mut s_ineff = DMatrix::zeros(na, na);
        for a in 0..na {
            for b in 0..nb {
                let q = self.joint[a][b];
                let w = pi(a, b);
                let gap = self.mean[a][b] - beta[a];
                let noise = 4.0 * w * w * self.variance[a][b];
                // E[π L′ m | X = x_b] = Σ_t P(t) 2(μ(t,x_b) − β_t) e_t.
                let proj = DVector::from_fn(na, |c, _| 2.0 * pt[c] * (self.mean[c][b] - beta[c]));
                s_eff[(a, a)] += q * noise;
                s_eff += q * &proj * proj.transpose();
                s_ineff[(a, a)] += q * (noise + 4.0 * w * w * gap * gap);
            }
        }
        Ok(DiscreteVariances {
            beta,
            v_eff: symmetrize(&(&h_inv * s_eff * &h_inv)),
            v_ineff: symmetrize(&(&h_inv * s_ineff * &h_inv)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(seed: u64, n: usize, r: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t: Vec<f64> = (0..n).map(|i| x.row(i).sum() * 0.5 + rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + t[i] + x.row(i).sum() + rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new(y, t, x).unwrap()
    }

    fn config(r: usize, h: f64) -> KernelConfig {
        KernelConfig { h_y: h, h_t: h * 1.3, h_x: (0..r).map(|j| h * (0.8 + 0.1 * j as f64)).collect(), density_floor: 0.0 }
    }

    #[test]
    fn density_at_a_lone_point() {
        // Two identical rows give the same estimate as a single observation.
        let d = Dataset::new(vec![0.5, 0.5], vec![1.0, 1.0], DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.2, -0.1]))
            .unwrap();
        let c = KernelConfig { h_y: 0.3, h_t: 0.7, h_x: vec![1.1, 0.4], density_floor: 0.0 };
        let (f, df) = kernel_density(0.5, 1.0, &[0.2, -0.1], &d, &c).unwrap();
        let expected = (2.0 * std::f64::consts::PI).powf(-2.0) / (0.3 * 0.7 * 1.1 * 0.4);
        assert_abs_diff_eq!(f, expected, epsilon = 1e-12);
        assert_eq!(df, 0.0);
    }

    #[test]
    fn density_matches_direct_summation() {
        let d = random_data(4, 15, 2);
        let c = config(2, 0.6);
        let h = [c.h_y, c.h_t, c.h_x[0], c.h_x[1]];
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let f_at = |y: f64, t: f64, x: &[f64]| {
            let mut acc = 0.0;
            for i in 0..d.len() {
                let pt = [y, t, x[0], x[1]];
                let obs = [d.outcomes()[i], d.treatments()[i], d.covariates()[(i, 0)], d.covariates()[(i, 1)]];
                acc += (0..4).map(|k| phi((pt[k] - obs[k]) / h[k]) / h[k]).product::<f64>();
            }
            acc / d.len() as f64
        };
        for (y, t, x) in [(0.3, -0.2, [0.1, 0.5]), (2.0, 1.0, [-1.0, 0.0])] {
            let (f, df) = kernel_density(y, t, &x, &d, &c).unwrap();
            assert!((f - f_at(y, t, &x)).abs() < 1e-14);
            let e = 1e-5;
            let fd = (f_at(y + e, t, &x) - f_at(y - e, t, &x)) / (2.0 * e);
            assert!((df - fd).abs() < 1e-7 * (1.0 + fd.abs()), "{df} vs {fd}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let d = random_data(9, 12, 0);
        let c = config(0, 0.5);
        let (lo_y, hi_y) = (-12.0, 14.0);
        let (lo_t, hi_t) = (-10.0, 10.0);
        let steps = 300;
        let (dy, dt) = ((hi_y - lo_y) / steps as f64, (hi_t - lo_t) / steps as f64);
        let mut total = 0.0;
        for a in 0..steps {
            for b in 0..steps {
                let y = lo_y + (a as f64 + 0.5) * dy;
                let t = lo_t + (b as f64 + 0.5) * dt;
                total += kernel_density(y, t, &[], &d, &c).unwrap().0 * dy * dt;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn direct_hessian_arithmetic() {
        let d = Dataset::new(vec![0.0, 1.0], vec![0.0, 1.0], DMatrix::zeros(2, 0)).unwrap();
        let c = KernelConfig::rule_of_thumb(&d);
        let h = estimate_h(&d, &[1.0, 1.0], &[0.0, 1.0], LossSpec::SquaredError, &LinkSpec::Polynomial { degree: 1 }, &c, HessianMethod::Direct)
            .unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn perfect_fit_has_zero_influence() {
        let mut d = random_data(2, 30, 1);
        let y: Vec<f64> = d.treatments().iter().map(|t| 2.0 + 3.0 * t).collect();
        d = d.with_outcomes(y).unwrap();
        let w = vec![1.0; 30];
        let c = KernelConfig::rule_of_thumb(&d);
        let link = LinkSpec::Polynomial { degree: 1 };
        let est = kernel_variance(&d, &w, &[2.0, 3.0], LossSpec::SquaredError, &link, &c, HessianMethod::Direct).unwrap();
        assert!(est.v.amax() < 1e-20);

        let u = DMatrix::from_element(30, 1, 1.0);
        let sw = sandwich_variance_smooth(&d, &u, &u, &DMatrix::from_element(1, 1, -1.0), &[2.0, 3.0], LossSpec::SquaredError, &link)
            .unwrap();
        assert!(sw.v.amax() < 1e-20);
    }

    #[test]
    fn sandwich_with_constant_bases_is_hc0() {
        let d = random_data(17, 200, 1);
        let n = d.len();
        let link = LinkSpec::Polynomial { degree: 1 };
        // Ordinary least squares by hand.
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d.treatments()[i] });
        let y = DVector::from_column_slice(d.outcomes());
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let b = &xtx_inv * x.transpose() * &y;
        let e = &y - &x * &b;
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += e[i] * e[i] * &xi * xi.transpose();
        }
        let hc0 = &xtx_inv * meat * &xtx_inv * n as f64;

        let u = DMatrix::from_element(n, 1, 1.0);
        let sw = sandwich_variance_smooth(&d, &u, &u, &DMatrix::from_element(1, 1, -1.0), b.as_slice(), LossSpec::SquaredError, &link)
            .unwrap();
        for k in 0..4 {
            assert!((sw.v[k] - hc0[k]).abs() < 1e-6 * hc0[k].abs(), "{} vs {}", sw.v[k], hc0[k]);
        }
    }

    #[test]
    fn interval_examples() {
        let ci = confidence_interval(&[1.0], &DMatrix::zeros(1, 1), 10, 0.95).unwrap();
        assert_eq!(ci, vec![(1.0, 1.0)]);
        let ci = confidence_interval(&[0.0], &DMatrix::from_element(1, 1, 7.0), 7, 0.95).unwrap();
        assert_abs_diff_eq!(ci[0].1, 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(ci[0].0, -1.959964, epsilon = 1e-6);
        assert!(confidence_interval(&[0.0], &DMatrix::from_element(1, 1, -1.0), 7, 0.95).is_err());
        assert!(confidence_interval(&[0.0], &DMatrix::from_element(1, 1, 1.0), 7, 1.0).is_err());
    }

    #[test]
    fn rule_of_thumb_bandwidths() {
        let d = random_data(3, 100, 2);
        let c = KernelConfig::rule_of_thumb(&d);
        let rate = 1.06 * 100f64.powf(-1.0 / 8.0);
        assert_abs_diff_eq!(c.h_t, rate * sample_sd(d.treatments()), epsilon = 1e-12);
        assert!(c.validate(2).is_ok());
        assert!(c.validate(3).is_err());
        let bad = KernelConfig { h_y: 0.0, ..c };
        assert!(bad.validate(2).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn variance_is_symmetric_psd(seed in 0u64..1000, which in 0usize..3) {
            let d = random_data(seed, 60, 2);
            let loss = [LossSpec::SquaredError, LossSpec::Check { tau: 0.4 }, LossSpec::AsymmetricSquared { tau: 0.3 }][which];
            let link = LinkSpec::Polynomial { degree: 1 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..1.5)).collect();
            let c = KernelConfig::rule_of_thumb(&d);
            let est = kernel_variance(&d, &w, &[1.0, 1.0], loss, &link, &c, HessianMethod::default_for(loss));
            let Ok(est) = est else { return Ok(()); };
            let asym = (&est.v - est.v.transpose()).amax();
            proptest::prop_assert!(asym < 1e-10);
            let min_eig = est.v.clone().symmetric_eigenvalues().min();
            proptest::prop_assert!(min_eig >= -1e-8 * est.v.trace().abs());
        }
    }
}
