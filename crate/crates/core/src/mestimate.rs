//! Weighted M-estimation of `β̂ = argmin Σ πᵢ L(Yᵢ − g(Tᵢ; β))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, weighted_gram, MAX_CONDITION};
use crate::model::{Dataset, LinkSpec, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    /// Relative first-order-condition tolerance.
    pub tol: f64,
    /// Coefficient-change tolerance (relative to the outcome scale) for the
    /// iterative solvers.
    pub coef_tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-7, coef_tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Estimated,
    Supplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Max-norm of the weighted first-order condition. For the check loss
    /// this is the distance of zero from the subdifferential.
    pub foc_norm: f64,
    pub objective: f64,
    pub loss: LossSpec,
    pub link: LinkSpec,
    pub weight_source: WeightSource,
    pub iterations: usize,
    /// `median|Y − median Y| + 1e-12`.
    pub scale: f64,
}

/// `median|Y − median(Y)| + 1e-12`.
pub fn outcome_scale(y: &[f64]) -> f64 {
    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let mut sorted = y.to_vec();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    median(&mut dev) + 1e-12
}

/// Smallest `v` among `values` with `Σ_{values ≤ v} w / Σ w ≥ τ`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], tau: f64) -> f64 {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    assert!(!values.is_empty(), "weighted_quantile of an empty sample");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum / total >= tau {
            return values[i];
        }
    }
    values[*order.last().unwrap()]
}

/// `Σ πᵢ L(Yᵢ − m(Tᵢ)ᵀβ) / N`.
pub fn weighted_objective(m: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64], loss: LossSpec) -> f64 {
    let b = DVector::from_column_slice(beta);
    let fitted = m * b;
    let n = y.len() as f64;
    y.iter().zip(w).zip(fitted.iter()).map(|((yi, wi), fi)| wi * loss.value(yi - fi)).sum::<f64>() / n
}

/// Solves the weighted problem with estimated weights.
pub fn fit(
    data: &Dataset,
    weights: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_with_source(data, weights, loss, link, opts, WeightSource::Estimated)
}

/// Same problem with externally supplied (e.g. true) weights.
pub fn fit_known_weights(data: &Dataset, true_weights: &[f64], loss: LossSpec, link: &LinkSpec) -> Result<FitResult> {
    fit_with_source(data, true_weights, loss, link, &FitOptions::default(), WeightSource::Supplied)
}

fn fit_with_source(
    data: &Dataset,
    weights: &[f64],
    loss: LossSpec,
    link: &LinkSpec,
    opts: &FitOptions,
    weight_source: WeightSource,
) -> Result<FitResult> {
    loss.validate()?;
    link.validate()?;
    if weights.len() != data.len() {
        return Err(Error::InvalidInput(format!("{} weights for {} observations", weights.len(), data.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidInput("weights must be positive and finite".into()));
    }
    let m = link.design(data.treatments())?;
    let y = data.outcomes();
    let (beta, iterations) = fit_design(&m, y, weights, loss, opts)?;
    let b = DVector::from_column_slice(&beta);
    let residuals: Vec<f64> = y.iter().zip((&m * &b).iter()).map(|(yi, fi)| yi - fi).collect();
    let foc_norm = foc_norm(&m, &residuals, weights, loss);
    let objective = weighted_objective(&m, y, weights, &beta, loss);
    Ok(FitResult {
        beta,
        residuals,
        foc_norm,
        objective,
        loss,
        link: link.clone(),
        weight_source,
        iterations,
        scale: outcome_scale(y),
    })
}

/// Minimizes `Σ wᵢ L(yᵢ − mᵢᵀβ)` over `β` for an N×p design `m`.
/// Returns the coefficients and the number of solver iterations.
pub fn fit_design(
    m: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    loss: LossSpec,
    opts: &FitOptions,
) -> Result<(Vec<f64>, usize)> {
    check_design(m, w)?;
    match loss {
        LossSpec::SquaredError => Ok((weighted_least_squares(m, y, w)?.iter().copied().collect(), 0)),
        LossSpec::AsymmetricSquared { tau } => expectile(m, y, w, tau, opts),
        LossSpec::Check { tau } => quantile(m, y, w, tau, opts),
    }
}

fn check_design(m: &DMatrix<f64>, w: &[f64]) -> Result<()> {
    let gram = weighted_gram(m, w);
    let condition = condition_number(&gram);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::RankDeficientDesign(format!(
            "weighted Gram matrix of the link gradients has condition number {condition:e}"
        )));
    }
    Ok(())
}

fn weighted_least_squares(m: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let gram = weighted_gram(m, w);
    let rhs = m.tr_mul(&DVector::from_fn(y.len(), |i, _| w[i] * y[i]));
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::RankDeficientDesign("weighted Gram matrix is not positive definite".into()))
}

fn residuals_of(m: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Vec<f64> {
    let fitted = m * beta;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

fn expectile(m: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, opts: &FitOptions) -> Result<(Vec<f64>, usize)> {
    let scale = outcome_scale(y);
    let mut beta = weighted_least_squares(m, y, w)?;
    for iter in 1..=opts.max_iter {
        let r = residuals_of(m, y, &beta);
        let iw: Vec<f64> = r
            .iter()
            .zip(w)
            .map(|(ri, wi)| wi * if *ri <= 0.0 { 1.0 - tau } else { tau })
            .collect();
        let next = weighted_least_squares(m, y, &iw)?;
        let change = (&next - &beta).amax();
        beta = next;
        if change < opts.coef_tol * scale.max(1.0) {
            return Ok((beta.iter().copied().collect(), iter));
        }
    }
    Err(Error::NotConverged { solver: "expectile IRLS", iterations: opts.max_iter, residual: f64::NAN })
}

/// Column index of the single unit entry in every row, if the design has
/// that form (intercept-only or indicator links).
fn separable_columns(m: &DMatrix<f64>) -> Option<Vec<usize>> {
    let mut cols = Vec::with_capacity(m.nrows());
    for row in m.row_iter() {
        let mut hit = None;
        for (j, &v) in row.iter().enumerate() {
            if v == 1.0 && hit.is_none() {
                hit = Some(j);
            } else if v != 0.0 {
                return None;
            }
        }
        cols.push(hit?);
    }
    Some(cols)
}

fn quantile(m: &DMatrix<f64>, y: &[f64], w: &[f64], tau: f64, opts: &FitOptions) -> Result<(Vec<f64>, usize)> {
    if let Some(cols) = separable_columns(m) {
        let p = m.ncols();
        let mut beta = vec![0.0; p];
        for (j, b) in beta.iter_mut().enumerate() {
            let (vals, wts): (Vec<f64>, Vec<f64>) =
                cols.iter().enumerate().filter(|(_, &c)| c == j).map(|(i, _)| (y[i], w[i])).unzip();
            *b = weighted_quantile(&vals, &wts, tau);
        }
        return Ok((beta, 0));
    }

    let scale = outcome_scale(y);
    let mut beta = weighted_least_squares(m, y, w)?;
    let mut iterations = 0;

    // Huberized check loss, ε shrinking geometrically.
    let mut eps = 1e-2 * scale;
    while eps >= 1e-8 * scale * 0.999 {
        for _ in 0..50 {
            iterations += 1;
            let r = residuals_of(m, y, &beta);
            let c: Vec<f64> = r.iter().zip(w).map(|(ri, wi)| wi / (2.0 * ri.abs().max(eps))).collect();
            let gram = weighted_gram(m, &c);
            let rhs = m.tr_mul(&DVector::from_fn(y.len(), |i, _| c[i] * y[i] + w[i] * (tau - 0.5)));
            let Some(chol) = gram.cholesky() else { break };
            let next = chol.solve(&rhs);
            let change = (&next - &beta).amax();
            beta = next;
            if change < opts.coef_tol * scale {
                break;
            }
        }
        eps *= 0.1;
    }

    let (polished, pivots) = vertex_descent(m, y, w, tau, &beta, opts.max_iter.max(20 * m.ncols()))?;
    Ok((polished.iter().copied().collect(), iterations + pivots))
}

/// Rows of `m` forming a nonsingular p×p system, preferring small `|r|`.
fn choose_basis(m: &DMatrix<f64>, r: &[f64]) -> Option<Vec<usize>> {
    let p = m.ncols();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    for i in order {
        let row = m.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        for qk in &q {
            v -= qk * qk.dot(&v);
        }
        if v.norm() > 1e-8 * norm {
            q.push(v.normalize());
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

/// Exact minimization of the weighted check loss by moving between
/// interpolating vertices, starting near `start`.
fn vertex_descent(
    m: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    tau: f64,
    start: &DVector<f64>,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let (n, p) = (m.nrows(), m.ncols());
    let r0 = residuals_of(m, y, start);
    let mut basis = choose_basis(m, &r0)
        .ok_or_else(|| Error::RankDeficientDesign("no nonsingular interpolation subset".into()))?;
    let basis_matrix = |basis: &[usize]| DMatrix::from_fn(p, p, |a, c| m[(basis[a], c)]);
    let solve_basis = |basis: &[usize]| -> Option<DVector<f64>> {
        let yb = DVector::from_fn(p, |a, _| y[basis[a]]);
        basis_matrix(basis).lu().solve(&yb)
    };
    let mut beta =
        solve_basis(&basis).ok_or_else(|| Error::RankDeficientDesign("singular interpolation subset".into()))?;

    for iter in 0..max_iter {
        let mut r = residuals_of(m, y, &beta);
        let mut in_basis = vec![false; n];
        for &i in &basis {
            in_basis[i] = true;
            r[i] = 0.0;
        }
        let mut g0 = DVector::zeros(p);
        for i in 0..n {
            if !in_basis[i] {
                let psi = tau - if r[i] <= 0.0 { 1.0 } else { 0.0 };
                g0 += m.row(i).transpose() * (w[i] * psi);
            }
        }
        // Mᵦᵀ (w ∘ s) = −g0
        let mb = basis_matrix(&basis);
        let x = mb.transpose().lu().solve(&(-&g0)).ok_or(Error::SingularMatrix {
            context: "vertex basis",
            condition: f64::INFINITY,
        })?;
        let mut worst = None;
        let mut worst_violation = 1e-10;
        for (a, &i) in basis.iter().enumerate() {
            let s = x[a] / w[i];
            let violation = (s - tau).max(tau - 1.0 - s);
            if violation > worst_violation {
                worst_violation = violation;
                worst = Some((a, if s > tau { -1.0 } else { 1.0 }));
            }
        }
        let Some((leave, sigma)) = worst else {
            return Ok((beta, iter));
        };

        let mut e = DVector::zeros(p);
        e[leave] = sigma;
        let d = mb.lu().solve(&e).ok_or(Error::SingularMatrix { context: "vertex basis", condition: f64::INFINITY })?;
        let a_dir = m * &d;
        let check = |v: f64| v * (tau - if v <= 0.0 { 1.0 } else { 0.0 });

        let leaving = basis[leave];
        let mut slope = w[leaving] * check(-a_dir[leaving]);
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let ai = a_dir[i];
            if r[i] == 0.0 {
                slope += w[i] * check(-ai);
                continue;
            }
            let psi = tau - if r[i] < 0.0 { 1.0 } else { 0.0 };
            slope -= w[i] * psi * ai;
            if ai != 0.0 {
                let alpha = r[i] / ai;
                if alpha > 0.0 {
                    breaks.push((alpha, i));
                }
            }
        }
        if slope >= 0.0 {
            // Only ties block descent; the vertex is optimal up to rounding.
            return Ok((beta, iter));
        }
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut entering = None;
        for &(alpha, i) in &breaks {
            slope += w[i] * a_dir[i].abs();
            if slope >= 0.0 {
                entering = Some((alpha, i));
                break;
            }
        }
        let Some((_, enter)) = entering else {
            return Err(Error::NotConverged { solver: "check-loss vertex descent", iterations: iter, residual: worst_violation });
        };
        let mut next_basis = basis.clone();
        next_basis[leave] = enter;
        match solve_basis(&next_basis) {
            Some(b) => {
                basis = next_basis;
                beta = b;
            }
            None => {
                return Err(Error::SingularMatrix { context: "vertex basis", condition: f64::INFINITY });
            }
        }
    }
    Err(Error::NotConverged { solver: "check-loss vertex descent", iterations: max_iter, residual: f64::NAN })
}

/// First-order-condition norm `‖(1/N) Σ wᵢ L′(rᵢ) mᵢ‖∞`.
///
/// For the check loss, points with `|rᵢ|` at rounding level may take any
/// subgradient in `[τ−1, τ]`; the returned value is the smallest norm over
/// those choices.
pub fn foc_norm(m: &DMatrix<f64>, residuals: &[f64], w: &[f64], loss: LossSpec) -> f64 {
    let n = residuals.len() as f64;
    let p = m.ncols();
    match loss {
        LossSpec::Check { tau } => {
            let ymax = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let zero_tol = 1e-10 * ymax.max(1.0);
            let mut g = DVector::zeros(p);
            let mut free = Vec::new();
            for (i, &r) in residuals.iter().enumerate() {
                if r.abs() <= zero_tol {
                    free.push(i);
                } else {
                    let psi = tau - if r <= 0.0 { 1.0 } else { 0.0 };
                    g += m.row(i).transpose() * (w[i] * psi / n);
                }
            }
            if free.is_empty() {
                return g.amax();
            }
            // Box-constrained least squares over the free subgradients,
            // by cyclic coordinate descent from the midpoint.
            let cols: Vec<DVector<f64>> = free.iter().map(|&i| m.row(i).transpose() * (w[i] / n)).collect();
            let mut s = vec![tau - 0.5; free.len()];
            let mut total = g.clone();
            for (c, &sk) in cols.iter().zip(&s) {
                total += c * sk;
            }
            for _ in 0..2000 {
                let mut moved = 0.0f64;
                for (k, c) in cols.iter().enumerate() {
                    let cc = c.norm_squared();
                    if cc == 0.0 {
                        continue;
                    }
                    let target = (s[k] - c.dot(&total) / cc).clamp(tau - 1.0, tau);
                    let delta = target - s[k];
                    if delta != 0.0 {
                        total += c * delta;
                        s[k] = target;
                        moved = moved.max(delta.abs());
                    }
                }
                if moved < 1e-15 {
                    break;
                }
            }
            total.amax()
        }
        _ => {
            let mut g = DVector::zeros(p);
            for (i, &r) in residuals.iter().enumerate() {
                g += m.row(i).transpose() * (w[i] * loss.derivative(r) / n);
            }
            g.amax()
        }
    }
}

/// Right-hand side of the first-order-condition tolerance,
/// `1 + ‖(1/N) Σ wᵢ |L′(rᵢ)| ‖mᵢ‖‖`.
pub fn foc_reference(m: &DMatrix<f64>, residuals: &[f64], w: &[f64], loss: LossSpec) -> f64 {
    let n = residuals.len() as f64;
    1.0 + residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| w[i] * loss.derivative(r).abs() * m.row(i).norm())
        .sum::<f64>()
        / n
}
