//! Stabilized weights from the entropy-balancing dual.
//!
//! The weights solve
//!
//! ```text
//! max −Σᵢ πᵢ log πᵢ   s.t.   (1/N) Σᵢ πᵢ u(Tᵢ) v(Xᵢ)ᵀ = ū v̄ᵀ
//! ```
//!
//! through its unconstrained dual: `Λ̂` maximizes the strictly concave
//!
//! ```text
//! Ĝ(Λ) = (1/N) Σᵢ ρ(uᵢᵀ Λ vᵢ) − ūᵀ Λ v̄,      ρ(s) = −e^{−s−1},
//! ```
//!
//! and `π̂ᵢ = ρ′(uᵢᵀ Λ̂ vᵢ) = e^{−uᵢᵀΛ̂vᵢ−1}`. The stationarity condition of `Ĝ`
//! is exactly the balance constraint, so the gradient at the optimum doubles
//! as the balance residual.
//!
//! Internally `Λ` is handled as `vec(Λ)` (column-major), so observation `i`
//! contributes the regressor `zᵢ = vᵢ ⊗ uᵢ`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sieve::constant_column;

/// `ρ(s) = −e^{−s−1}`.
#[inline]
pub fn rho(s: f64) -> f64 {
    -(-s - 1.0).exp()
}

/// `ρ′(s) = e^{−s−1}`.
#[inline]
pub fn rho_prime(s: f64) -> f64 {
    (-s - 1.0).exp()
}

/// `ρ″(s) = −e^{−s−1} = −ρ′(s)`.
#[inline]
pub fn rho_second(s: f64) -> f64 {
    -rho_prime(s)
}

fn check_shapes(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != v.nrows() {
        return Err(Error::InvalidInput(format!(
            "treatment basis has {} rows, covariate basis {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.nrows() == 0 || u.ncols() == 0 || v.ncols() == 0 {
        return Err(Error::InvalidInput("empty basis matrix".into()));
    }
    Ok(())
}

/// Row-wise Kronecker products `zᵢ = vᵢ ⊗ uᵢ` (N×K1K2).
pub fn tensor_rows(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (k1, k2) = (u.ncols(), v.ncols());
    DMatrix::from_fn(u.nrows(), k1 * k2, |i, idx| u[(i, idx % k1)] * v[(i, idx / k1)])
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// `vec(ū v̄ᵀ)`, the balance target.
fn target(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DVector<f64> {
    let ubar = column_means(u);
    let vbar = column_means(v);
    let k1 = u.ncols();
    DVector::from_fn(k1 * v.ncols(), |idx, _| ubar[idx % k1] * vbar[idx / k1])
}

fn unvec(x: &DVector<f64>, k1: usize, k2: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(k1, k2, x.as_slice())
}

/// Value and gradient of `Ĝ` at `Λ` (K1×K2).
pub fn dual_objective(
    lambda: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_shapes(u, v)?;
    if lambda.nrows() != u.ncols() || lambda.ncols() != v.ncols() {
        return Err(Error::InvalidInput(format!(
            "Lambda is {}x{}, bases need {}x{}",
            lambda.nrows(),
            lambda.ncols(),
            u.ncols(),
            v.ncols()
        )));
    }
    let n = u.nrows() as f64;
    let ubar = column_means(u);
    let vbar = column_means(v);
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(u.ncols(), v.ncols());
    for i in 0..u.nrows() {
        let ui = u.row(i).transpose();
        let vi = v.row(i).transpose();
        let s = (ui.transpose() * lambda * &vi)[(0, 0)];
        let w = rho_prime(s);
        if !w.is_finite() {
            return Err(Error::Divergence(format!("exp(-s-1) overflowed at s = {s:e}")));
        }
        value -= w;
        grad += (w / n) * &ui * vi.transpose();
    }
    value = value / n - (ubar.transpose() * lambda * &vbar)[(0, 0)];
    grad -= &ubar * vbar.transpose();
    Ok((value, grad))
}

/// `(1/N) Σᵢ πᵢ uᵢ vᵢᵀ − ū v̄ᵀ`.
pub fn balance_residual(weights: &[f64], u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(u, v)?;
    if weights.len() != u.nrows() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} observations",
            weights.len(),
            u.nrows()
        )));
    }
    let n = u.nrows() as f64;
    let mut acc = DMatrix::zeros(u.ncols(), v.ncols());
    for (i, &w) in weights.iter().enumerate() {
        acc += (w / n) * u.row(i).transpose() * v.row(i);
    }
    Ok(acc - column_means(u) * column_means(v).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightOptions {
    /// Relative tolerance on the gradient max-norm: stop once
    /// `max|∇Ĝ| ≤ tol·min(1 + |Ĝ|, 10)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the negated Hessian, relative to its mean diagonal.
    pub ridge: f64,
    /// `‖Λ‖_F` beyond which a still-unbalanced iterate is declared infeasible.
    pub lambda_limit: f64,
    /// Smallest admissible eigenvalue of the weighted second-moment matrix of
    /// `zᵢ` relative to the unweighted one. Below it the optimum sits on the
    /// boundary of the simplex (some weights forced to zero) and the
    /// constraints are reported infeasible.
    pub degeneracy_tol: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, ridge: 1e-10, lambda_limit: 1e6, degeneracy_tol: 1e-7 }
    }
}

/// One accepted Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub objective: f64,
    pub gradient_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    /// Fitted dual coefficients `Λ̂` (K1×K2).
    pub lambda: DMatrix<f64>,
    /// `π̂ᵢ = e^{−uᵢᵀΛ̂vᵢ−1}`.
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Max-norm of `∇Ĝ(Λ̂)`.
    pub gradient_norm: f64,
    /// `(1/N) Σ π̂ᵢ uᵢ vᵢᵀ − ū v̄ᵀ`, equal to `∇Ĝ(Λ̂)`.
    pub balance_residual: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<StepRecord>,
}

impl WeightSolution {
    /// Turns a non-converged solution into [`Error::NotConverged`].
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                solver: "dual Newton",
                iterations: self.iterations,
                residual: self.gradient_norm,
            })
        }
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.balance_residual.amax()
    }

    pub fn summary(&self) -> WeightSummary {
        let n = self.weights.len() as f64;
        WeightSummary {
            min: self.weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: self.weights.iter().sum::<f64>() / n,
            balance_residual_max_abs: self.max_abs_residual(),
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Diagnostics reported alongside every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub balance_residual_max_abs: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct DualEval {
    value: f64,
    gradient: DVector<f64>,
    weights: DVector<f64>,
}

fn eval_dual(z: &DMatrix<f64>, b: &DVector<f64>, lambda: &DVector<f64>) -> Option<DualEval> {
    let n = z.nrows() as f64;
    let s = z * lambda;
    let weights = s.map(rho_prime);
    if weights.iter().any(|w| !w.is_finite()) {
        return None;
    }
    let value = -weights.sum() / n - b.dot(lambda);
    let gradient = z.tr_mul(&weights) / n - b;
    value.is_finite().then_some(DualEval { value, gradient, weights })
}

/// Solves `(H + ridge·I) d = g` for the negated Hessian `H = (1/N) Zᵀ diag(w) Z`,
/// raising the ridge until the Cholesky factorization succeeds.
fn newton_direction(
    z: &DMatrix<f64>,
    w: &DVector<f64>,
    g: &DVector<f64>,
    ridge: f64,
) -> Option<DVector<f64>> {
    let n = z.nrows() as f64;
    let k = z.ncols();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for i in 0..z.nrows() {
        let zi = z.row(i);
        let wi = w[i] / n;
        for a in 0..k {
            let za = wi * zi[a];
            if za == 0.0 {
                continue;
            }
            for c in a..k {
                h[(a, c)] += za * zi[c];
            }
        }
    }
    for a in 0..k {
        for c in 0..a {
            h[(a, c)] = h[(c, a)];
        }
    }
    let scale = (h.trace() / k as f64).max(f64::MIN_POSITIVE);
    let mut damping = ridge * scale;
    for _ in 0..12 {
        let mut hd = h.clone();
        for a in 0..k {
            hd[(a, a)] += damping;
        }
        if let Some(chol) = hd.cholesky() {
            let d = chol.solve(g);
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        damping = if damping == 0.0 { 1e-12 * scale } else { damping * 100.0 };
    }
    None
}

/// Starting point with `π ≡ 1` where the bases allow it: the exact constant
/// entry when both bases carry a constant column, otherwise the least-squares
/// fit of `zᵢᵀ vec(Λ) = −1`, which is equivariant under basis changes.
fn initial_lambda(u: &DMatrix<f64>, v: &DMatrix<f64>, z: &DMatrix<f64>) -> DVector<f64> {
    let k1 = u.ncols();
    let mut lambda = DVector::zeros(z.ncols());
    if let (Some((a, cu)), Some((c, cv))) = (constant_column(u), constant_column(v)) {
        lambda[a + k1 * c] = -1.0 / (cu * cv);
        return lambda;
    }
    let rhs = DVector::from_element(z.nrows(), -1.0);
    match z.clone().svd(true, true).solve(&rhs, 1e-12 * z.amax().max(1.0)) {
        Ok(fit) if fit.iter().all(|x| x.is_finite()) => fit,
        _ => lambda,
    }
}

/// Squared Newton decrement below which no further ascent is resolvable.
const DECREMENT_FLOOR: f64 = 1e-15;
const ROUNDING_SLACK: f64 = 1e-13;
/// Largest factor `1 + |Ĝ|` may contribute to the stopping threshold. An
/// unbounded dual (infeasible constraints) otherwise loosens the test.
const OBJECTIVE_SCALE_CAP: f64 = 10.0;

fn gradient_threshold(tol: f64, objective: f64) -> f64 {
    tol * (1.0 + objective.abs()).min(OBJECTIVE_SCALE_CAP)
}

/// Smallest generalized eigenvalue of `Zᵀdiag(w)Z` against `ZᵀZ`, or `None`
/// when `ZᵀZ` itself is singular.
fn relative_min_eigen(z: &DMatrix<f64>, w: &DVector<f64>) -> Option<f64> {
    let n = z.nrows() as f64;
    let plain = z.tr_mul(z) / n;
    let weighted = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * w[i]).tr_mul(z) / n;
    let l = plain.cholesky()?.l();
    let linv = l.try_inverse()?;
    let m = &linv * weighted * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Some(m.symmetric_eigenvalues().min())
}

/// Maximizes `Ĝ` by damped Newton with Armijo backtracking.
///
/// Starts from uniform weights whenever the constant lies in the span of the
/// tensor basis.
/// Stops on the gradient test or, for badly scaled bases, once the squared
/// Newton decrement `gᵀH⁻¹g` is below the resolution of `Ĝ` and full steps
/// stop reducing the gradient.
/// Returns a solution with `converged == false` when `max_iter` is exhausted;
/// [`Error::InfeasibleBalance`] when `‖Λ‖` runs past `lambda_limit` with the
/// gradient still above tolerance, or when the optimum is degenerate (see
/// [`WeightOptions::degeneracy_tol`]).
pub fn solve_weights(u: &DMatrix<f64>, v: &DMatrix<f64>, opts: &WeightOptions) -> Result<WeightSolution> {
    check_shapes(u, v)?;
    let (k1, k2) = (u.ncols(), v.ncols());
    let z = tensor_rows(u, v);
    let b = target(u, v);

    let mut lambda = initial_lambda(u, v, &z);

    let mut current = eval_dual(&z, &b, &lambda)
        .ok_or_else(|| Error::Divergence("objective not finite at the starting point".into()))?;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let gnorm = current.gradient.amax();
        if gnorm <= gradient_threshold(opts.tol, current.value) {
            converged = true;
            break;
        }
        if lambda.norm() > opts.lambda_limit {
            return Err(Error::InfeasibleBalance {
                iterations,
                lambda_norm: lambda.norm(),
                gradient_norm: gnorm,
            });
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let Some(direction) = newton_direction(&z, &current.weights, &current.gradient, opts.ridge) else {
            return Err(Error::SingularMatrix { context: "dual Hessian", condition: f64::INFINITY });
        };
        let slope = current.gradient.dot(&direction);
        if slope <= DECREMENT_FLOOR * (1.0 + current.value.abs()) {
            // Ĝ can no longer resolve the gain; take the full step while it
            // still shrinks the gradient, otherwise stop at the numerical optimum.
            match eval_dual(&z, &b, &(&lambda + &direction)) {
                Some(eval) if eval.gradient.amax() < gnorm => {
                    lambda += &direction;
                    current = eval;
                    history.push(StepRecord {
                        objective: current.value,
                        gradient_norm: current.gradient.amax(),
                        step_length: 1.0,
                    });
                    continue;
                }
                _ => {
                    converged = gnorm <= opts.tol * OBJECTIVE_SCALE_CAP;
                    break;
                }
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        // Near the optimum Ĝ stops resolving the Armijo gain before the
        // gradient reaches tolerance; accept a full step that halves it.
        if let Some(eval) = eval_dual(&z, &b, &(&lambda + &direction)) {
            let within_rounding = eval.value >= current.value - ROUNDING_SLACK * (1.0 + current.value.abs());
            if within_rounding && eval.gradient.amax() <= 0.5 * gnorm {
                accepted = Some((&lambda + &direction, eval));
            }
        }
        for _ in 0..60 {
            if accepted.is_some() {
                break;
            }
            let trial = &lambda + step * &direction;
            if let Some(eval) = eval_dual(&z, &b, &trial) {
                if eval.value >= current.value + 1e-4 * step * slope {
                    accepted = Some((trial, eval));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, eval)) = accepted else {
            // No ascent possible at machine precision; keep the current iterate.
            break;
        };
        lambda = next;
        current = eval;
        history.push(StepRecord {
            objective: current.value,
            gradient_norm: current.gradient.amax(),
            step_length: step,
        });
    }

    if converged {
        if let Some(ratio) = relative_min_eigen(&z, &current.weights) {
            if ratio < opts.degeneracy_tol {
                return Err(Error::InfeasibleBalance {
                    iterations,
                    lambda_norm: lambda.norm(),
                    gradient_norm: current.gradient.amax(),
                });
            }
        }
    }
    if !converged && lambda.norm() > opts.lambda_limit {
        return Err(Error::InfeasibleBalance {
            iterations,
            lambda_norm: lambda.norm(),
            gradient_norm: current.gradient.amax(),
        });
    }

    let weights: Vec<f64> = current.weights.iter().copied().collect();
    Ok(WeightSolution {
        lambda: unvec(&lambda, k1, k2),
        objective: current.value,
        gradient_norm: current.gradient.amax(),
        balance_residual: unvec(&current.gradient, k1, k2),
        weights,
        converged,
        iterations,
        history,
    })
}

/// Reference solver for the primal entropy program, used to cross-check the
/// dual on small instances (N ≤ a few hundred, K1·K2 ≤ ~10).
///
/// Runs an infeasible-start Newton method on the primal KKT system of
/// `min Σ πᵢ log πᵢ` subject to `(1/N) Zᵀπ = vec(ū v̄ᵀ)`, keeping `π > 0`.
pub fn primal_entropy_oracle(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shapes(u, v)?;
    let n = u.nrows();
    let a = tensor_rows(u, v).transpose() / n as f64; // K×N
    let c = target(u, v);
    let k = a.nrows();

    let mut pi = DVector::from_element(n, 1.0);
    let mut nu = DVector::zeros(k);

    let residual = |pi: &DVector<f64>, nu: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let dual = pi.map(|p| p.ln() + 1.0) + a.tr_mul(nu);
        let primal = &a * pi - &c;
        (dual, primal)
    };
    let norm2 = |r: &(DVector<f64>, DVector<f64>)| (r.0.norm_squared() + r.1.norm_squared()).sqrt();

    for _ in 0..500 {
        let r = residual(&pi, &nu);
        let rnorm = norm2(&r);
        if rnorm < 1e-13 {
            return Ok(pi.iter().copied().collect());
        }
        // Block elimination with D = diag(π), the inverse Hessian of Σ π log π.
        let d = pi.clone();
        let ad = DMatrix::from_fn(k, n, |row, col| a[(row, col)] * d[col]);
        let schur = &ad * a.transpose();
        let rhs = &r.1 - &ad * &r.0;
        let chol = schur.clone().cholesky().ok_or_else(|| {
            Error::InfeasibleBalance { iterations: 0, lambda_norm: f64::NAN, gradient_norm: rnorm }
        })?;
        let dnu = chol.solve(&rhs);
        let dpi = -d.component_mul(&(&r.0 + a.tr_mul(&dnu)));

        let mut step = 1.0;
        while (0..n).any(|i| pi[i] + step * dpi[i] <= 0.0) {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial_pi = &pi + step * &dpi;
            let trial_nu = &nu + step * &dnu;
            if trial_pi.iter().all(|&p| p > 0.0) {
                let rt = residual(&trial_pi, &trial_nu);
                if norm2(&rt) <= (1.0 - 0.01 * step) * rnorm {
                    pi = trial_pi;
                    nu = trial_nu;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::InfeasibleBalance {
                iterations: 0,
                lambda_norm: nu.norm(),
                gradient_norm: rnorm,
            });
        }
    }
    Err(Error::NotConverged { solver: "primal entropy Newton", iterations: 500, residual: norm2(&residual(&pi, &nu)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn col(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn objective_at_zero() {
        let u = DMatrix::from_element(4, 1, 1.0);
        let v = col(&[0.3, -1.0, 2.0, 0.1]);
        let (value, _) = dual_objective(&DMatrix::zeros(1, 1), &u, &v).unwrap();
        assert_abs_diff_eq!(value, -(-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(value, -0.3678794, epsilon = 1e-7);

        let u = DMatrix::from_element(2, 1, 1.0);
        let v = col(&[0.0, 2.0]);
        let (_, grad) = dual_objective(&DMatrix::zeros(1, 1), &u, &v).unwrap();
        assert_abs_diff_eq!(grad[(0, 0)], (-1.0f64).exp() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s: f64 = rng.random_range(-30.0..30.0);
            assert_eq!(rho_second(s), -rho_prime(s));
        }
    }

    #[test]
    fn constant_bases_give_unit_weights() {
        let u = DMatrix::from_element(5, 1, 1.0);
        let v = DMatrix::from_element(5, 1, 1.0);
        let sol = solve_weights(&u, &v, &WeightOptions::default()).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.lambda[(0, 0)], -1.0, epsilon = 1e-12);
        assert!(sol.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_treatment_basis_gives_unit_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let u = DMatrix::from_element(n, 1, 1.0);
        let v = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
        let sol = solve_weights(&u, &v, &WeightOptions::default()).unwrap();
        assert!(sol.weights.iter().all(|&w| (w - 1.0).abs() < 1e-10));
    }

    #[test]
    fn residual_arithmetic() {
        let u = DMatrix::from_element(2, 1, 1.0);
        let v = col(&[0.0, 2.0]);
        assert_abs_diff_eq!(balance_residual(&[1.0, 1.0], &u, &v).unwrap()[(0, 0)], 0.0);

        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let r = balance_residual(&[1.0, 1.0], &u, &v).unwrap();
        assert_abs_diff_eq!(r[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn balanced_two_by_two_design() {
        let t = [0.0, 0.0, 1.0, 1.0];
        let x = [0.0, 1.0, 0.0, 1.0];
        let u = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let v = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let primal = primal_entropy_oracle(&u, &v).unwrap();
        for p in primal {
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-10);
        }
        let primal = primal_entropy_oracle(&DMatrix::from_element(3, 1, 1.0), &DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert!(primal.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn detects_infeasible_constraints() {
        // u = v = [1, t] forces a zero weighted variance of t.
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        let u = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let err = solve_weights(&u, &u, &WeightOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBalance { .. } | Error::Divergence(_)), "{err:?}");
    }

    #[test]
    fn iteration_budget_flags_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let t: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<f64> = t.iter().map(|ti| ti + rng.sample::<f64, _>(StandardNormal)).collect();
        let u = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        let v = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let opts = WeightOptions { max_iter: 1, ..Default::default() };
        let sol = solve_weights(&u, &v, &opts).unwrap();
        assert!(!sol.converged);
        assert!(matches!(sol.ensure_converged(), Err(Error::NotConverged { .. })));
    }

    fn random_design(seed: u64, n: usize, k1: usize, k2: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k2.saturating_sub(1)).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let t: Vec<f64> = x
            .iter()
            .map(|xi| 0.3 * xi.iter().sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u = DMatrix::from_fn(n, k1, |i, j| t[i].powi(j as i32));
        let v = DMatrix::from_fn(n, k2, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        (u, v)
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_matches_finite_difference(seed in 0u64..1000, scale in 0.0f64..0.3) {
            let (u, v) = random_design(seed, 30, 2, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let lambda = DMatrix::from_fn(2, 3, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            let (_, grad) = dual_objective(&lambda, &u, &v).unwrap();
            let h = 1e-6;
            for a in 0..2 {
                for c in 0..3 {
                    let mut up = lambda.clone();
                    let mut dn = lambda.clone();
                    up[(a, c)] += h;
                    dn[(a, c)] -= h;
                    let fd = (dual_objective(&up, &u, &v).unwrap().0 - dual_objective(&dn, &u, &v).unwrap().0) / (2.0 * h);
                    proptest::prop_assert!((fd - grad[(a, c)]).abs() < 1e-6, "{fd} vs {}", grad[(a, c)]);
                }
            }
        }

        #[test]
        fn dual_matches_primal(seed in 0u64..1000, n in 60usize..150, k1 in 1usize..4, k2 in 1usize..4) {
            let (u, v) = random_design(seed, n, k1, k2);
            let sol = solve_weights(&u, &v, &WeightOptions::default());
            proptest::prop_assume!(sol.is_ok());
            let sol = sol.unwrap();
            proptest::prop_assert!(sol.converged);
            proptest::prop_assert!(sol.max_abs_residual() < 1e-8);
            let primal = primal_entropy_oracle(&u, &v).unwrap();
            for (d, p) in sol.weights.iter().zip(&primal) {
                proptest::prop_assert!((d - p).abs() < 1e-6, "{d} vs {p}");
            }
            let mean = sol.weights.iter().sum::<f64>() / n as f64;
            proptest::prop_assert!((mean - 1.0).abs() < 1e-8);
            proptest::prop_assert!(sol.weights.iter().all(|&w| w > 0.0));
        }

        #[test]
        fn weights_invariant_to_basis_reparameterization(seed in 0u64..1000) {
            let (u, v) = random_design(seed, 50, 3, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal));
            let c = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal));
            proptest::prop_assume!(a.determinant().abs() > 0.1 && c.determinant().abs() > 0.1);
            // Small random designs are occasionally infeasible.
            let base = solve_weights(&u, &v, &WeightOptions::default());
            proptest::prop_assume!(base.is_ok());
            let base = base.unwrap();
            let moved = solve_weights(&(&u * &a), &(&v * &c), &WeightOptions::default()).unwrap();
            proptest::prop_assert!(moved.converged);
            for (p, q) in base.weights.iter().zip(&moved.weights) {
                proptest::prop_assert!((p - q).abs() < 1e-6, "{p} vs {q}");
            }
        }
    }
}
