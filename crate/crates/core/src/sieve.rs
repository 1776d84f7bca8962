//! Sieve bases for the treatment (`u_{K1}(t)`) and the covariates (`v_{K2}(x)`).
//!
//! Raw power-series columns are orthonormalized against the empirical measure
//! `(1/N) Σᵢ` with modified Gram-Schmidt plus one re-orthogonalization pass.
//! The transform is stored so that new points can be mapped into the same
//! coordinates as the training sample.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Entries beyond this magnitude are treated as overflow.
const OVERFLOW_LIMIT: f64 = 1e300;
/// Relative residual norm under which a column counts as collinear.
const DROP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Powers `t⁰ … t^{K1−1}` of the treatment.
    TreatmentPoly { k1: usize },
    /// Monomials `∏ⱼ xⱼ^{λⱼ}` with `|λ| ≤ max_degree`. Without interactions only
    /// the pure powers `xⱼ^d` are kept.
    CovariatePoly { max_degree: usize, interactions: bool },
    /// Covariate columns taken verbatim by name.
    ExplicitColumns { names: Vec<String> },
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BasisSpec::TreatmentPoly { k1 } if *k1 == 0 => {
                Err(Error::InvalidInput("treatment basis needs K1 >= 1".into()))
            }
            BasisSpec::ExplicitColumns { names } if names.is_empty() => {
                Err(Error::InvalidInput("explicit basis needs at least one column".into()))
            }
            _ => Ok(()),
        }
    }

    /// Multi-indices of a covariate basis over `r` covariates.
    pub fn covariate_indices(&self, r: usize) -> Option<Vec<Vec<usize>>> {
        match self {
            BasisSpec::CovariatePoly { max_degree, interactions } => {
                let all = multi_indices(r, *max_degree);
                Some(if *interactions {
                    all
                } else {
                    all.into_iter()
                        .filter(|idx| idx.iter().filter(|&&e| e > 0).count() <= 1)
                        .collect()
                })
            }
            _ => None,
        }
    }
}

/// All `r`-tuples with component sum at most `max_degree`, ordered by total
/// degree and, within a degree, by descending lexicographic order.
///
/// `multi_indices(2, 2)` is `[(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)]`.
/// With no coordinates the only index is the empty one (the constant).
pub fn multi_indices(r: usize, max_degree: usize) -> Vec<Vec<usize>> {
    fn fill(rest: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(rest - 1, remaining - e, prefix, out);
            prefix.pop();
        }
    }

    if r == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for degree in 0..=max_degree {
        fill(r, degree, &mut Vec::with_capacity(r), &mut out);
    }
    out
}

fn check_finite_range(raw: &DMatrix<f64>) -> Result<()> {
    if let Some(v) = raw.iter().find(|v| !v.is_finite() || v.abs() > OVERFLOW_LIMIT) {
        return Err(Error::IllConditionedBasis(format!("basis entry {v:e} exceeds 1e300")));
    }
    Ok(())
}

/// Powers of the treatment, one row per point.
pub fn treatment_powers(t: &[f64], k1: usize) -> Result<DMatrix<f64>> {
    let mut raw = DMatrix::zeros(t.len(), k1);
    for (i, &ti) in t.iter().enumerate() {
        let mut power = 1.0;
        for k in 0..k1 {
            raw[(i, k)] = power;
            power *= ti;
        }
    }
    check_finite_range(&raw)?;
    Ok(raw)
}

/// Monomials `∏ⱼ xⱼ^{λⱼ}` for each multi-index, one row per point.
pub fn covariate_monomials(x: &DMatrix<f64>, indices: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let mut raw = DMatrix::zeros(x.nrows(), indices.len());
    for (k, idx) in indices.iter().enumerate() {
        if idx.len() != x.ncols() {
            return Err(Error::InvalidInput(format!(
                "multi-index of length {} for {} covariates",
                idx.len(),
                x.ncols()
            )));
        }
        for i in 0..x.nrows() {
            raw[(i, k)] = idx
                .iter()
                .enumerate()
                .map(|(j, &e)| x[(i, j)].powi(e as i32))
                .product();
        }
    }
    check_finite_range(&raw)?;
    Ok(raw)
}

fn explicit_columns(x: &DMatrix<f64>, available: &[String], names: &[String]) -> Result<DMatrix<f64>> {
    let mut raw = DMatrix::zeros(x.nrows(), names.len());
    for (k, name) in names.iter().enumerate() {
        let j = available
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown basis column '{name}'")))?;
        raw.set_column(k, &x.column(j));
    }
    check_finite_range(&raw)?;
    Ok(raw)
}

/// Raw (not orthonormalized) evaluation of `spec` on the sample.
pub fn evaluate_basis(spec: &BasisSpec, data: &Dataset) -> Result<DMatrix<f64>> {
    spec.validate()?;
    match spec {
        BasisSpec::TreatmentPoly { k1 } => treatment_powers(data.treatments(), *k1),
        BasisSpec::CovariatePoly { .. } => {
            let idx = spec.covariate_indices(data.n_covariates()).expect("covariate spec");
            covariate_monomials(data.covariates(), &idx)
        }
        BasisSpec::ExplicitColumns { names } => {
            explicit_columns(data.covariates(), data.covariate_names(), names)
        }
    }
}

/// An empirically orthonormalized basis.
///
/// `orthonormal = raw · transformᵀ`, where `transform` has one row per retained
/// column and one column per raw column.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveBasis {
    raw: DMatrix<f64>,
    transform: DMatrix<f64>,
    orthonormal: DMatrix<f64>,
    retained: Vec<usize>,
    dropped: Vec<usize>,
    spec: Option<BasisSpec>,
    covariate_names: Vec<String>,
}

impl SieveBasis {
    /// Evaluates and orthonormalizes `spec` on the sample.
    pub fn fit(spec: &BasisSpec, data: &Dataset) -> Result<Self> {
        let raw = evaluate_basis(spec, data)?;
        let mut basis = orthonormalize(&raw)?;
        basis.spec = Some(spec.clone());
        basis.covariate_names = data.covariate_names().to_vec();
        Ok(basis)
    }

    pub fn raw(&self) -> &DMatrix<f64> {
        &self.raw
    }

    /// N×K matrix of orthonormalized columns.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.orthonormal
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Indices of raw columns that survived orthonormalization.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// Indices of raw columns dropped as collinear.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn spec(&self) -> Option<&BasisSpec> {
        self.spec.as_ref()
    }

    /// Number of retained columns.
    pub fn dim(&self) -> usize {
        self.orthonormal.ncols()
    }

    /// Maps raw evaluations (columns in spec order) into orthonormal coordinates.
    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.transform.ncols() {
            return Err(Error::InvalidInput(format!(
                "raw evaluation has {} columns, basis expects {}",
                raw.ncols(),
                self.transform.ncols()
            )));
        }
        Ok(raw * self.transform.transpose())
    }

    /// Evaluates the fitted basis at new points: one column of treatment
    /// values for a treatment basis, or an M×r covariate matrix otherwise.
    pub fn evaluate_at(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("basis was built from a raw matrix; use apply()".into()))?;
        let raw = match spec {
            BasisSpec::TreatmentPoly { k1 } => {
                if points.ncols() != 1 {
                    return Err(Error::InvalidInput("treatment basis takes a single column".into()));
                }
                treatment_powers(points.column(0).as_slice(), *k1)?
            }
            BasisSpec::CovariatePoly { .. } => {
                let idx = spec.covariate_indices(points.ncols()).expect("covariate spec");
                covariate_monomials(points, &idx)?
            }
            BasisSpec::ExplicitColumns { names } => {
                explicit_columns(points, &self.covariate_names, names)?
            }
        };
        self.apply(&raw)
    }

    /// Convenience wrapper of [`evaluate_at`](Self::evaluate_at) for treatment points.
    pub fn evaluate_at_treatments(&self, t: &[f64]) -> Result<DMatrix<f64>> {
        self.evaluate_at(&DMatrix::from_column_slice(t.len(), 1, t))
    }

    /// Index of a retained column that is constant on the sample, if any,
    /// with its value.
    pub fn constant_column(&self) -> Option<(usize, f64)> {
        constant_column(&self.orthonormal)
    }
}

pub(crate) fn constant_column(m: &DMatrix<f64>) -> Option<(usize, f64)> {
    (0..m.ncols()).find_map(|k| {
        let col = m.column(k);
        let first = col[0];
        let tol = 1e-10 * first.abs().max(1e-300);
        (first != 0.0 && col.iter().all(|v| (v - first).abs() <= tol)).then_some((k, first))
    })
}

/// Empirical Gram-Schmidt: returns columns `q` with `(1/N) Σᵢ qᵢ qᵢᵀ = I`.
///
/// A column whose residual after projection falls below `1e-12` of its
/// original empirical norm (or which is identically zero) is dropped and
/// recorded.
pub fn orthonormalize(raw: &DMatrix<f64>) -> Result<SieveBasis> {
    let n = raw.nrows();
    let k = raw.ncols();
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("cannot orthonormalize an empty matrix".into()));
    }
    check_finite_range(raw)?;
    let inv_n = 1.0 / n as f64;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * inv_n;

    let mut q_cols: Vec<Vec<f64>> = Vec::new();
    let mut coefs: Vec<Vec<f64>> = Vec::new();
    let mut retained = Vec::new();
    let mut dropped = Vec::new();

    for j in 0..k {
        let original: Vec<f64> = raw.column(j).iter().copied().collect();
        let orig_norm = dot(&original, &original).sqrt();
        if orig_norm == 0.0 {
            dropped.push(j);
            continue;
        }
        let mut w = original;
        let mut c = vec![0.0; k];
        c[j] = 1.0;
        for _pass in 0..2 {
            for (q, qc) in q_cols.iter().zip(&coefs) {
                let proj = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= proj * qi;
                }
                for (ci, qci) in c.iter_mut().zip(qc) {
                    *ci -= proj * qci;
                }
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm < DROP_TOLERANCE * orig_norm || !norm.is_finite() {
            dropped.push(j);
            continue;
        }
        w.iter_mut().for_each(|v| *v /= norm);
        c.iter_mut().for_each(|v| *v /= norm);
        q_cols.push(w);
        coefs.push(c);
        retained.push(j);
    }

    if q_cols.is_empty() {
        return Err(Error::IllConditionedBasis("every basis column was dropped".into()));
    }
    if q_cols.len() > n {
        return Err(Error::InvalidInput(format!(
            "{} retained columns exceed {} observations",
            q_cols.len(),
            n
        )));
    }

    let kept = q_cols.len();
    let transform = DMatrix::from_fn(kept, k, |a, b| coefs[a][b]);
    let orthonormal = DMatrix::from_fn(n, kept, |i, a| q_cols[a][i]);
    Ok(SieveBasis {
        raw: raw.clone(),
        transform,
        orthonormal,
        retained,
        dropped,
        spec: None,
        covariate_names: Vec::new(),
    })
}

/// Largest absolute deviation of `(1/N) QᵀQ` from the identity.
pub fn gram_deviation(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows() as f64;
    let gram = q.transpose() * q / n;
    let mut worst: f64 = 0.0;
    for a in 0..gram.nrows() {
        for b in 0..gram.ncols() {
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((gram[(a, b)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn multi_index_order() {
        let idx = multi_indices(2, 2);
        let expected: Vec<Vec<usize>> =
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(idx, expected);
        assert_eq!(multi_indices(4, 2).len(), 15);
        assert_eq!(multi_indices(3, 0), vec![vec![0, 0, 0]]);
        assert_eq!(multi_indices(0, 3), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn multi_index_count_law() {
        for r in 0..=6 {
            for d in 0..=4 {
                assert_eq!(multi_indices(r, d).len(), binomial(r + d, d), "r={r} d={d}");
            }
        }
    }

    #[test]
    fn pure_power_basis_has_nine_terms_for_four_covariates() {
        let spec = BasisSpec::CovariatePoly { max_degree: 2, interactions: false };
        let idx = spec.covariate_indices(4).unwrap();
        assert_eq!(idx.len(), 9);
        assert_eq!(idx[5], vec![2, 0, 0, 0]);
        assert_eq!(idx[8], vec![0, 0, 0, 2]);
    }

    #[test]
    fn raw_evaluations() {
        let r = treatment_powers(&[2.0], 3).unwrap();
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);
        let r = treatment_powers(&[-1.5], 4).unwrap();
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.5, 2.25, -3.375]);
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 5.0]);
        let r = covariate_monomials(&x, &multi_indices(2, 1)).unwrap();
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
        assert!(matches!(treatment_powers(&[1e200], 3), Err(Error::IllConditionedBasis(_))));
    }

    #[test]
    fn constant_column_is_already_unit() {
        let raw = DMatrix::from_element(3, 1, 1.0);
        let b = orthonormalize(&raw).unwrap();
        assert_eq!(b.matrix().column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn centers_and_scales_second_column() {
        let raw = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.0, 1.0]);
        let b = orthonormalize(&raw).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(b.matrix()[(0, 1)], -1.0 / s, epsilon = 1e-14);
        assert_abs_diff_eq!(b.matrix()[(1, 1)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.matrix()[(2, 1)], 1.0 / s, epsilon = 1e-14);
        assert_abs_diff_eq!(b.matrix()[(0, 1)], -1.224744871391589, epsilon = 1e-12);
    }

    #[test]
    fn drops_collinear_and_zero_columns() {
        let raw = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let b = orthonormalize(&raw).unwrap();
        assert_eq!(b.dropped(), &[1]);
        assert_eq!(b.dim(), 1);

        let raw = DMatrix::from_column_slice(3, 2, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let b = orthonormalize(&raw).unwrap();
        assert_eq!(b.dropped(), &[0]);
    }

    #[test]
    fn evaluate_at_reuses_transform() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
        let data = Dataset::new(vec![0.0; 3], vec![-1.0, 0.0, 1.0], x).unwrap();
        let basis = SieveBasis::fit(&BasisSpec::TreatmentPoly { k1: 2 }, &data).unwrap();
        let at_zero = basis.evaluate_at_treatments(&[0.0]).unwrap();
        assert_abs_diff_eq!(at_zero[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(at_zero[(0, 1)], 0.0, epsilon = 1e-14);
        let at_train = basis.evaluate_at_treatments(data.treatments()).unwrap();
        assert_eq!(&at_train, basis.matrix());

        let constant = SieveBasis::fit(&BasisSpec::TreatmentPoly { k1: 1 }, &data).unwrap();
        assert_eq!(constant.evaluate_at_treatments(&[42.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn explicit_columns_by_name() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 7.0]);
        let data = Dataset::new(vec![0.0; 3], vec![0.0; 3], x).unwrap();
        let spec = BasisSpec::ExplicitColumns { names: vec!["x2".into()] };
        assert_eq!(evaluate_basis(&spec, &data).unwrap().column(0).as_slice(), &[4.0, 5.0, 7.0]);
        let bad = BasisSpec::ExplicitColumns { names: vec!["nope".into()] };
        assert!(evaluate_basis(&bad, &data).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_identity_and_span(
            seed_rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 30..80),
            degree in 1usize..=3,
        ) {
            let n = seed_rows.len();
            let x = DMatrix::from_fn(n, 3, |i, j| seed_rows[i][j]);
            let idx = multi_indices(3, degree);
            let raw = covariate_monomials(&x, &idx).unwrap();
            prop_assume!(raw.ncols() <= n);
            let b = orthonormalize(&raw).unwrap();
            prop_assert!(gram_deviation(b.matrix()) < 1e-10);

            // span: project every retained raw column on Q
            let q = b.matrix();
            for &j in b.retained() {
                let col = raw.column(j).into_owned();
                let coef = q.transpose() * &col / n as f64;
                let resid = &col - q * coef;
                prop_assert!(resid.norm() < 1e-8 * col.norm().max(1e-300));
            }
        }
    }
}
