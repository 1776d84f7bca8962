//! Simulation designs and the replicated Monte Carlo harness.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::pipeline::{estimate, estimate_with_known_weights, EstimatorConfig};

/// Number of covariates in every design.
pub const N_COVARIATES: usize = 4;
/// Standard deviation of the treatment noise `ξ`.
pub const XI_SD: f64 = 3.0;
/// Standard deviation of the outcome noise `ε`.
pub const EPS_SD: f64 = 5.0;
/// True `(β₁, β₂)` of `E[Y*(t)] = β₁ + β₂t` in every design.
pub const TRUE_BETA: [f64; 2] = [1.0, 1.0];
/// Failure share above which a cell is flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.01;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SWBAL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// Linear treatment, linear outcome.
    #[serde(rename = "DGP1")]
    Dgp1,
    /// Nonlinear treatment, nonlinear outcome.
    #[serde(rename = "DGP2")]
    Dgp2,
    /// Nonlinear treatment, linear outcome.
    #[serde(rename = "NLT")]
    Nlt,
    /// Linear treatment, nonlinear outcome.
    #[serde(rename = "NLY")]
    Nly,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Dgp1, Preset::Dgp2, Preset::Nlt, Preset::Nly];

    fn nonlinear_treatment(self) -> bool {
        matches!(self, Preset::Dgp2 | Preset::Nlt)
    }

    fn nonlinear_outcome(self) -> bool {
        matches!(self, Preset::Dgp2 | Preset::Nly)
    }

    /// `(T, Y)` for covariates `x` and noise draws `ξ`, `ε`.
    pub fn evaluate(self, x: &[f64], xi: f64, eps: f64) -> (f64, f64) {
        let t = if self.nonlinear_treatment() {
            (x[0] + 0.5).powi(2) + 0.4 * (x[1] + x[2] + x[3]) + xi
        } else {
            x[0] + x[1] + 0.2 * x[2] + 0.2 * x[3] + xi
        };
        let y = if self.nonlinear_outcome() {
            0.75 * x[0] * x[0] + 0.2 * (x[1] + 0.5).powi(2) + t + eps
        } else {
            1.0 + x[0] + 0.1 * (x[1] + x[2] + x[3]) + t + eps
        };
        (t, y)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Dgp1 => "DGP1",
            Preset::Dgp2 => "DGP2",
            Preset::Nlt => "NLT",
            Preset::Nly => "NLY",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "DGP1" | "DGP-1" => Ok(Preset::Dgp1),
            "2" | "DGP2" | "DGP-2" => Ok(Preset::Dgp2),
            "NLT" => Ok(Preset::Nlt),
            "NLY" => Ok(Preset::Nly),
            other => Err(Error::InvalidInput(format!("unknown design '{other}' (expected 1, 2, NLT or NLY)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub preset: Preset,
    /// Equicorrelation of the covariates, in `[0, 1)`.
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidInput(format!("rho must lie in [0,1), got {}", self.rho)));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("need N >= 2, got {}", self.n)));
        }
        Ok(())
    }

    /// One draw using `self.seed`.
    pub fn sample(&self) -> Result<Dataset> {
        generate(self, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }
}

/// N×r draws from `N(0, Σ)` with unit diagonal and off-diagonal `ρ`.
pub fn equicorrelated_normal<R: Rng + ?Sized>(r: usize, rho: f64, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [0,1), got {rho}")));
    }
    let sigma = DMatrix::from_fn(r, r, |a, b| if a == b { 1.0 } else { rho });
    let l = sigma
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("equicorrelation matrix is not positive definite".into()))?
        .l();
    let mut z = DMatrix::<f64>::zeros(n, r);
    for i in 0..n {
        for j in 0..r {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(z * l.transpose())
}

/// Noise used by [`generate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Gaussian,
    /// `ξ = ε = 0`; covariates are still drawn.
    Zero,
}

pub fn generate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Dataset> {
    generate_with(spec, rng, Noise::Gaussian)
}

pub fn generate_with<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R, noise: Noise) -> Result<Dataset> {
    spec.validate()?;
    let x = equicorrelated_normal(N_COVARIATES, spec.rho, spec.n, rng)?;
    let mut draw = |sd: f64| match noise {
        Noise::Gaussian => sd * rng.sample::<f64, _>(StandardNormal),
        Noise::Zero => 0.0,
    };
    let xi: Vec<f64> = (0..spec.n).map(|_| draw(XI_SD)).collect();
    let eps: Vec<f64> = (0..spec.n).map(|_| draw(EPS_SD)).collect();
    let mut t = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let (ti, yi) = spec.preset.evaluate(&row, xi[i], eps[i]);
        t.push(ti);
        y.push(yi);
    }
    Dataset::new(y, t, x)
}

/// True stabilized weights `f_T(T) / f_{T|X}(T|X)` for designs whose
/// treatment is linear in the covariates; `None` otherwise.
pub fn oracle_weights(preset: Preset, rho: f64, data: &Dataset) -> Option<Vec<f64>> {
    if preset.nonlinear_treatment() {
        return None;
    }
    let a = [1.0, 1.0, 0.2, 0.2];
    let mut var_index = 0.0;
    for (j, aj) in a.iter().enumerate() {
        for (k, ak) in a.iter().enumerate() {
            var_index += aj * ak * if j == k { 1.0 } else { rho };
        }
    }
    let s2_marg = var_index + XI_SD * XI_SD;
    let s2_cond = XI_SD * XI_SD;
    let x = data.covariates();
    Some(
        data.treatments()
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mean: f64 = (0..N_COVARIATES).map(|j| a[j] * x[(i, j)]).sum();
                let log_marg = -0.5 * t * t / s2_marg - 0.5 * s2_marg.ln();
                let log_cond = -0.5 * (t - mean).powi(2) / s2_cond - 0.5 * s2_cond.ln();
                (log_marg - log_cond).exp()
            })
            .collect(),
    )
}

/// Seed of replication `j`, a function of `(base_seed, j)` only.
pub fn child_seed(base_seed: u64, j: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(base_seed) ^ j)
}

/// Worker-thread cap from `SWBAL_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimator {
    pub label: String,
    pub config: EstimatorConfig,
    /// Fit with the true weights instead of estimated ones.
    pub known_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefStats {
    pub bias: f64,
    pub stdev: f64,
    pub rmse: f64,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub preset: Preset,
    pub rho: f64,
    pub n: usize,
    pub estimator: String,
    /// Covariate basis dimension `K2`.
    pub k2: Option<usize>,
    pub reps: usize,
    pub failures: usize,
    pub flagged: bool,
    /// One entry per coefficient.
    pub coefs: Vec<CoefStats>,
}

/// Bias, sd (J−1 denominator), RMSE (J denominator) and coverage.
pub fn summarize(estimates: &[f64], covered: &[bool], truth: f64) -> CoefStats {
    let j = estimates.len() as f64;
    if estimates.is_empty() {
        return CoefStats { bias: f64::NAN, stdev: f64::NAN, rmse: f64::NAN, cp: f64::NAN };
    }
    let mean = estimates.iter().sum::<f64>() / j;
    let ss: f64 = estimates.iter().map(|e| (e - mean).powi(2)).sum();
    let stdev = if estimates.len() > 1 { (ss / (j - 1.0)).sqrt() } else { f64::NAN };
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / j).sqrt();
    let cp = covered.iter().filter(|&&c| c).count() as f64 / covered.len().max(1) as f64;
    CoefStats { bias: mean - truth, stdev, rmse, cp }
}

type Outcome = Option<(Vec<f64>, Vec<bool>)>;

fn replicate(spec: &DgpSpec, estimators: &[SimEstimator], seed: u64) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Ok(data) = generate(spec, &mut rng) else {
        return vec![None; estimators.len()];
    };
    let covers = |ci: &[(f64, f64)]| -> Vec<bool> {
        ci.iter().zip(TRUE_BETA.iter().chain(std::iter::repeat(&f64::NAN))).map(|(c, b)| c.0 <= *b && *b <= c.1).collect()
    };
    estimators
        .iter()
        .map(|est| {
            if est.known_weights {
                let w = oracle_weights(spec.preset, spec.rho, &data)?;
                let r = estimate_with_known_weights(&data, &w, &est.config).ok()?;
                Some((r.beta.clone(), covers(&r.ci)))
            } else {
                let r = estimate(&data, &est.config).ok()?;
                Some((r.beta.clone(), covers(&r.ci)))
            }
        })
        .collect()
}

/// Runs `reps` replications of every estimator on fresh draws of `spec`.
///
/// Replication `j` draws its data from [`child_seed`]`(base_seed, j)`, so the
/// reports are identical for any `threads`. Failed replications are excluded
/// from the statistics and counted.
pub fn monte_carlo(
    spec: &DgpSpec,
    estimators: &[SimEstimator],
    reps: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<SimReport>> {
    spec.validate()?;
    if reps < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 replications, got {reps}")));
    }
    for est in estimators {
        if est.known_weights && oracle_weights(spec.preset, spec.rho, &spec.sample()?).is_none() {
            return Err(Error::InvalidInput(format!(
                "true weights are not available in closed form for {}",
                spec.preset
            )));
        }
    }
    let run = || -> Vec<Vec<Outcome>> {
        (0..reps).into_par_iter().map(|j| replicate(spec, estimators, child_seed(base_seed, j as u64))).collect()
    };
    let results = match threads.or_else(threads_from_env) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start {n} worker threads: {e}")))?
            .install(run),
        None => run(),
    };

    Ok(estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let ok: Vec<&(Vec<f64>, Vec<bool>)> = results.iter().filter_map(|r| r[e].as_ref()).collect();
            let failures = reps - ok.len();
            let p = est.config.link.n_coefficients();
            let coefs = (0..p)
                .map(|c| {
                    let truth = TRUE_BETA.get(c).copied().unwrap_or(f64::NAN);
                    let values: Vec<f64> = ok.iter().map(|(b, _)| b[c]).collect();
                    let covered: Vec<bool> = ok.iter().map(|(_, cv)| cv[c]).collect();
                    summarize(&values, &covered, truth)
                })
                .collect();
            SimReport {
                preset: spec.preset,
                rho: spec.rho,
                n: spec.n,
                estimator: est.label.clone(),
                k2: covariate_dim(&est.config),
                reps,
                failures,
                flagged: failures as f64 > FAILURE_FLAG_SHARE * reps as f64,
                coefs,
            }
        })
        .collect())
}

fn covariate_dim(config: &EstimatorConfig) -> Option<usize> {
    config.covariate_basis.covariate_indices(N_COVARIATES).map(|idx| idx.len())
}

pub const CSV_HEADER: [&str; 10] = ["preset", "rho", "N", "estimator", "coef", "bias", "stdev", "rmse", "cp", "failures"];

/// Table rows, one per (report, coefficient), with fixed column order.
pub fn write_csv<W: Write>(reports: &[SimReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Data(format!("cannot write CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for rep in reports {
        for (c, s) in rep.coefs.iter().enumerate() {
            w.write_record([
                rep.preset.to_string(),
                format!("{}", rep.rho),
                rep.n.to_string(),
                rep.estimator.clone(),
                format!("beta{}", c + 1),
                format!("{:.6}", s.bias),
                format!("{:.6}", s.stdev),
                format!("{:.6}", s.rmse),
                format!("{:.4}", s.cp),
                rep.failures.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("cannot write CSV: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_design_points() {
        assert_eq!(Preset::Dgp1.evaluate(&[0.0; 4], 0.0, 0.0), (0.0, 1.0));
        let (t, y) = Preset::Dgp2.evaluate(&[0.5, 0.0, 0.0, 0.0], 0.0, 0.0);
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y, 1.2375, epsilon = 1e-15);
        let (t, y) = Preset::Nlt.evaluate(&[0.5, 0.0, 0.0, 0.0], 0.0, 0.0);
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y, 2.5, epsilon = 1e-15);
        let (t, y) = Preset::Nly.evaluate(&[0.0; 4], 0.0, 0.0);
        assert_eq!(t, 0.0);
        assert_abs_diff_eq!(y, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_hook() {
        let spec = DgpSpec { preset: Preset::Dgp1, rho: 0.2, n: 50, seed: 3 };
        let d = generate_with(&spec, &mut ChaCha8Rng::seed_from_u64(3), Noise::Zero).unwrap();
        for i in 0..50 {
            let x: Vec<f64> = d.covariates().row(i).iter().copied().collect();
            let (t, y) = Preset::Dgp1.evaluate(&x, 0.0, 0.0);
            assert_eq!(d.treatments()[i], t);
            assert_eq!(d.outcomes()[i], y);
        }
    }

    #[test]
    fn covariate_draws() {
        let a = equicorrelated_normal(4, 0.0, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = equicorrelated_normal(4, 0.0, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let corr = |m: &DMatrix<f64>, j: usize, k: usize| {
            let n = m.nrows() as f64;
            let (cj, ck) = (m.column(j), m.column(k));
            let (mj, mk) = (cj.sum() / n, ck.sum() / n);
            let cov = cj.iter().zip(ck.iter()).map(|(a, b)| (a - mj) * (b - mk)).sum::<f64>();
            let vj = cj.iter().map(|a| (a - mj).powi(2)).sum::<f64>();
            let vk = ck.iter().map(|b| (b - mk).powi(2)).sum::<f64>();
            cov / (vj * vk).sqrt()
        };
        let bound = 3.0 / (20_000f64).sqrt();
        for j in 0..4 {
            for k in j + 1..4 {
                assert!(corr(&a, j, k).abs() < bound);
            }
        }
        let c = equicorrelated_normal(4, 0.4, 100_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for j in 0..4 {
            for k in j + 1..4 {
                assert!((corr(&c, j, k) - 0.4).abs() < 0.01);
            }
        }
        assert!(equicorrelated_normal(4, 1.0, 5, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let s = summarize(&[1.0, 1.2, 0.8], &[true, false, true], 1.0);
        assert_abs_diff_eq!(s.bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.rmse, (0.08f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.rmse, 0.16330, epsilon = 1e-5);
        assert_abs_diff_eq!(s.cp, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn seeds_depend_on_index_only() {
        assert_eq!(child_seed(7, 3), child_seed(7, 3));
        assert_ne!(child_seed(7, 3), child_seed(7, 4));
        assert_ne!(child_seed(7, 3), child_seed(8, 3));
    }

    #[test]
    fn presets_parse() {
        assert_eq!("1".parse::<Preset>().unwrap(), Preset::Dgp1);
        assert_eq!("dgp2".parse::<Preset>().unwrap(), Preset::Dgp2);
        assert_eq!("nly".parse::<Preset>().unwrap(), Preset::Nly);
        assert!("5".parse::<Preset>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn rmse_decomposition(values in proptest::collection::vec(-10.0f64..10.0, 2..50), truth in -5.0f64..5.0) {
            let covered = vec![true; values.len()];
            let s = summarize(&values, &covered, truth);
            let j = values.len() as f64;
            let lhs = s.rmse * s.rmse;
            let rhs = s.bias * s.bias + s.stdev * s.stdev * (j - 1.0) / j;
            proptest::prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs));
        }
    }
}
