//! Run configuration: option strings, config files and their translation to
//! estimator settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::balance::WeightOptions;
use crate::model::{LinkSpec, LossSpec};
use crate::pipeline::{EstimatorConfig, VarianceChoice};
use crate::sieve::BasisSpec;

/// Every setting a subcommand reads. Field order is the order of the config
/// echo in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub outcome: String,
    pub treatment: String,
    /// Covariate columns; all remaining columns when absent.
    pub covariates: Option<Vec<String>>,
    /// `mean`, `quantile:τ` or `expectile:τ`.
    pub loss: String,
    /// `poly:d` or `levels:a,b,...`.
    pub link: String,
    /// `k1:n`.
    pub treatment_basis: String,
    /// `k2-degree:d` or `k2-degree:d:interactions`.
    pub covariate_basis: String,
    /// `kernel` or `sandwich`.
    pub variance: String,
    pub bandwidth_scale: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub level: f64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: None,
            loss: "mean".into(),
            link: "poly:1".into(),
            treatment_basis: "k1:3".into(),
            covariate_basis: "k2-degree:2".into(),
            variance: "kernel".into(),
            bandwidth_scale: 1.0,
            tol: WeightOptions::default().tol,
            max_iter: WeightOptions::default().max_iter,
            level: 0.95,
            output: None,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension is `.json` (the format
    /// of the config echo in estimation reports).
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
        }
    }

    pub fn estimator(&self) -> Result<EstimatorConfig, CliError> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Usage(format!("level must lie in (0,1), got {}", self.level)));
        }
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(CliError::Usage(format!("bandwidth scale must be positive, got {}", self.bandwidth_scale)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(CliError::Usage("solver tolerance and iteration budget must be positive".into()));
        }
        let weights = WeightOptions { tol: self.tol, max_iter: self.max_iter, ..WeightOptions::default() };
        Ok(EstimatorConfig {
            loss: parse_loss(&self.loss)?,
            link: parse_link(&self.link)?,
            k1: parse_k1(&self.treatment_basis)?,
            covariate_basis: parse_covariate_basis(&self.covariate_basis)?,
            weights,
            variance: parse_variance(&self.variance)?,
            bandwidth_scale: self.bandwidth_scale,
            level: self.level,
            ..EstimatorConfig::default()
        })
    }
}

fn bad(kind: &str, value: &str, expected: &str) -> CliError {
    CliError::Usage(format!("invalid {kind} '{value}', expected {expected}"))
}

fn number<T: std::str::FromStr>(s: &str, kind: &str, value: &str, expected: &str) -> Result<T, CliError> {
    s.trim().parse().map_err(|_| bad(kind, value, expected))
}

pub fn parse_loss(s: &str) -> Result<LossSpec, CliError> {
    const EXPECTED: &str = "mean, quantile:TAU or expectile:TAU";
    let spec = match s.trim().split_once(':') {
        None if s.trim() == "mean" => LossSpec::SquaredError,
        Some(("quantile", tau)) => LossSpec::Check { tau: number(tau, "loss", s, EXPECTED)? },
        Some(("expectile", tau)) => LossSpec::AsymmetricSquared { tau: number(tau, "loss", s, EXPECTED)? },
        _ => return Err(bad("loss", s, EXPECTED)),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn parse_link(s: &str) -> Result<LinkSpec, CliError> {
    const EXPECTED: &str = "poly:D or levels:A,B,...";
    let spec = match s.trim().split_once(':') {
        Some(("poly", d)) => LinkSpec::Polynomial { degree: number(d, "link", s, EXPECTED)? },
        Some(("levels", list)) => LinkSpec::Indicator {
            levels: list.split(',').map(|l| number(l, "link", s, EXPECTED)).collect::<Result<_, _>>()?,
        },
        _ => return Err(bad("link", s, EXPECTED)),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn parse_k1(s: &str) -> Result<usize, CliError> {
    const EXPECTED: &str = "k1:N with N >= 1";
    match s.trim().split_once(':') {
        Some(("k1", n)) => match number(n, "treatment basis", s, EXPECTED)? {
            0 => Err(bad("treatment basis", s, EXPECTED)),
            k => Ok(k),
        },
        _ => Err(bad("treatment basis", s, EXPECTED)),
    }
}

pub fn parse_covariate_basis(s: &str) -> Result<BasisSpec, CliError> {
    const EXPECTED: &str = "k2-degree:D or k2-degree:D:interactions";
    let mut parts = s.trim().split(':');
    if parts.next() != Some("k2-degree") {
        return Err(bad("covariate basis", s, EXPECTED));
    }
    let max_degree = number(parts.next().unwrap_or(""), "covariate basis", s, EXPECTED)?;
    let interactions = match parts.next() {
        None => false,
        Some("interactions") => true,
        Some(_) => return Err(bad("covariate basis", s, EXPECTED)),
    };
    if parts.next().is_some() {
        return Err(bad("covariate basis", s, EXPECTED));
    }
    Ok(BasisSpec::CovariatePoly { max_degree, interactions })
}

pub fn parse_variance(s: &str) -> Result<VarianceChoice, CliError> {
    match s.trim() {
        "kernel" => Ok(VarianceChoice::Kernel),
        "sandwich" => Ok(VarianceChoice::Sandwich),
        _ => Err(bad("variance method", s, "kernel or sandwich")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_strings() {
        assert_eq!(parse_loss("mean").unwrap(), LossSpec::SquaredError);
        assert_eq!(parse_loss("quantile:0.25").unwrap(), LossSpec::Check { tau: 0.25 });
        assert_eq!(parse_loss("expectile:0.9").unwrap(), LossSpec::AsymmetricSquared { tau: 0.9 });
        assert!(parse_loss("quantile:1.5").is_err());
        assert!(parse_loss("median").is_err());

        assert_eq!(parse_link("poly:2").unwrap(), LinkSpec::Polynomial { degree: 2 });
        assert_eq!(parse_link("levels:0,1").unwrap(), LinkSpec::Indicator { levels: vec![0.0, 1.0] });
        assert!(parse_link("levels:1,1").is_err());
        assert!(parse_link("spline:3").is_err());

        assert_eq!(parse_k1("k1:4").unwrap(), 4);
        assert!(parse_k1("k1:0").is_err());
        assert_eq!(
            parse_covariate_basis("k2-degree:2:interactions").unwrap(),
            BasisSpec::CovariatePoly { max_degree: 2, interactions: true }
        );
        assert!(parse_covariate_basis("k2-degree:2:cross").is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["mean", "quantile:0.5", "expectile:0.1"] {
            assert_eq!(parse_loss(s).unwrap().to_string(), s);
        }
        for s in ["poly:3", "levels:0,1.5,2"] {
            assert_eq!(parse_link(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "loss = \"quantile:0.5\"\nbandwith = 2.0\n").unwrap();
        assert!(matches!(RunConfig::from_file(&path), Err(CliError::Usage(_))));
        std::fs::write(&path, "loss = \"quantile:0.5\"\ncovariates = [\"x1\"]\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.loss, "quantile:0.5");
        assert_eq!(cfg.link, "poly:1");
        assert_eq!(cfg.covariates, Some(vec!["x1".to_string()]));
    }
}
