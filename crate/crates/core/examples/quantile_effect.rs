//! Quantile effects at several levels. With symmetric errors all quantile
//! lines share the slope of the mean line and the intercept shifts with tau.

use swbal::model::LossSpec;
use swbal::pipeline::{estimate, EstimatorConfig};
use swbal::simulate::{DgpSpec, Preset};

fn main() -> Result<(), swbal::error::Error> {
    let data = DgpSpec { preset: Preset::Dgp1, rho: 0.0, n: 1500, seed: 3 }.sample()?;
    for tau in [0.25, 0.5, 0.75] {
        let config = EstimatorConfig { loss: LossSpec::Check { tau }, ..Default::default() };
        let est = estimate(&data, &config)?;
        println!(
            "tau {tau:.2}: intercept {:.3} (se {:.3}), slope {:.3} (se {:.3}), kernel fallbacks {}",
            est.beta[0], est.se[0], est.beta[1], est.se[1], est.variance.fallbacks
        );
    }
    let expectile = estimate(&data, &EstimatorConfig { loss: LossSpec::AsymmetricSquared { tau: 0.8 }, ..Default::default() })?;
    println!("expectile 0.80: {:?}", expectile.beta);
    Ok(())
}
