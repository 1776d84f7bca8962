//! Linear mean effect of a continuous treatment, with kernel and sandwich
//! standard errors side by side.

use swbal::pipeline::{estimate, EstimatorConfig, VarianceChoice};
use swbal::simulate::{DgpSpec, Preset, TRUE_BETA};

fn main() -> Result<(), swbal::error::Error> {
    let data = DgpSpec { preset: Preset::Dgp1, rho: 0.25, n: 1000, seed: 7 }.sample()?;
    let kernel = estimate(&data, &EstimatorConfig::default())?;
    let sandwich = estimate(&data, &EstimatorConfig { variance: VarianceChoice::Sandwich, ..Default::default() })?;

    println!("true coefficients {TRUE_BETA:?}");
    for j in 0..2 {
        let (lo, hi) = kernel.ci[j];
        println!(
            "beta[{j}] = {:.4}  kernel se {:.4} [{lo:.4}, {hi:.4}]  sandwich se {:.4}",
            kernel.beta[j], kernel.se[j], sandwich.se[j]
        );
    }
    let w = kernel.weights.solution.summary();
    println!("weights: min {:.3} max {:.3} mean {:.4}, {} Newton steps", w.min, w.max, w.mean, w.iterations);
    Ok(())
}
