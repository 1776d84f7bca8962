//! Average derivative of the dose-response curve with its kernel standard
//! error.

use swbal::doseresponse::average_effect;
use swbal::inference::KernelConfig;
use swbal::pipeline::{estimate_weights, EstimatorConfig};
use swbal::simulate::{DgpSpec, Preset};

fn main() -> Result<(), swbal::error::Error> {
    let data = DgpSpec { preset: Preset::Dgp1, rho: 0.0, n: 1000, seed: 9 }.sample()?;
    let config = EstimatorConfig::default();
    let w = estimate_weights(&data, config.k1, &config.covariate_basis, &config.weights)?;
    let ae = average_effect(&data, &w.solution.weights, &KernelConfig::rule_of_thumb(&data))?;
    println!("average effect {:.4} (se {:.4}); the design's value is 1", ae.psi, ae.se);
    Ok(())
}
