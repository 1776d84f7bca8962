//! Dose-response curve from a quadratic treatment sieve with pointwise bands,
//! printed on a coarse grid next to the true line.

use swbal::doseresponse::{fit_curve, grid};
use swbal::pipeline::{estimate_weights, EstimatorConfig};
use swbal::simulate::{DgpSpec, Preset};

fn main() -> Result<(), swbal::error::Error> {
    let data = DgpSpec { preset: Preset::Dgp1, rho: 0.0, n: 2000, seed: 5 }.sample()?;
    let config = EstimatorConfig { k1: 3, ..Default::default() };
    let w = estimate_weights(&data, config.k1, &config.covariate_basis, &config.weights)?;
    let curve = fit_curve(&data, &w.solution.weights, &w.treatment_basis)?;
    println!("{:>8} {:>10} {:>10} {:>22}", "t", "estimate", "truth", "95% band");
    for p in curve.report(&grid(data.treatments())?, 0.95)?.iter().step_by(10) {
        let truth = 1.0 + p.t;
        println!("{:>8.3} {:>10.4} {:>10.4}   [{:>8.4}, {:>8.4}]", p.t, p.theta_hat, truth, p.lower, p.upper);
    }
    Ok(())
}
