//! Small Monte Carlo comparing estimated and true weights, printed as the
//! same CSV table the `simulate` subcommand writes.

use swbal::pipeline::EstimatorConfig;
use swbal::simulate::{monte_carlo, write_csv, DgpSpec, Preset, SimEstimator};

fn main() -> Result<(), swbal::error::Error> {
    let spec = DgpSpec { preset: Preset::Dgp1, rho: 0.0, n: 500, seed: 0 };
    let estimators = [
        SimEstimator { label: "sw".into(), config: EstimatorConfig::default(), known_weights: false },
        SimEstimator { label: "sw-true-weights".into(), config: EstimatorConfig::default(), known_weights: true },
    ];
    let reports = monte_carlo(&spec, &estimators, 200, 2024, None)?;
    write_csv(&reports, std::io::stdout().lock())?;
    Ok(())
}
