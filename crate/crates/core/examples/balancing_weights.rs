//! Solves for the stabilized weights and checks the balance they achieve
//! against uniform weights.

use swbal::balance::{balance_residual, solve_weights, WeightOptions};
use swbal::sieve::{BasisSpec, SieveBasis};
use swbal::simulate::{DgpSpec, Preset};

fn main() -> Result<(), swbal::error::Error> {
    let data = DgpSpec { preset: Preset::Dgp2, rho: 0.5, n: 800, seed: 11 }.sample()?;
    let u = SieveBasis::fit(&BasisSpec::TreatmentPoly { k1: 3 }, &data)?;
    let v = SieveBasis::fit(&BasisSpec::CovariatePoly { max_degree: 2, interactions: true }, &data)?;
    println!("K1 = {}, K2 = {}", u.dim(), v.dim());

    let solution = solve_weights(u.matrix(), v.matrix(), &WeightOptions::default())?;
    for step in &solution.history {
        println!("objective {:.10}  gradient {:.3e}  step {}", step.objective, step.gradient_norm, step.step_length);
    }
    let uniform = balance_residual(&vec![1.0; data.len()], u.matrix(), v.matrix())?;
    println!("max imbalance with uniform weights:   {:.3e}", uniform.amax());
    println!("max imbalance with balancing weights: {:.3e}", solution.max_abs_residual());
    let s = solution.summary();
    println!("weights range [{:.3}, {:.3}], mean {:.6}", s.min, s.max, s.mean);
    Ok(())
}
