//! Closed-form variances for a fully discrete design: the efficient variance
//! of the balancing estimator and the larger one obtained when the true
//! weights are used instead.

use swbal::inference::DiscreteDesign;

fn main() -> Result<(), swbal::error::Error> {
    let design = DiscreteDesign {
        t_levels: vec![0.0, 1.0, 2.0],
        joint: vec![vec![0.15, 0.10], vec![0.20, 0.15], vec![0.10, 0.30]],
        mean: vec![vec![0.0, 1.0], vec![1.0, 2.5], vec![2.0, 4.0]],
        variance: vec![vec![1.0, 2.0], vec![1.0, 1.5], vec![0.5, 3.0]],
    };
    let v = design.variances()?;
    println!("coefficients {:?}", v.beta);
    println!("efficient variance{}", v.v_eff);
    println!("known-weights variance{}", v.v_ineff);
    for a in 0..v.beta.len() {
        println!("level {a}: variance ratio {:.3}", v.v_ineff[(a, a)] / v.v_eff[(a, a)]);
    }
    Ok(())
}
