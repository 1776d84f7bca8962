//! Draws one sample from a simulation design and writes it as CSV.
//!
//! ```text
//! cargo run --example generate_data -- 2 500 0.25 > sample.csv
//! ```

use swbal::cli::write_dataset;
use swbal::simulate::{DgpSpec, Preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset: Preset = args.first().map(|s| s.parse()).transpose()?.unwrap_or(Preset::Dgp1);
    let n = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let rho = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(0.0);
    let data = DgpSpec { preset, rho, n, seed: 1 }.sample()?;
    write_dataset(&data, std::io::stdout().lock())?;
    Ok(())
}
