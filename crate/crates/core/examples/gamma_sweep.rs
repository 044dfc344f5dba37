//! Exact loss of the oracle as the conditioning level gamma varies.
//!
//! cargo run --release --example gamma_sweep

use std::sync::Arc;

use scud::denoiser::{MixedDenoiser, OracleDenoiser};
use scud::loss::exact_expected_loss;
use scud::processes::ProcessSpec;
use scud::schedule::fit_schedule;
use scud::toy_data::ToyDistribution;

fn main() -> scud::Result<()> {
    let toy = ToyDistribution::correlated_pair(3, 0.7)?;
    let data = toy.enumerate()?;
    println!("gamma  oracle   oracle + 10% uniform");
    for gamma in [0.05, 0.25, 0.5, 0.75, 1.0] {
        let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(gamma)?);
        let schedule = fit_schedule(&process, &[1.0 / 3.0; 3], 0.01)?;
        let oracle = OracleDenoiser::new(toy.clone(), process.clone())?;
        let best = exact_expected_loss(&process, &schedule, &oracle, &data)?.total;
        let mixed = exact_expected_loss(&process, &schedule, &MixedDenoiser { inner: &oracle, mix: 0.1 }, &data)?.total;
        println!("{gamma:5.2}  {best:.5}  {mixed:.5}");
    }
    Ok(())
}
