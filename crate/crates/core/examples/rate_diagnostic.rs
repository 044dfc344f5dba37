//! Forward and backward transition rates per time bin, for the SCUD reversal
//! and for a reversal that ignores the event schedule.
//!
//! cargo run --release --example rate_diagnostic

use std::sync::Arc;

use scud::denoiser::OracleDenoiser;
use scud::processes::ProcessSpec;
use scud::rng::seeded;
use scud::sampler::{classical_rate_diagnostic, exact_forward_rate_bin, rate_diagnostic};
use scud::schedule::fit_schedule;
use scud::toy_data::{Dataset, ToyDistribution};

fn main() -> scud::Result<()> {
    let toy = ToyDistribution::factorized(vec![vec![0.7, 0.2, 0.1]; 2])?;
    let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(0.5)?);
    let schedule = fit_schedule(&process, &[0.7, 0.2, 0.1], 0.01)?;
    let oracle = OracleDenoiser::new(toy.clone(), process.clone())?;
    let data = Dataset::sample_from(&toy, 500, &mut seeded(1)).sequences;
    let bins = 8;
    let scud = rate_diagnostic(&process, &schedule, &oracle, &data, 4000, bins, &mut seeded(2))?;
    let classical = classical_rate_diagnostic(&process, &schedule, &oracle, &data, 1000, bins, 16, &mut seeded(3))?;
    println!("   t   exact fwd  forward  SCUD back  schedule-free back  event rate");
    for (i, (a, b)) in scud.iter().zip(&classical).enumerate() {
        let exact = exact_forward_rate_bin(&process, &schedule, &[0.7, 0.2, 0.1], i, bins)?;
        println!(
            "{:.3}  {exact:8.4}  {:8.4}  {:8.4}  {:8.4}            {:8.4}",
            a.t, a.forward_rate, a.backward_rate, b.backward_rate, a.event_rate
        );
    }
    Ok(())
}
