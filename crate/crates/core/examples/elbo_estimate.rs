//! Monte Carlo loss estimate against the exact value on an enumerable toy.
//!
//! cargo run --release --example elbo_estimate

use std::sync::Arc;

use scud::denoiser::{MixedDenoiser, OracleDenoiser};
use scud::loss::{exact_expected_loss, scud_elbo_estimate};
use scud::processes::ProcessSpec;
use scud::rng::seeded;
use scud::schedule::fit_schedule;
use scud::toy_data::ToyDistribution;

fn main() -> scud::Result<()> {
    let toy = ToyDistribution::correlated_pair(3, 0.8)?;
    let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(0.5)?);
    let schedule = fit_schedule(&process, &[1.0 / 3.0; 3], 0.01)?;
    let oracle = OracleDenoiser::new(toy.clone(), process.clone())?;
    let data = toy.enumerate()?;
    let entropy: f64 = data.iter().map(|(_, p)| -p * p.ln()).sum::<f64>() / 2.0;
    println!("data entropy: {entropy:.5} nats/dim");

    for (name, mix) in [("oracle", 0.0), ("oracle mixed 30% uniform", 0.3)] {
        let model = MixedDenoiser { inner: &oracle, mix };
        let exact = exact_expected_loss(&process, &schedule, &model, &data)?;
        let mut rng = seeded(1);
        let mut total = 0.0;
        let mut var = 0.0;
        for (x0, p) in &data {
            let est = scud_elbo_estimate(&process, &schedule, &model, x0, &mut rng, 2000)?;
            total += p * est.total;
            var += p * p * est.std_error * est.std_error;
        }
        println!(
            "{name}: exact {:.5} (denoising {:.5}, convergence {:.5}); Monte Carlo {total:.5} +- {:.5}",
            exact.total,
            exact.denoising,
            exact.convergence,
            var.sqrt()
        );
    }
    Ok(())
}
