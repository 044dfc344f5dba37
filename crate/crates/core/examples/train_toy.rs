//! Train the network on a correlated toy and compare with the oracle.
//!
//! cargo run --release --example train_toy

use std::sync::Arc;

use scud::denoiser::{train, Architecture, OptimizerConfig, OracleDenoiser, TrainConfig, TrainableDenoiser};
use scud::loss::exact_expected_loss;
use scud::processes::ProcessSpec;
use scud::rng::{stream_rng, streams};
use scud::schedule::fit_schedule;
use scud::toy_data::{Dataset, ToyDistribution};

fn main() -> scud::Result<()> {
    let seed = 7;
    let toy = ToyDistribution::correlated_pair(2, 0.9)?;
    let process = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5)?);
    let schedule = fit_schedule(&process, &[0.5, 0.5], 0.01)?;
    let data = Dataset::sample_from(&toy, 2000, &mut stream_rng(seed, streams::DATA, 0));
    let exact_data = toy.enumerate()?;

    let mut net = TrainableDenoiser::new(Architecture::new(2, 2), &mut stream_rng(seed, streams::INIT, 0))?;
    let oracle = OracleDenoiser::new(toy, process.clone())?;
    let target = exact_expected_loss(&process, &schedule, &oracle, &exact_data)?.total;
    println!("oracle loss {target:.5} nats/dim");
    let config = TrainConfig { steps: 100, batch_size: 64, optimizer: OptimizerConfig::adam(0.02) };
    let mut rng = stream_rng(seed, streams::TRAIN, 0);
    for round in 0..6 {
        let loss = exact_expected_loss(&process, &schedule, &net, &exact_data)?.total;
        println!("after {:4} steps: exact loss {loss:.5}", round * config.steps);
        train(&mut net, &data.sequences, &process, &schedule, &config, &mut rng)?;
    }
    Ok(())
}
