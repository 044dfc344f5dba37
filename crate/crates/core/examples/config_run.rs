//! Drive a full experiment from a configuration, as the command line does.
//!
//! cargo run --release --example config_run

use std::path::Path;

use scud::config::Config;
use scud::experiment::{run_diagnose, run_elbo, run_sample, run_schedule, run_train, ExperimentConfig};

const CONFIG: &str = "
seed = 3
data.toy = markov
data.states = 4
data.dims = 4
data.size = 500
process.kind = gaussian
process.bandwidth = 20
process.gamma = 0.5
train.steps = 100
train.batch_size = 32
elbo.samples = 200
sample.count = 10
sample.budget = 8
diagnose.paths = 100
";

fn main() -> scud::Result<()> {
    let out = std::env::temp_dir().join("scud-config-run");
    let cfg = ExperimentConfig::from_config(Config::parse(CONFIG)?, Path::new("."))?;
    let before = run_elbo(&cfg, &out.join("untrained"))?;
    let losses = run_train(&cfg, &out)?;
    let after = run_elbo(&cfg, &out)?;
    println!(
        "loss before training {:.4}, after {:.4} nats/dim (last batch {:.4})",
        before.total,
        after.total,
        losses.last().unwrap()
    );
    let schedule = run_schedule(&cfg, &out)?;
    println!("B(1) = {:.4}", schedule.horizon());
    for s in run_sample(&cfg, &out)? {
        println!("  {s:?}");
    }
    let bins = run_diagnose(&cfg, &out)?;
    println!("{} rate bins written to {}", bins.len(), out.display());
    Ok(())
}
