//! Budgeted reverse sampling with an oracle denoiser.
//!
//! cargo run --release --example sampling

use std::collections::BTreeMap;
use std::sync::Arc;

use scud::denoiser::OracleDenoiser;
use scud::processes::ProcessSpec;
use scud::sampler::sample_many;
use scud::schedule::fit_schedule;
use scud::toy_data::ToyDistribution;

fn main() -> scud::Result<()> {
    let toy = ToyDistribution::correlated_pair(2, 0.6)?;
    let process = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5)?);
    let schedule = fit_schedule(&process, &[0.5, 0.5], 1e-4)?;
    let oracle = OracleDenoiser::new(toy.clone(), process.clone())?;
    for budget in [1, 4, 64] {
        let n = 10_000;
        let out = sample_many(&process, &schedule, &oracle, 2, budget, n, 3)?;
        let mut freq: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for s in &out {
            *freq.entry(s.tokens.clone()).or_default() += 1;
        }
        let calls: f64 = out.iter().map(|s| s.evaluations as f64).sum::<f64>() / n as f64;
        let events: f64 = out.iter().map(|s| s.events as f64).sum::<f64>() / n as f64;
        println!("budget {budget}: {calls:.2} calls and {events:.2} events per sample");
        for (x, c) in freq {
            println!("  {x:?}: sampled {:.4}  true {:.4}", c as f64 / n as f64, toy.probability(&x));
        }
    }
    Ok(())
}
