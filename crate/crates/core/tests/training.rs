use std::sync::Arc;

use scud::denoiser::{train, Architecture, OptimizerConfig, OracleDenoiser, TrainConfig, TrainableDenoiser};
use scud::loss::exact_expected_loss;
use scud::processes::ProcessSpec;
use scud::rng::{stream_rng, streams};
use scud::schedule::fit_schedule;
use scud::toy_data::{Dataset, ToyDistribution};

#[test]
fn trained_network_approaches_the_oracle() {
    let toy = ToyDistribution::correlated_pair(2, 0.8).unwrap();
    let process = Arc::new(ProcessSpec::Uniform { states: 2 }.build(0.5).unwrap());
    let schedule = fit_schedule(&process, &[0.5, 0.5], 0.01).unwrap();
    let exact = toy.enumerate().unwrap();
    let data = Dataset::sample_from(&toy, 2000, &mut stream_rng(3, streams::DATA, 0));

    let arch = Architecture { positional: true, ..Architecture::new(2, 2) };
    let mut model = TrainableDenoiser::new(arch, &mut stream_rng(3, streams::INIT, 0)).unwrap();
    let before = exact_expected_loss(&process, &schedule, &model, &exact).unwrap().total;
    let config = TrainConfig { steps: 400, batch_size: 64, optimizer: OptimizerConfig::adam(0.02) };
    let report =
        train(&mut model, &data.sequences, &process, &schedule, &config, &mut stream_rng(3, streams::TRAIN, 0))
            .unwrap();
    assert_eq!(report.losses.len(), 400);

    let trained = exact_expected_loss(&process, &schedule, &model, &exact).unwrap().total;
    let oracle = OracleDenoiser::new(toy, process.clone()).unwrap();
    let best = exact_expected_loss(&process, &schedule, &oracle, &exact).unwrap().total;
    assert!(trained < before, "training did not help: {before} -> {trained}");
    assert!(trained >= best - 1e-10);
    assert!((trained - best) / best < 0.05, "trained {trained}, oracle {best}");
}
