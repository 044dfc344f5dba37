use std::sync::Arc;

use scud::denoiser::{MixedDenoiser, OracleDenoiser};
use scud::loss::{convergence_kl, exact_expected_loss};
use scud::processes::{build_blosum, synthetic_pair_table, GaussianForm, ProcessSpec};
use scud::schedule::fit_schedule;
use scud::toy_data::ToyDistribution;
use scud::verify::factorization_error;
use scud::EventProcess;

fn toys() -> Vec<ToyDistribution> {
    vec![
        ToyDistribution::factorized(vec![vec![0.9, 0.1], vec![0.25, 0.75]]).unwrap(),
        ToyDistribution::correlated_pair(3, 0.8).unwrap(),
        ToyDistribution::markov_chain(vec![0.6, 0.4], vec![0.9, 0.1, 0.2, 0.8], 3).unwrap(),
        ToyDistribution::uniform(3, 2).unwrap(),
    ]
}

fn entropy_per_dim(toy: &ToyDistribution) -> f64 {
    let h: f64 = toy.enumerate().unwrap().iter().filter(|(_, p)| *p > 0.0).map(|(_, p)| -p * p.ln()).sum();
    h / toy.num_dims() as f64
}

fn pooled(toy: &ToyDistribution) -> Vec<f64> {
    let m = toy.marginals();
    (0..toy.num_states()).map(|b| m.iter().map(|r| r[b]).sum::<f64>() / m.len() as f64).collect()
}

fn processes(states: usize) -> Vec<Arc<EventProcess>> {
    vec![
        Arc::new(ProcessSpec::Uniform { states }.build(0.5).unwrap()),
        Arc::new(ProcessSpec::Uniform { states }.build(0.25).unwrap()),
        Arc::new(
            ProcessSpec::GaussianBand { states, bandwidth: 2.0, form: GaussianForm::Normalized }.build(0.8).unwrap(),
        ),
    ]
}

#[test]
fn loss_never_falls_below_entropy() {
    for toy in toys() {
        let h = entropy_per_dim(&toy);
        let data = toy.enumerate().unwrap();
        for process in processes(toy.num_states()) {
            let schedule = fit_schedule(&process, &pooled(&toy), 0.01).unwrap();
            let oracle = OracleDenoiser::new(toy.clone(), process.clone()).unwrap();
            let exact = exact_expected_loss(&process, &schedule, &oracle, &data).unwrap();
            assert!(exact.total >= h - 1e-10, "oracle {} below entropy {h}", exact.total);
            assert!((exact.total - exact.denoising - exact.convergence).abs() < 1e-12);
            for mix in [0.05, 0.3, 0.9] {
                let mixed = MixedDenoiser { inner: OracleDenoiser::new(toy.clone(), process.clone()).unwrap(), mix };
                let m = exact_expected_loss(&process, &schedule, &mixed, &data).unwrap().total;
                assert!(m >= h - 1e-10, "mixed {mix}: {m} below entropy {h}");
            }
        }
    }
}

#[test]
fn oracle_loss_is_within_epsilon_of_entropy() {
    // the gap is the convergence slack plus the information left in the schedule
    for toy in toys() {
        let h = entropy_per_dim(&toy);
        let process = Arc::new(ProcessSpec::Uniform { states: toy.num_states() }.build(0.5).unwrap());
        let schedule = fit_schedule(&process, &pooled(&toy), 0.01).unwrap();
        let oracle = OracleDenoiser::new(toy.clone(), process.clone()).unwrap();
        let total = exact_expected_loss(&process, &schedule, &oracle, &toy.enumerate().unwrap()).unwrap().total;
        assert!(total - h < 0.02, "gap {} on {toy:?}", total - h);
    }
}

#[test]
fn stronger_perturbation_costs_more() {
    let toy = ToyDistribution::correlated_pair(3, 0.8).unwrap();
    let data = toy.enumerate().unwrap();
    let process = Arc::new(ProcessSpec::Uniform { states: 3 }.build(0.5).unwrap());
    let schedule = fit_schedule(&process, &pooled(&toy), 0.01).unwrap();
    let mut prev = f64::NEG_INFINITY;
    for mix in [0.0, 0.05, 0.2, 0.5] {
        let d = MixedDenoiser { inner: OracleDenoiser::new(toy.clone(), process.clone()).unwrap(), mix };
        let total = exact_expected_loss(&process, &schedule, &d, &data).unwrap().total;
        assert!(total > prev, "mix {mix}: {total} not above {prev}");
        prev = total;
    }
}

#[test]
fn reversal_factorizes_across_dimensions() {
    let blosum = build_blosum(&synthetic_pair_table(), None, &[true; 8]).unwrap();
    let mut cases: Vec<EventProcess> = vec![
        ProcessSpec::Uniform { states: 3 }.build(0.6).unwrap(),
        ProcessSpec::Masking { states: 4 }.build(1.0).unwrap(),
        ProcessSpec::GaussianBand { states: 4, bandwidth: 3.0, form: GaussianForm::Raw }.build(0.9).unwrap(),
        blosum.event_process().unwrap(),
    ];
    cases.push(EventProcess::from_generator(&blosum.generator, 0.4).unwrap());
    for process in &cases {
        let err = factorization_error(process).unwrap();
        assert!(err < 1e-12, "factorization error {err}");
    }
}

#[test]
fn masking_never_converges_without_events() {
    let process = ProcessSpec::Masking { states: 4 }.build(1.0).unwrap();
    assert!(convergence_kl(&process, 0, 0).unwrap().is_infinite());
    assert!(convergence_kl(&process, 0, 1).unwrap().abs() < 1e-12);
    let uniform = ProcessSpec::Uniform { states: 4 }.build(0.5).unwrap();
    let near = convergence_kl(&uniform, 1, 40).unwrap();
    let far = convergence_kl(&uniform, 1, 2).unwrap();
    assert!(near < far && near > -1e-12, "{near} {far}");
}
