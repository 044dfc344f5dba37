//! exp(tau L) as a Poisson mixture of kernel powers, checked against
//! simulated continuous-time paths.
//!
//! cargo run --release --example uniformization

use scud::ctmc::gillespie_simulate;
use scud::processes::{GaussianForm, ProcessSpec};
use scud::rng::seeded;
use scud::schedule::fit_schedule;

fn main() -> scud::Result<()> {
    let b = 5;
    let p = ProcessSpec::GaussianBand { states: b, bandwidth: 20.0, form: GaussianForm::Normalized }.build(0.5)?;
    let p0 = vec![1.0, 0.0, 0.0, 0.0, 0.0];
    let schedule = fit_schedule(&p, &[0.2; 5], 0.05)?;

    let n = 50_000;
    let mut rng = seeded(11);
    let mut counts = [[0usize; 5]; 3];
    let times = [0.25, 0.5, 1.0];
    for _ in 0..n {
        let path = gillespie_simulate(&p, &[0], &schedule, &mut rng)?;
        for (k, &t) in times.iter().enumerate() {
            counts[k][path.state_at(t)[0]] += 1;
        }
    }
    for (k, &t) in times.iter().enumerate() {
        let exact = p.generator_exponential_apply(schedule.cumulative(t), &p0)?;
        println!("t = {t}: B(t) = {:.3}", schedule.cumulative(t));
        for x in 0..b {
            println!("  state {x}: exact {:.4}  simulated {:.4}", exact[x], counts[k][x] as f64 / n as f64);
        }
    }
    Ok(())
}
