//! Fit the rate schedule that makes expected mutual information decay
//! linearly, and compare masking with its closed form.
//!
//! cargo run --example schedule_fit

use scud::processes::ProcessSpec;
use scud::schedule::fit_schedule;
use scud::RateSchedule;

fn main() -> scud::Result<()> {
    let eps = 0.01;
    let p0 = [0.5, 0.3, 0.15, 0.05];
    let uniform = ProcessSpec::Uniform { states: 4 }.build(1.0)?;
    let fitted = fit_schedule(&uniform, &p0, eps)?;
    println!("uniform B=4:   t    B(t)     beta_t   E[MI]");
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let b = fitted.cumulative(t);
        println!("            {t:4.1} {b:8.4} {:8.4} {:7.4}", fitted.rate(t), fitted.expected_mi(b));
    }

    let masking = ProcessSpec::Masking { states: 5 }.build(1.0)?;
    let fitted = fit_schedule(&masking, &[0.5, 0.3, 0.15, 0.05, 0.0], eps)?;
    let closed = RateSchedule::masking_closed_form(eps)?;
    let worst = (0..=100)
        .map(|i| i as f64 / 100.0)
        .map(|t| (fitted.cumulative(t) - closed.cumulative(t)).abs())
        .fold(0.0, f64::max);
    println!("\nmasking: fitted vs -log(1 - (1 - eps) t), max gap {worst:.2e}");
    Ok(())
}
