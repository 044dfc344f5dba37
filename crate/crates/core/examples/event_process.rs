//! Turn a generator into an event process and apply kernel powers.
//!
//! cargo run --example event_process

use scud::processes::{GaussianForm, ProcessSpec};

fn print_matrix(n: usize, m: &[f64]) {
    for row in m.chunks(n) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:7.4}")).collect();
        println!("  [{}]", cells.join(" "));
    }
}

fn main() -> scud::Result<()> {
    for gamma in [1.0, 0.5, 0.1] {
        let p = ProcessSpec::Uniform { states: 2 }.build(gamma)?;
        println!("uniform B=2, gamma={gamma}: r = {:.3}", p.rate());
        print_matrix(2, &p.kernel().densify());
    }

    let p = ProcessSpec::GaussianBand { states: 6, bandwidth: 200.0, form: GaussianForm::Normalized }.build(1.0)?;
    println!("\ngaussian band B=6 at gamma=1: r = {:.4}", p.rate());
    print_matrix(6, &p.kernel().densify());

    let start = scud::linalg::one_hot(6, 0);
    for s in [0, 1, 4, 16, 64] {
        let law = p.kernel_power_apply(s, &start);
        let cells: Vec<String> = law.iter().map(|x| format!("{x:.4}")).collect();
        println!("x0 = 0 after {s:2} events: [{}]", cells.join(", "));
    }
    let pi = p.stationary_distribution()?;
    println!("stationary: {pi:.4?}");

    let mask = ProcessSpec::Masking { states: 4 }.build(1.0)?;
    println!("\nmasking B=4: stationary {:?}", mask.stationary_distribution()?);
    Ok(())
}
