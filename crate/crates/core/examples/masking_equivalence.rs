//! SCUD with the all-1/B kernel reproduces the masking objective draw by draw.
//!
//! cargo run --release --example masking_equivalence

use rand::Rng;
use scud::rng::seeded;
use scud::toy_data::ToyDistribution;
use scud::verify::MaskingPair;

fn main() -> scud::Result<()> {
    let toy = ToyDistribution::markov_chain(vec![0.5, 0.3, 0.2], vec![0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6], 3)?;
    let pair = MaskingPair::new(toy.clone(), 0.01)?;
    println!("uniform process at gamma = 2/3: r = {}, K[0] = {:?}", pair.uniform.rate(), pair.uniform.kernel().row(0));
    let mut rng = seeded(5);
    let n = 10_000;
    let (mut worst, mut scud_mean, mut mask_mean) = (0.0f64, 0.0, 0.0);
    for i in 0..n {
        let t = (i as f64 + rng.random::<f64>()) / n as f64;
        let x0 = toy.sample(&mut rng);
        let (a, b) = pair.paired_terms(&x0, t, &mut rng)?;
        worst = worst.max((a - b).abs());
        scud_mean += a / n as f64;
        mask_mean += b / n as f64;
    }
    println!("SCUD mean {scud_mean:.6}, masking mean {mask_mean:.6}, largest paired gap {worst:.2e}");
    Ok(())
}
