//! As gamma shrinks, the SCUD loss of a fixed prediction approaches the
//! score-entropy loss.
//!
//! cargo run --release --example sedd_limit

fn main() -> scud::Result<()> {
    let prediction = [0.6, 0.4];
    println!("gamma      SCUD        score entropy  relative gap");
    for gamma in [1e-1, 1e-2, 1e-3, 1e-4] {
        let (scud, sedd) = scud::verify::sedd_gap(gamma, &prediction, 0)?;
        println!("{gamma:<8.0e} {scud:.8}  {sedd:.8}     {:.2e}", ((scud - sedd) / sedd).abs());
    }
    Ok(())
}
