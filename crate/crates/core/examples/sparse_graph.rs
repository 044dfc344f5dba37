//! Sparse plus rank-one kernels over a large vocabulary.
//!
//! cargo run --release --example sparse_graph

use std::time::Instant;

use scud::ctmc::KernelRepresentation;
use scud::processes::{build_sparse_graph, ring_similarity, SparseGraphSpec};
use scud::EventProcess;

fn main() -> scud::Result<()> {
    let vocabulary = 20_000;
    let frequent = 2000;
    let spec = SparseGraphSpec {
        vocabulary,
        similarities: ring_similarity(frequent),
        neighbours: 10,
        temperature: 0.3,
        mix_weight: 0.4,
        frequencies: (1..=frequent)
            .map(|k| 1.0 / k as f64)
            .map(|w| w / (1..=frequent).map(|k| 1.0 / k as f64).sum::<f64>())
            .collect(),
    };
    let start = Instant::now();
    let generator = build_sparse_graph(&spec)?;
    let process = EventProcess::from_sparse_generator(&generator, 1.0)?;
    println!("built {vocabulary}-state process with {} stored entries in {:?}", generator.nnz(), start.elapsed());
    if let KernelRepresentation::SparsePlusRankOne(k) = process.kernel() {
        println!("kernel: {} stored entries plus rank-one weight {:.3}", k.nnz(), k.weight());
    }

    let start = Instant::now();
    let law = process.kernel_power_apply(30, &scud::linalg::one_hot(vocabulary, 5));
    println!("30 events from state 5 in {:?}; mass {:.12}", start.elapsed(), law.iter().sum::<f64>());
    let mut top: Vec<(usize, f64)> = law.iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most likely states: {:?}", &top[..5]);
    let rare = law[frequent..].iter().sum::<f64>();
    println!("mass outside the frequent subset: {rare:.3e}");
    Ok(())
}
