//! Fixtures shared by the benchmarks.

use threathunt_core::data::LabelCodec;
use threathunt_core::{LabeledDataset, SeededRng, Tensor};

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

/// `rows` standard-normal feature vectors of width `width` with labels
/// cycling through the Edge-IIoT classes.
pub fn random_dataset(rows: usize, width: usize, seed: u64) -> LabeledDataset {
    let codec = LabelCodec::edge_iiot();
    let k = codec.len();
    let t = random_tensor(rows, width, seed);
    LabeledDataset::new(t.into_data(), width, (0..rows).map(|i| i % k).collect(), codec).expect("dataset")
}
