//! Seeded inputs for the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relu_interp::fixtures::{distinguishable_arrangement, ArrangementInstance};
use relu_interp::{initialize, Dataset, Network};

/// Fully connected network with the given hidden widths and `points`
/// uniform inputs in `[-1, 1]^n` with uniform scalar targets.
pub fn random_problem(n: usize, hidden: &[usize], points: usize, seed: u64) -> (Network, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = initialize(n, hidden, 1, seed).expect("valid widths");
    let xs = (0..points).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys = (0..points).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
    (net, Dataset::from_xy(xs, ys).expect("valid dataset"))
}

/// Square block lower-triangular instance with `blocks` blocks in `n` dimensions.
pub fn arrangement(n: usize, blocks: usize, seed: u64) -> ArrangementInstance {
    distinguishable_arrangement(n, blocks, &mut ChaCha8Rng::seed_from_u64(seed)).expect("instance")
}

/// Uniform `[0, 1)` matrix and target vector.
pub fn dense_system(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>());
    let y = DVector::from_fn(rows, |_, _| rng.gen::<f64>());
    (m, y)
}
