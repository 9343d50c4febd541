use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Fewest records the 8:1:1 split accepts.
pub const MIN_RECORDS: usize = 10;

/// Train/test/validation partition of record indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` and cuts it 8:1:1. Train takes `floor(0.8 n)`; the rest
/// is halved with test taking the odd one out.
///
/// The shuffle is Fisher–Yates over Xoshiro256++ seeded through SplitMix64,
/// drawing `j = (next_u64 * (i + 1)) >> 64` for `i = n-1 .. 1`.
pub fn split_dataset(n: usize, seed: u64) -> Result<SplitSpec, PipelineError> {
    if n < MIN_RECORDS {
        return Err(PipelineError::TooFewRecords {
            needed: MIN_RECORDS,
            got: n,
        });
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        order.swap(i, j);
    }
    let n_train = n * 4 / 5;
    let rest = n - n_train;
    let n_test = rest.div_ceil(2);
    let validation = order.split_off(n_train + n_test);
    let test = order.split_off(n_train);
    Ok(SplitSpec {
        seed,
        train: order,
        test,
        validation,
    })
}

/// Clones the items at `indices`, in index-list order.
pub fn subset<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}
