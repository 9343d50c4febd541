//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use std::fmt::Display;
use std::io::Write;

use greyguide_core::grey::FsgmParams;
use greyguide_core::nn::{Graph, NnError, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut Xoshiro256PlusPlus) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar loss `sum(x * w)` with a fixed random `w`, so every output element
/// reaches the gradient.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var, NnError> {
    let shape = g.shape(x).to_vec();
    let w = g.constant(uniform(&shape, &mut rng(seed)))?;
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

/// Steps the discretised grey model forward from two starting values:
/// `Y_t (1 - lambda/2) = lambda x1[t-1] + p(t)`, `x0[t+1] = 2 Y_t - x0[t]`.
pub fn generate_series(params: &FsgmParams, x0_start: [f64; 2], n: usize) -> Vec<f64> {
    let mut x0 = x0_start.to_vec();
    let mut x1_prev = (x0[0] + x0[1]) / 2.0;
    for t in 2..n {
        let y = (params.lambda * x1_prev + params.forcing(t as f64)) / (1.0 - params.lambda / 2.0);
        x0.push(2.0 * y - x0[t - 1]);
        x1_prev += y;
    }
    x0
}

/// Prints one verdict line for a criterion and fails the test on `FAIL`.
pub fn verdict(criterion: &str, ok: bool, detail: impl Display) {
    let status = if ok { "PASS" } else { "FAIL" };
    // Written to the raw handle so the line shows without `--nocapture`.
    let _ = writeln!(std::io::stderr(), "{status} {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

/// As [`uniform`], spread over `[-factor, factor)`.
pub fn scaled(shape: &[usize], factor: f64, rng: &mut Xoshiro256PlusPlus) -> Tensor {
    let t = uniform(shape, rng);
    Tensor::new(shape.to_vec(), t.data().iter().map(|v| factor * v).collect()).unwrap()
}
