//! Central finite differences against the tape's reverse pass.

use nst_core::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Uniform values in `[-1, 1)`.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Like [`random`] but with `|v| ≥ 0.05`, so relu kinks are never straddled.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.05f64.copysign(*v);
        }
    }
    t
}

/// Builds a scalar function on a fresh graph from one variable per input.
pub type Builder<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn evaluate(build: Builder, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &vars).unwrap();
    g.scalar(root).unwrap()
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)` over
/// every input element.
pub fn worst_relative_error(build: Builder, inputs: &[Tensor], floor: f64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &vars).unwrap();
    let grads = g.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        assert_eq!(analytic.shape(), input.shape());
        let mut shifted = inputs.to_vec();
        for e in 0..input.len() {
            let x = input.data()[e];
            shifted[i].data_mut()[e] = x + STEP;
            let plus = evaluate(build, &shifted);
            shifted[i].data_mut()[e] = x - STEP;
            let minus = evaluate(build, &shifted);
            shifted[i].data_mut()[e] = x;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.data()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Reduces a tensor-valued node to a scalar by a fixed random projection.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = random(g.shape(out), &mut rng);
    let w = g.constant(weights);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}
