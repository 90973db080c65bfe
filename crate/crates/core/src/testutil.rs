//! Shared helpers for unit tests: a tiny deterministic RNG and a central
//! finite-difference gradient checker. The checker is the independent oracle
//! for every backward rule, so it must never call into the tape's reverse
//! pass itself.

use crate::tensor::{Tape, Tensor, TensorId};

/// splitmix64-based generator; good enough for test fixtures and cheap to
/// reason about.
pub struct SmallRng {
    state: u64,
}

impl SmallRng {
    pub fn new(seed: u64) -> Self {
        SmallRng {
            state: seed.wrapping_add(0x9e3779b97f4a7c15),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }
}

const FD_STEP: f64 = 1e-5;

/// Central finite differences against the tape's analytic gradients.
///
/// `build` must construct the scalar loss from the provided leaves. Returns
/// the infinity-norm relative error max_i |a_i - n_i| / max(max_i |n_i|, 1e-8)
/// over all parameters.
pub fn grad_check(
    params: &[(Vec<usize>, Vec<f64>)],
    build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
) -> f64 {
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|(shape, data)| tape.leaf(Tensor::new(shape.clone(), data.clone()).unwrap(), true))
        .collect();
    let root = build(&mut tape, &ids);
    tape.backward(root).expect("backward");
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("tracked leaf grad").to_vec())
        .collect();

    let eval = |data: &[Vec<f64>]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<TensorId> = params
            .iter()
            .zip(data.iter())
            .map(|((shape, _), d)| t.leaf(Tensor::new(shape.clone(), d.clone()).unwrap(), false))
            .collect();
        let root = build(&mut t, &ids);
        t.value(root).item()
    };

    let base: Vec<Vec<f64>> = params.iter().map(|(_, d)| d.clone()).collect();
    let mut max_abs_diff: f64 = 0.0;
    let mut max_numeric: f64 = 0.0;
    for (p, (_, data)) in params.iter().enumerate() {
        for i in 0..data.len() {
            let mut plus = base.clone();
            plus[p][i] += FD_STEP;
            let mut minus = base.clone();
            minus[p][i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            max_abs_diff = max_abs_diff.max((analytic[p][i] - numeric).abs());
            max_numeric = max_numeric.max(numeric.abs());
        }
    }
    max_abs_diff / max_numeric.max(1e-8)
}
