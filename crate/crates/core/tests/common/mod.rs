#![allow(dead_code)]

pub mod corpus;
pub mod ctc;
pub mod grad;
pub mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiral_core::numerics::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let z: f64 = r.sample(rand_distr::StandardNormal);
        z
    })
}

/// `Σ y ⊙ R` for a fixed random `R`, turning any output into a scalar whose
/// gradient exercises every element.
pub fn probe_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let r = g.constant(randn(g.shape(y), seed ^ 0x5eed));
    let p = g.mul(y, r).expect("same shape");
    g.sum(p)
}

/// Gradient norms below this are compared absolutely: central differences at
/// `h = 1e-5` carry a few `1e-11` of rounding noise, so an exactly-zero gradient
/// (a bias feeding batch norm, say) cannot be checked relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Worst relative error `‖a − n‖ / max(‖a‖, ‖n‖, GRAD_FLOOR)` between the tape gradient and
/// central differences, over every input tensor. At most `max_coords` entries of
/// each input are perturbed (evenly spread).
pub fn grad_check(inputs: &[Tensor<f64>], max_coords: usize, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = f(&mut g, &vars);
    let grads = g.backward(l).expect("backward");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let n = inputs[i].numel();
        let step = n.div_ceil(max_coords.max(1)).max(1);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in (0..n).step_by(step) {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += h;
            let up = eval(&xs);
            xs[i].data_mut()[j] -= 2.0 * h;
            let down = eval(&xs);
            let num = (up - down) / (2.0 * h);
            diff += (analytic[j] - num).powi(2);
            na += analytic[j].powi(2);
            nn += num * num;
        }
        let scale = na.sqrt().max(nn.sqrt()).max(GRAD_FLOOR);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}
