//! Diagonal-Gaussian log densities and the tanh change of variables used by
//! squashed policies.

use crate::graph::{Graph, Var};
use crate::tensor::Real;

pub const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Numerical guard inside `log(1 - a^2 + eps)` of the squash correction.
pub const SQUASH_EPS: f64 = 1e-6;

/// Log density of a diagonal Gaussian, summed over the feature axis:
/// `sum_i [ -0.5 ((x_i - mu_i)/sigma_i)^2 - log sigma_i - 0.5 ln 2pi ]`.
///
/// `log_std` is expected to be clamped by the caller before use, so no
/// sigma can underflow to zero. Shapes: all `[batch, d]`, result `[batch]`.
pub fn gaussian_log_prob<T: Real>(g: &Graph<T>, x: Var, mean: Var, log_std: Var) -> Var {
    let inv_std = g.exp(g.neg(log_std));
    let z = g.mul(g.sub(x, mean), inv_std);
    let quad = g.mul_scalar(g.mul(z, z), T::from_f64(-0.5));
    let per_dim = g.add_scalar(g.sub(quad, log_std), T::from_f64(-HALF_LN_TWO_PI));
    g.row_sum(per_dim)
}

/// Squash a pre-activation Gaussian sample `u = mu + sigma * xi` through
/// tanh and return the action together with its corrected log density:
/// `a = tanh(u)`, `logp = logN(u; mu, sigma) - sum_i log(1 - a_i^2 + eps)`.
///
/// Components of `a` lie strictly inside (-1, 1) until tanh itself
/// saturates (|u| ≳ 19 in f64, ≳ 9 in f32); the `eps` term keeps the
/// correction finite even there.
pub fn tanh_squash_log_prob<T: Real>(g: &Graph<T>, u: Var, mean: Var, log_std: Var) -> (Var, Var) {
    let a = g.tanh(u);
    let base = gaussian_log_prob(g, u, mean, log_std);
    let one_minus_sq = g.add_scalar(g.rsub_scalar(g.mul(a, a), T::ONE), T::from_f64(SQUASH_EPS));
    let correction = g.row_sum(g.ln(one_minus_sq));
    let logp = g.sub(base, correction);
    (a, logp)
}

/// Plain-slice counterpart of [`gaussian_log_prob`] for a single row; used by
/// oracles and cheap no-graph paths.
pub fn gaussian_log_prob_row<T: Real>(x: &[T], mean: &[T], log_std: &[T]) -> T {
    assert_eq!(x.len(), mean.len());
    assert_eq!(x.len(), log_std.len());
    let mut total = T::ZERO;
    for i in 0..x.len() {
        let inv_std = (-log_std[i]).exp();
        let z = (x[i] - mean[i]) * inv_std;
        total = total + T::from_f64(-0.5) * z * z - log_std[i] - T::from_f64(HALF_LN_TWO_PI);
    }
    total
}
