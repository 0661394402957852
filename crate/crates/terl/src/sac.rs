//! Soft actor-critic backbone: squashed-Gaussian policy, twin critics with
//! EMA targets, and a learnable temperature. The only departure from
//! standard SAC is that the bootstrapped reward may be the
//! information-regularized r* computed upstream.

use ndgrad::gaussian::{gaussian_log_prob, tanh_squash_log_prob};
use ndgrad::graph::{Graph, Var};
use ndgrad::mlp::{Head, Mlp, MlpOut, MlpSpec, MlpVars};
use ndgrad::tensor::{Real, Tensor};
use ndgrad::{Adam, AdamHyper};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const HIDDEN_DIM: usize = 256;
/// Guard when recovering the pre-squash value of a stored action.
pub const ATANH_EPS: f32 = 1e-6;

/// Squashed-Gaussian policy over a latent input. Emits actions in
/// (-1, 1)^d; the caller maps them affinely to env bounds.
#[derive(Debug, Clone)]
pub struct Policy<T: Real> {
    pub mlp: Mlp<T>,
}

impl<T: Real> Policy<T> {
    pub fn new(input_dim: usize, act_dim: usize, hidden: usize, seed: u64) -> Self {
        let spec = MlpSpec::new(
            vec![input_dim, hidden, hidden, 2 * act_dim],
            Head::Gaussian { min_log_std: LOG_STD_MIN, max_log_std: LOG_STD_MAX },
        );
        Policy { mlp: Mlp::init(spec, seed) }
    }

    pub fn act_dim(&self) -> usize {
        self.mlp.spec().output_dim() / 2
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec().input_dim()
    }

    /// Graph-recorded head: (mean, clamped log-std) at a latent batch.
    pub fn head(&self, g: &Graph<T>, vars: &MlpVars, z: Var) -> (Var, Var) {
        match self.mlp.apply(g, vars, z) {
            MlpOut::Gaussian { mean, log_std } => (mean, log_std),
            MlpOut::Plain(_) => unreachable!("policy head is Gaussian by construction"),
        }
    }

    /// Stochastic action for one latent row: `tanh(mu + sigma * xi)`.
    pub fn act_stochastic(&self, z: &[T], rng: &mut ChaCha8Rng) -> Vec<T> {
        let (mean, log_std) = self.mlp.forward_gaussian(&Tensor::new(vec![1, z.len()], z.to_vec()));
        mean.data()
            .iter()
            .zip(log_std.data())
            .map(|(&m, &ls)| {
                let xi: f64 = rng.sample(rand_distr::StandardNormal);
                (m + ls.exp() * T::from_f64(xi)).tanh()
            })
            .collect()
    }

    /// Deterministic action `tanh(mu)` used for evaluation.
    pub fn act_deterministic(&self, z: &[T]) -> Vec<T> {
        let (mean, _) = self.mlp.forward_gaussian(&Tensor::new(vec![1, z.len()], z.to_vec()));
        mean.data().iter().map(|&m| m.tanh()).collect()
    }
}

/// Twin critics plus their EMA targets. The minimum over the target pair
/// backs every bootstrapped value.
#[derive(Debug, Clone)]
pub struct CriticPair<T: Real> {
    pub q1: Mlp<T>,
    pub q2: Mlp<T>,
    pub target1: Mlp<T>,
    pub target2: Mlp<T>,
}

impl<T: Real> CriticPair<T> {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize, seed1: u64, seed2: u64) -> Self {
        let spec = MlpSpec::new(vec![obs_dim + act_dim, hidden, hidden, 1], Head::Plain);
        let q1 = Mlp::init(spec.clone(), seed1);
        let q2 = Mlp::init(spec, seed2);
        let target1 = q1.clone();
        let target2 = q2.clone();
        CriticPair { q1, q2, target1, target2 }
    }

    /// `target <- (1 - rate) * target + rate * online`, both targets.
    pub fn soft_update(&mut self, rate: f64) {
        let r = T::from_f64(rate);
        let keep = T::from_f64(1.0 - rate);
        for (online, target) in [(&self.q1, &mut self.target1), (&self.q2, &mut self.target2)] {
            for (po, pt) in online.params().iter().zip(target.params_mut()) {
                for (o, t) in po.data().iter().zip(pt.data_mut()) {
                    *t = keep * *t + r * *o;
                }
            }
        }
    }

    /// No-grad `min(target1, target2)` on a state-action batch.
    pub fn min_target_nograd(&self, s: &Tensor<T>, a: &Tensor<T>) -> Vec<T> {
        let g = Graph::new();
        let x = g.concat_cols(&[g.input_const(s), g.input_const(a)]);
        let t1 = self.target1.bind_const(&g);
        let t2 = self.target2.bind_const(&g);
        let q1 = self.target1.apply(&g, &t1, x).plain();
        let q2 = self.target2.apply(&g, &t2, x).plain();
        g.value_data(g.minimum(q1, q2))
    }
}

/// Learnable entropy temperature, stored in log space so beta stays
/// positive. Frozen when `learn` is false.
#[derive(Debug, Clone)]
pub struct Temperature<T: Real> {
    log_beta: Tensor<T>,
    adam: Adam<T>,
    pub target_entropy: f64,
    pub learn: bool,
}

impl<T: Real> Temperature<T> {
    pub fn new(init_beta: f64, lr: f64, target_entropy: f64, learn: bool) -> Self {
        assert!(init_beta > 0.0, "initial temperature must be positive");
        let log_beta = Tensor::new(vec![1], vec![T::from_f64(init_beta.ln())]).with_grad();
        let adam = Adam::for_params(AdamHyper::with_lr(lr), &[&log_beta]);
        Temperature { log_beta, adam, target_entropy, learn }
    }

    pub fn beta(&self) -> T {
        self.log_beta.data()[0].exp()
    }

    pub fn log_beta(&self) -> T {
        self.log_beta.data()[0]
    }

    pub fn set_log_beta(&mut self, v: T) {
        self.log_beta.data_mut()[0] = v;
    }

    /// One Adam step on J(beta) = E[-beta (log pi + target_entropy)] with
    /// log pi held constant; returns the refreshed beta.
    pub fn update(&mut self, mean_log_pi: f64) -> T {
        if self.learn {
            let beta = self.beta();
            let grad = -(beta.to_f64() * (mean_log_pi + self.target_entropy));
            self.adam.update(&mut [&mut self.log_beta], &[&[T::from_f64(grad)]]);
        }
        self.beta()
    }
}

/// Bootstrap target combination: `y = r* + gamma (1 - d) (min_q - beta log_pi)`.
/// The result is a constant for the critic loss; no gradient flows back.
pub fn td_target<T: Real>(
    r_star: &[T],
    done: &[T],
    min_q: &[T],
    log_pi: &[T],
    gamma: f64,
    beta: T,
) -> Vec<T> {
    assert!(
        r_star.len() == done.len() && done.len() == min_q.len() && min_q.len() == log_pi.len(),
        "td_target: batch length mismatch"
    );
    let gamma = T::from_f64(gamma);
    r_star
        .iter()
        .zip(done)
        .zip(min_q)
        .zip(log_pi)
        .map(|(((&r, &d), &q), &lp)| r + gamma * (T::ONE - d) * (q - beta * lp))
        .collect()
}

/// Everything `critic_target` needs from the sampled batch, already encoded.
/// `z_next` is the policy input at the next state (the raw state when the
/// encoder is bypassed).
pub struct TargetInputs<'a, T: Real> {
    pub s_next: &'a Tensor<T>,
    pub z_next: &'a Tensor<T>,
    pub r_star: &'a [T],
    pub done: &'a [T],
    /// Standard-normal draws shaped `[batch, act_dim]` for the fresh
    /// next-state action sample.
    pub noise: &'a Tensor<T>,
}

/// Eq.-style bootstrap target with a fresh squashed sample a' ~ pi(.|z'):
/// `y = r* + gamma (1 - d) [min Q_target(s', a') - beta log pi(a'|z')]`.
/// Entirely gradient-free.
pub fn critic_target<T: Real>(
    critics: &CriticPair<T>,
    policy: &Policy<T>,
    inputs: &TargetInputs<'_, T>,
    gamma: f64,
    beta: T,
) -> Vec<T> {
    let g = Graph::new();
    let z = g.input_const(inputs.z_next);
    let pol = policy.mlp.bind_const(&g);
    let (mean, log_std) = policy.head(&g, &pol, z);
    let xi = g.input_const(inputs.noise);
    let u = g.add(mean, g.mul(g.exp(log_std), xi));
    let (a_next, log_pi) = tanh_squash_log_prob(&g, u, mean, log_std);

    let x = g.concat_cols(&[g.input_const(inputs.s_next), a_next]);
    let t1 = critics.target1.bind_const(&g);
    let t2 = critics.target2.bind_const(&g);
    let q1 = critics.target1.apply(&g, &t1, x).plain();
    let q2 = critics.target2.apply(&g, &t2, x).plain();
    let min_q = g.value_data(g.reshape(g.minimum(q1, q2), vec![inputs.r_star.len()]));
    let log_pi = g.value_data(log_pi);

    td_target(inputs.r_star, inputs.done, &min_q, &log_pi, gamma, beta)
}

/// One Adam step on both critics against the same constant targets.
/// Returns the mean of the two MSE losses.
pub fn critic_update<T: Real>(
    critics: &mut CriticPair<T>,
    opt: &mut Adam<T>,
    s: &Tensor<T>,
    a: &Tensor<T>,
    y: &[T],
) -> T {
    let g = Graph::new();
    let x = g.concat_cols(&[g.input_const(s), g.input_const(a)]);
    let v1 = critics.q1.bind(&g);
    let v2 = critics.q2.bind(&g);
    let n = y.len();
    let target = g.constant(vec![n], y.to_vec());
    let q1 = g.reshape(critics.q1.apply(&g, &v1, x).plain(), vec![n]);
    let q2 = g.reshape(critics.q2.apply(&g, &v2, x).plain(), vec![n]);
    let d1 = g.sub(q1, target);
    let d2 = g.sub(q2, target);
    let mse1 = g.mean_all(g.mul(d1, d1));
    let mse2 = g.mean_all(g.mul(d2, d2));
    let loss = g.add(mse1, mse2);
    g.backward(loss);

    let grads: Vec<Vec<T>> =
        v1.vars.iter().chain(&v2.vars).map(|&v| g.grad(v).expect("critic grad")).collect();
    let grad_slices: Vec<&[T]> = grads.iter().map(|g| g.as_slice()).collect();
    let mut params: Vec<&mut Tensor<T>> =
        critics.q1.params_mut().iter_mut().chain(critics.q2.params_mut()).collect();
    opt.update(&mut params, &grad_slices);

    (g.scalar_value(mse1) + g.scalar_value(mse2)) / T::from_f64(2.0)
}

/// Pre-squash value of a stored action, clamped away from the open-interval
/// boundary so atanh stays finite.
pub fn atanh_clamped(a: f32) -> f32 {
    let c = a.clamp(-1.0 + ATANH_EPS, 1.0 - ATANH_EPS);
    // atanh(x) = 0.5 ln((1+x)/(1-x))
    0.5 * ((1.0 + c) / (1.0 - c)).ln()
}

/// Log density of already-squashed actions under the policy at `z`,
/// differentiable w.r.t. the policy head. The squash correction term is a
/// constant because the actions come from the buffer.
pub fn log_prob_of_actions<T: Real>(
    g: &Graph<T>,
    policy: &Policy<T>,
    pol_vars: &MlpVars,
    z: Var,
    actions: &Tensor<T>,
) -> Var {
    let (mean, log_std) = policy.head(g, pol_vars, z);
    let (rows, cols) = (actions.shape()[0], actions.shape()[1]);
    let mut u = Vec::with_capacity(rows * cols);
    let mut correction = vec![T::ZERO; rows];
    for r in 0..rows {
        for c in 0..cols {
            let a = actions.data()[r * cols + c].to_f64();
            u.push(T::from_f64(atanh_clamped(a as f32) as f64));
            correction[r] =
                correction[r] + T::from_f64((1.0 - a * a + ndgrad::SQUASH_EPS).max(ndgrad::SQUASH_EPS).ln());
        }
    }
    let u = g.constant(vec![rows, cols], u);
    let corr = g.constant(vec![rows], correction);
    g.sub(gaussian_log_prob(g, u, mean, log_std), corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_policy(input: usize, act: usize) -> Policy<f64> {
        let mut p = Policy::new(input, act, 8, 0);
        for t in p.mlp.params_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        p
    }

    #[test]
    fn zero_weight_policy_acts_at_zero() {
        let p = zero_policy(3, 2);
        let a = p.act_deterministic(&[0.5, -0.2, 1.0]);
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn actions_stay_in_bounds() {
        let p = Policy::<f64>::new(3, 2, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            let z = vec![i as f64 * 0.3 - 5.0, -(i as f64), 2.0];
            for a in p.act_stochastic(&z, &mut rng) {
                assert!((-1.0..=1.0).contains(&a));
            }
        }
    }

    #[test]
    fn stochastic_actions_are_seed_deterministic() {
        let p = Policy::<f64>::new(3, 1, 16, 4);
        let a = p.act_stochastic(&[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(9));
        let b = p.act_stochastic(&[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn td_target_matches_hand_arithmetic() {
        // r* = 1, gamma = 0.99, d = 0, minQ = 10, beta = 0.1, log pi = -1
        let y = td_target(&[1.0f64], &[0.0], &[10.0], &[-1.0], 0.99, 0.1);
        assert!((y[0] - 10.999).abs() < 1e-12);
        // termination: y = r* exactly
        let y = td_target(&[1.0f64], &[1.0], &[10.0], &[-1.0], 0.99, 0.1);
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn critic_target_matches_straight_line_reimplementation() {
        let obs_dim = 3;
        let act_dim = 2;
        let n = 4;
        let critics = CriticPair::<f64>::new(obs_dim, act_dim, 8, 11, 12);
        let policy = Policy::<f64>::new(obs_dim, act_dim, 8, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s_next =
            Tensor::new(vec![n, obs_dim], (0..n * obs_dim).map(|_| rng.gen::<f64>() - 0.5).collect());
        let noise =
            Tensor::new(vec![n, act_dim], (0..n * act_dim).map(|_| rng.gen::<f64>() - 0.5).collect());
        let r_star = vec![0.3, -1.0, 2.0, 0.0];
        let done = vec![0.0, 1.0, 0.0, 0.0];
        let (gamma, beta) = (0.99, 0.17);

        let y = critic_target(
            &critics,
            &policy,
            &TargetInputs { s_next: &s_next, z_next: &s_next, r_star: &r_star, done: &done, noise: &noise },
            gamma,
            beta,
        );

        // Independent recomputation with plain tensor ops, row by row.
        for i in 0..n {
            let z_row = s_next.data()[i * obs_dim..(i + 1) * obs_dim].to_vec();
            let (mean, log_std) = policy.mlp.forward_gaussian(&Tensor::new(vec![1, obs_dim], z_row.clone()));
            let mut a = Vec::new();
            let mut log_pi = 0.0;
            for j in 0..act_dim {
                let (m, ls) = (mean.data()[j], log_std.data()[j]);
                let u = m + ls.exp() * noise.data()[i * act_dim + j];
                let aj: f64 = u.tanh();
                a.push(aj);
                let sigma = ls.exp();
                log_pi += -0.5 * ((u - m) / sigma).powi(2) - ls - ndgrad::HALF_LN_TWO_PI;
                log_pi -= (1.0 - aj * aj + ndgrad::SQUASH_EPS).ln();
            }
            let mut x = z_row;
            x.extend_from_slice(&a);
            let x = Tensor::new(vec![1, obs_dim + act_dim], x);
            let q1 = critics.target1.forward(&x).data()[0];
            let q2 = critics.target2.forward(&x).data()[0];
            let expect = r_star[i] + gamma * (1.0 - done[i]) * (q1.min(q2) - beta * log_pi);
            assert!((y[i] - expect).abs() < 1e-9, "row {i}: {} vs {expect}", y[i]);
        }
    }

    #[test]
    fn bootstrapped_value_never_exceeds_either_target() {
        let critics = CriticPair::<f64>::new(3, 1, 8, 21, 22);
        let policy = Policy::<f64>::new(3, 1, 8, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 16;
        let s_next = Tensor::new(vec![n, 3], (0..n * 3).map(|_| rng.gen::<f64>() - 0.5).collect());
        let noise = Tensor::new(vec![n, 1], (0..n).map(|_| rng.gen::<f64>() - 0.5).collect());
        let y = critic_target(
            &critics,
            &policy,
            &TargetInputs {
                s_next: &s_next,
                z_next: &s_next,
                r_star: &vec![0.0; n],
                done: &vec![0.0; n],
                noise: &noise,
            },
            1.0,
            0.0,
        );
        // With r* = 0, gamma = 1, beta = 0, y is exactly min(Q1, Q2)(s', a').
        // Recompute each target on the same fresh action to bound it.
        for i in 0..n {
            let z_row = s_next.data()[i * 3..(i + 1) * 3].to_vec();
            let (mean, log_std) = policy.mlp.forward_gaussian(&Tensor::new(vec![1, 3], z_row.clone()));
            let u = mean.data()[0] + log_std.data()[0].exp() * noise.data()[i];
            let mut x = z_row;
            x.push(u.tanh());
            let x = Tensor::new(vec![1, 4], x);
            let q1 = critics.target1.forward(&x).data()[0];
            let q2 = critics.target2.forward(&x).data()[0];
            assert!(y[i] <= q1 + 1e-12 && y[i] <= q2 + 1e-12);
        }
    }

    #[test]
    fn critic_update_is_a_no_op_at_the_optimum() {
        let mut critics = CriticPair::<f64>::new(2, 1, 8, 31, 32);
        for mlp in [&mut critics.q1, &mut critics.q2] {
            for t in mlp.params_mut() {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        }
        let before: Vec<f64> = critics.q1.params().iter().flat_map(|p| p.data().to_vec()).collect();
        let mut opt = {
            let params: Vec<&Tensor<f64>> = critics.q1.params().iter().chain(critics.q2.params()).collect();
            Adam::for_params(AdamHyper::with_lr(1e-3), &params)
        };
        let s = Tensor::new(vec![2, 2], vec![0.1, 0.2, -0.3, 0.4]);
        let a = Tensor::new(vec![2, 1], vec![0.5, -0.5]);
        let loss = critic_update(&mut critics, &mut opt, &s, &a, &[0.0, 0.0]);
        assert_eq!(loss, 0.0);
        let after: Vec<f64> = critics.q1.params().iter().flat_map(|p| p.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn critic_loss_descends_on_a_frozen_batch() {
        let mut critics = CriticPair::<f64>::new(2, 1, 16, 41, 42);
        let mut opt = {
            let params: Vec<&Tensor<f64>> = critics.q1.params().iter().chain(critics.q2.params()).collect();
            Adam::for_params(AdamHyper::with_lr(1e-2), &params)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 32;
        let s = Tensor::new(vec![n, 2], (0..n * 2).map(|_| rng.gen::<f64>() - 0.5).collect());
        let a = Tensor::new(vec![n, 1], (0..n).map(|_| rng.gen::<f64>() - 0.5).collect());
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let first = critic_update(&mut critics, &mut opt, &s, &a, &y);
        let mut last = first;
        for _ in 0..99 {
            last = critic_update(&mut critics, &mut opt, &s, &a, &y);
        }
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let obs_dim = 2;
        let mut critics = CriticPair::<f64>::new(obs_dim, 1, 4, 51, 52);
        let s = Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.4, 0.3, -0.6, 0.9]);
        let a = Tensor::new(vec![3, 1], vec![0.2, -0.1, 0.7]);
        let y = vec![0.5, -0.3, 1.2];

        let loss_of = |critics: &CriticPair<f64>| -> f64 {
            let g = Graph::new();
            let x = g.concat_cols(&[g.input_const(&s), g.input_const(&a)]);
            let v1 = critics.q1.bind_const(&g);
            let v2 = critics.q2.bind_const(&g);
            let target = g.constant(vec![3], y.clone());
            let q1 = g.reshape(critics.q1.apply(&g, &v1, x).plain(), vec![3]);
            let q2 = g.reshape(critics.q2.apply(&g, &v2, x).plain(), vec![3]);
            let d1 = g.sub(q1, target);
            let d2 = g.sub(q2, target);
            g.scalar_value(g.add(g.mean_all(g.mul(d1, d1)), g.mean_all(g.mul(d2, d2))))
        };

        // Analytic grads via the same graph critic_update builds.
        let g = Graph::new();
        let x = g.concat_cols(&[g.input_const(&s), g.input_const(&a)]);
        let v1 = critics.q1.bind(&g);
        let v2 = critics.q2.bind(&g);
        let target = g.constant(vec![3], y.clone());
        let q1 = g.reshape(critics.q1.apply(&g, &v1, x).plain(), vec![3]);
        let q2 = g.reshape(critics.q2.apply(&g, &v2, x).plain(), vec![3]);
        let d1 = g.sub(q1, target);
        let d2 = g.sub(q2, target);
        let loss = g.add(g.mean_all(g.mul(d1, d1)), g.mean_all(g.mul(d2, d2)));
        g.backward(loss);
        let grads: Vec<Vec<f64>> = v1.vars.iter().chain(&v2.vars).map(|&v| g.grad(v).unwrap()).collect();

        let h = 1e-5;
        let n1 = critics.q1.params().len();
        for (pi, grad) in grads.iter().enumerate() {
            for ei in 0..grad.len() {
                {
                    let p = if pi < n1 {
                        &mut critics.q1.params_mut()[pi]
                    } else {
                        &mut critics.q2.params_mut()[pi - n1]
                    };
                    p.data_mut()[ei] += h;
                }
                let up = loss_of(&critics);
                {
                    let p = if pi < n1 {
                        &mut critics.q1.params_mut()[pi]
                    } else {
                        &mut critics.q2.params_mut()[pi - n1]
                    };
                    p.data_mut()[ei] -= 2.0 * h;
                }
                let down = loss_of(&critics);
                {
                    let p = if pi < n1 {
                        &mut critics.q1.params_mut()[pi]
                    } else {
                        &mut critics.q2.params_mut()[pi - n1]
                    };
                    p.data_mut()[ei] += h;
                }
                let fd = (up - down) / (2.0 * h);
                let err = (grad[ei] - fd).abs() / grad[ei].abs().max(fd.abs()).max(1.0);
                assert!(err <= 1e-4, "param {pi} entry {ei}: {} vs {fd}", grad[ei]);
            }
        }
    }

    #[test]
    fn temperature_is_stationary_at_target_entropy() {
        let mut temp = Temperature::<f64>::new(0.1, 1e-2, -1.0, true);
        let before = temp.beta();
        temp.update(1.0); // E[log pi] = -target_entropy = 1.0 -> zero gradient
        assert_eq!(temp.beta(), before);
    }

    #[test]
    fn temperature_rises_when_entropy_is_below_target() {
        let mut temp = Temperature::<f64>::new(0.1, 1e-2, -1.0, true);
        let before = temp.beta();
        temp.update(2.0); // log pi above -target: entropy too low
        assert!(temp.beta() > before);
    }

    #[test]
    fn temperature_trajectory_matches_scalar_oracle() {
        let (lr, target) = (1e-3, -2.0);
        let mut temp = Temperature::<f64>::new(0.1, lr, target, true);
        // Scalar Adam on log beta with gradient -beta (log_pi + target).
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut log_beta = 0.1f64.ln();
        let (mut m, mut v) = (0.0, 0.0);
        for (t, log_pi) in [(1, -0.5), (2, -3.0), (3, 0.7)] {
            let grad = -(log_beta.exp() * (log_pi + target));
            m = b1 * m + (1.0 - b1) * grad;
            v = b2 * v + (1.0 - b2) * grad * grad;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            log_beta -= lr * m_hat / (v_hat.sqrt() + eps);
            temp.update(log_pi);
            assert!((temp.beta() - log_beta.exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_temperature_never_moves() {
        let mut temp = Temperature::<f64>::new(0.1, 1e-2, -1.0, false);
        temp.update(5.0);
        assert!((temp.beta() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn soft_update_fixed_point_and_rate() {
        let mut critics = CriticPair::<f64>::new(2, 1, 4, 61, 62);
        // target == online is a fixed point
        let before: Vec<f64> = critics.target1.params().iter().flat_map(|p| p.data().to_vec()).collect();
        critics.soft_update(0.01);
        let after: Vec<f64> = critics.target1.params().iter().flat_map(|p| p.data().to_vec()).collect();
        assert_eq!(before, after);

        // target = 0, online = 1 -> 0.01
        for t in critics.q1.params_mut() {
            for v in t.data_mut() {
                *v = 1.0;
            }
        }
        for t in critics.target1.params_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        critics.soft_update(0.01);
        assert!((critics.target1.params()[0].data()[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn soft_update_decays_geometrically() {
        let mut critics = CriticPair::<f64>::new(2, 1, 4, 71, 72);
        for t in critics.q1.params_mut() {
            for v in t.data_mut() {
                *v = 1.0;
            }
        }
        for t in critics.target1.params_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        for _ in 0..69 {
            critics.soft_update(0.01);
        }
        // |1 - target| = 0.99^69 which is within a hair of one half
        let diff = 1.0 - critics.target1.params()[0].data()[0];
        assert!((0.49..=0.51).contains(&diff), "diff {diff}");
    }

    #[test]
    fn target_perturbation_does_not_touch_critic_gradients() {
        // With y fixed, grads of the online critics cannot depend on targets.
        let mut critics = CriticPair::<f64>::new(2, 1, 4, 81, 82);
        let s = Tensor::new(vec![2, 2], vec![0.1, 0.2, -0.3, 0.4]);
        let a = Tensor::new(vec![2, 1], vec![0.5, -0.5]);
        let y = vec![0.7, -0.2];

        let grads_of = |critics: &CriticPair<f64>| -> Vec<Vec<f64>> {
            let g = Graph::new();
            let x = g.concat_cols(&[g.input_const(&s), g.input_const(&a)]);
            let v1 = critics.q1.bind(&g);
            let v2 = critics.q2.bind(&g);
            let target = g.constant(vec![2], y.clone());
            let q1 = g.reshape(critics.q1.apply(&g, &v1, x).plain(), vec![2]);
            let q2 = g.reshape(critics.q2.apply(&g, &v2, x).plain(), vec![2]);
            let d1 = g.sub(q1, target);
            let d2 = g.sub(q2, target);
            let loss = g.add(g.mean_all(g.mul(d1, d1)), g.mean_all(g.mul(d2, d2)));
            g.backward(loss);
            v1.vars.iter().chain(&v2.vars).map(|&v| g.grad(v).unwrap()).collect()
        };

        let before = grads_of(&critics);
        for t in critics.target1.params_mut() {
            for v in t.data_mut() {
                *v += 100.0;
            }
        }
        let after = grads_of(&critics);
        assert_eq!(before, after);
    }

    #[test]
    fn atanh_recovers_pre_squash_values() {
        for u in [-3.0f32, -0.5, 0.0, 0.9, 2.5] {
            let a = u.tanh();
            assert!((atanh_clamped(a) - u).abs() < 1e-4, "u {u}");
        }
        // Saturated storage stays finite
        assert!(atanh_clamped(1.0).is_finite());
        assert!(atanh_clamped(-1.0).is_finite());
    }
}
