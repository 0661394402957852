//! Trajectory-entropy machinery: state encoder, autoregressive action
//! predictor, the batch estimator of the entropy upper bound, and the
//! information-regularized reward.
//!
//! The predictor scores the executed action given the latents of the two
//! adjacent states and the previous action; its negative mean log-likelihood
//! estimates (an upper bound on) the per-step conditional entropy of the
//! action sequence. Adding `alpha * log q` to the env reward biases the
//! policy toward actions the predictor can explain.

use ndgrad::gaussian::gaussian_log_prob;
use ndgrad::graph::{Graph, Var};
use ndgrad::mlp::{Head, Mlp, MlpOut, MlpSpec, MlpVars};
use ndgrad::tensor::{Real, Tensor};

use crate::sac::{HIDDEN_DIM, LOG_STD_MAX, LOG_STD_MIN};

pub const LATENT_DIM: usize = 30;

/// Encoder and action predictor; everything the objective adds on top of
/// the SAC backbone.
#[derive(Debug, Clone)]
pub struct Parts<T: Real> {
    /// Deterministic state encoder s -> z.
    pub encoder: Mlp<T>,
    /// Diagonal-Gaussian model of a_t given (z_t, z_next, a_prev, is_first).
    pub predictor: Mlp<T>,
}

impl<T: Real> Parts<T> {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize, latent: usize, enc_seed: u64, pred_seed: u64) -> Self {
        let encoder = Mlp::init(MlpSpec::new(vec![obs_dim, hidden, hidden, latent], Head::Plain), enc_seed);
        let predictor = Mlp::init(
            MlpSpec::new(
                vec![2 * latent + act_dim + 1, hidden, hidden, 2 * act_dim],
                Head::Gaussian { min_log_std: LOG_STD_MIN, max_log_std: LOG_STD_MAX },
            ),
            pred_seed,
        );
        Parts { encoder, predictor }
    }

    pub fn with_defaults(obs_dim: usize, act_dim: usize, enc_seed: u64, pred_seed: u64) -> Self {
        Self::new(obs_dim, act_dim, HIDDEN_DIM, LATENT_DIM, enc_seed, pred_seed)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.spec().output_dim()
    }

    /// No-grad latent for a single observation row.
    pub fn encode_row(&self, s: &[T]) -> Vec<T> {
        self.encoder.forward(&Tensor::new(vec![1, s.len()], s.to_vec())).data().to_vec()
    }
}

/// Graph-recorded `z = e(s)` for a batch.
pub fn encode<T: Real>(g: &Graph<T>, encoder: &Mlp<T>, vars: &MlpVars, s: Var) -> Var {
    match encoder.apply(g, vars, s) {
        MlpOut::Plain(z) => z,
        MlpOut::Gaussian { .. } => unreachable!("encoder head is plain by construction"),
    }
}

/// Graph-recorded per-element `log q(a_t | z_t, z_next, a_prev, is_first)`.
/// `a_t` is the executed, normalized action; the density is a plain diagonal
/// Gaussian at the predictor head.
pub fn log_q<T: Real>(
    g: &Graph<T>,
    predictor: &Mlp<T>,
    vars: &MlpVars,
    z_t: Var,
    z_next: Var,
    a_prev: Var,
    is_first: Var,
    a_t: Var,
) -> Var {
    let input = g.concat_cols(&[z_t, z_next, a_prev, is_first]);
    let (mean, log_std) = match predictor.apply(g, vars, input) {
        MlpOut::Gaussian { mean, log_std } => (mean, log_std),
        MlpOut::Plain(_) => unreachable!("predictor head is Gaussian by construction"),
    };
    gaussian_log_prob(g, a_t, mean, log_std)
}

/// Batch inputs for a no-grad bound/reward evaluation.
pub struct LogQBatch<'a, T: Real> {
    pub s: &'a Tensor<T>,
    pub s_next: &'a Tensor<T>,
    pub a_prev: &'a Tensor<T>,
    /// 0/1 column `[batch, 1]`.
    pub is_first: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
}

/// Per-element `log q` without gradients, recomputed from the current
/// encoder/predictor parameters each call (never cached).
pub fn log_q_batch<T: Real>(parts: &Parts<T>, batch: &LogQBatch<'_, T>) -> Vec<T> {
    let g = Graph::new();
    let enc = parts.encoder.bind_const(&g);
    let pred = parts.predictor.bind_const(&g);
    let z_t = encode(&g, &parts.encoder, &enc, g.input_const(batch.s));
    let z_next = encode(&g, &parts.encoder, &enc, g.input_const(batch.s_next));
    let lq = log_q(
        &g,
        &parts.predictor,
        &pred,
        z_t,
        z_next,
        g.input_const(batch.a_prev),
        g.input_const(batch.is_first),
        g.input_const(batch.a),
    );
    g.value_data(lq)
}

/// Per-step estimate of the trajectory-entropy upper bound: the negated
/// batch mean of `log q`.
pub fn upper_bound<T: Real>(log_q_values: &[T]) -> f64 {
    assert!(!log_q_values.is_empty(), "upper_bound of an empty batch");
    let sum: f64 = log_q_values.iter().map(|v| v.to_f64()).sum();
    -(sum / log_q_values.len() as f64)
}

/// Information-regularized reward `r* = r + alpha * log q`, element-wise.
pub fn info_reward<T: Real>(r: &[T], log_q_values: &[T], alpha: f64) -> Vec<T> {
    assert!(alpha >= 0.0, "alpha must be non-negative");
    assert_eq!(r.len(), log_q_values.len(), "info_reward: batch length mismatch");
    let a = T::from_f64(alpha);
    r.iter().zip(log_q_values).map(|(&r, &lq)| r + a * lq).collect()
}
