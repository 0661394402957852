//! The trainable bundle: policy, twin critics with targets, temperature,
//! and (unless running in plain-SAC mode) the encoder/predictor pair.
//! `update` performs one gradient round: critic step every call, joint
//! actor/encoder/predictor step and temperature step on the actor cadence,
//! target EMA on its own cadence.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndgrad::checkpoint::{read_all_blocks, write_block, TensorBlock};
use ndgrad::gaussian::tanh_squash_log_prob;
use ndgrad::graph::{Graph, Var};
use ndgrad::mlp::{Head, Mlp, MlpSpec, MlpVars};
use ndgrad::tensor::{Real, Tensor};
use ndgrad::{seed, Adam, AdamHyper};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TerlError;
#[cfg(feature = "entropy-objective")]
use crate::objective::{self, Parts};
use crate::replay::Batch;
use crate::sac::{
    critic_target, critic_update, log_prob_of_actions, CriticPair, Policy, TargetInputs, Temperature,
    HIDDEN_DIM, LOG_STD_MAX, LOG_STD_MIN,
};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TERL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Actor update every N critic updates (one critic update per env step).
pub const ACTOR_UPDATE_EVERY: u64 = 2;
/// Target EMA application every N critic updates.
pub const TARGET_UPDATE_EVERY: u64 = 2;
pub const TARGET_EMA_RATE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub alpha: f64,
    pub sac_mode: bool,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub init_temperature: f64,
    pub learn_temperature: bool,
    pub seed: u64,
}

impl AgentSettings {
    pub fn defaults(obs_dim: usize, act_dim: usize) -> Self {
        AgentSettings {
            obs_dim,
            act_dim,
            hidden: HIDDEN_DIM,
            latent: crate::latent_dim_default(),
            alpha: 1e-5,
            sac_mode: false,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            temperature_lr: 1e-4,
            init_temperature: 0.1,
            learn_temperature: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateCounters {
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub target_updates: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub critic_loss: f32,
    /// Value of the maximization objective at the last actor step, if one
    /// ran this round.
    pub actor_objective: Option<f32>,
    /// Per-step trajectory-entropy bound estimate (0 in plain-SAC mode).
    pub entropy_bound: f32,
    pub beta: f32,
}

pub struct AgentBundle {
    pub settings: AgentSettings,
    pub policy: Policy<f32>,
    pub critics: CriticPair<f32>,
    pub temperature: Temperature<f32>,
    #[cfg(feature = "entropy-objective")]
    pub parts: Option<Parts<f32>>,
    critic_opt: Adam<f32>,
    actor_opt: Adam<f32>,
    pub counters: UpdateCounters,
}

fn draw_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let data = (0..rows * cols)
        .map(|_| {
            let x: f64 = rng.sample(rand_distr::StandardNormal);
            x as f32
        })
        .collect();
    Tensor::new(vec![rows, cols], data)
}

/// Plain-slice view of one sampled batch, shaped for graph construction.
pub struct ActorInputs<'a, T: Real> {
    pub s: &'a Tensor<T>,
    pub s_next: &'a Tensor<T>,
    pub a: &'a Tensor<T>,
    pub a_prev: &'a Tensor<T>,
    pub is_first: &'a Tensor<T>,
    pub r: &'a [T],
    /// Standard-normal draws `[batch, act_dim]` for the fresh next action.
    pub noise: &'a Tensor<T>,
}

/// The actor-side graph plus handles needed to pull gradients and stats.
pub struct ActorBuild<T: Real> {
    pub graph: Graph<T>,
    pub objective: Var,
    pub loss: Var,
    pub policy_vars: MlpVars,
    pub encoder_vars: Option<MlpVars>,
    pub predictor_vars: Option<MlpVars>,
    /// Log densities of the fresh next-state actions (for the temperature).
    pub next_log_pi: Vec<T>,
}

/// Shared core: per-element
/// `r - beta log pi(a_t|z_t) + gamma (min Q(s', a') - beta log pi(a'|z'))`
/// with `a' = tanh(mu + sigma xi)` reparameterized and critic parameters
/// bound as constants (their gradient flows only through `a'`).
#[allow(clippy::too_many_arguments)]
fn actor_terms<T: Real>(
    g: &Graph<T>,
    policy: &Policy<T>,
    critics: &CriticPair<T>,
    pol_vars: &MlpVars,
    z_t: Var,
    z_next: Var,
    s_next_const: Var,
    inputs: &ActorInputs<'_, T>,
    beta: T,
    gamma: f64,
) -> (Var, Var) {
    let n = inputs.r.len();
    let log_pi_t = log_prob_of_actions(g, policy, pol_vars, z_t, inputs.a);

    let (mean2, log_std2) = policy.head(g, pol_vars, z_next);
    let xi = g.input_const(inputs.noise);
    let u2 = g.add(mean2, g.mul(g.exp(log_std2), xi));
    let (a2, log_pi2) = tanh_squash_log_prob(g, u2, mean2, log_std2);

    let x2 = g.concat_cols(&[s_next_const, a2]);
    let c1 = critics.q1.bind_const(g);
    let c2 = critics.q2.bind_const(g);
    let q1 = critics.q1.apply(g, &c1, x2).plain();
    let q2 = critics.q2.apply(g, &c2, x2).plain();
    let min_q = g.reshape(g.minimum(q1, q2), vec![n]);

    let r = g.constant(vec![n], inputs.r.to_vec());
    let future = g.mul_scalar(g.sub(min_q, g.mul_scalar(log_pi2, beta)), T::from_f64(gamma));
    let per = g.add(r, g.sub(future, g.mul_scalar(log_pi_t, beta)));
    (per, log_pi2)
}

#[cfg(feature = "entropy-objective")]
/// Joint maximization target over policy, encoder, and predictor. With
/// `parts` absent the graph reduces to the plain SAC objective on raw
/// states.
pub fn build_actor_objective<T: Real>(
    policy: &Policy<T>,
    critics: &CriticPair<T>,
    parts: Option<&Parts<T>>,
    inputs: &ActorInputs<'_, T>,
    alpha: f64,
    beta: T,
    gamma: f64,
) -> ActorBuild<T> {
    let g = Graph::new();
    let s_c = g.input_const(inputs.s);
    let s_next_c = g.input_const(inputs.s_next);
    let pol_vars = policy.mlp.bind(&g);

    let (z_t, z_next, encoder_vars) = match parts {
        Some(p) => {
            let enc = p.encoder.bind(&g);
            let z_t = objective::encode(&g, &p.encoder, &enc, s_c);
            let z_next = objective::encode(&g, &p.encoder, &enc, s_next_c);
            (z_t, z_next, Some(enc))
        }
        None => (s_c, s_next_c, None),
    };

    let (mut per, log_pi2) =
        actor_terms(&g, policy, critics, &pol_vars, z_t, z_next, s_next_c, inputs, beta, gamma);

    let predictor_vars = parts.map(|p| {
        let pred = p.predictor.bind(&g);
        let lq = objective::log_q(
            &g,
            &p.predictor,
            &pred,
            z_t,
            z_next,
            g.input_const(inputs.a_prev),
            g.input_const(inputs.is_first),
            g.input_const(inputs.a),
        );
        per = g.add(per, g.mul_scalar(lq, T::from_f64(alpha)));
        pred
    });

    let objective = g.mean_all(per);
    let loss = g.neg(objective);
    let next_log_pi = g.value_data(log_pi2);
    ActorBuild { graph: g, objective, loss, policy_vars: pol_vars, encoder_vars, predictor_vars, next_log_pi }
}

#[cfg(not(feature = "entropy-objective"))]
/// Plain SAC maximization target on raw states.
pub fn build_actor_objective<T: Real>(
    policy: &Policy<T>,
    critics: &CriticPair<T>,
    inputs: &ActorInputs<'_, T>,
    beta: T,
    gamma: f64,
) -> ActorBuild<T> {
    let g = Graph::new();
    let s_c = g.input_const(inputs.s);
    let s_next_c = g.input_const(inputs.s_next);
    let pol_vars = policy.mlp.bind(&g);
    let (per, log_pi2) =
        actor_terms(&g, policy, critics, &pol_vars, s_c, s_next_c, s_next_c, inputs, beta, gamma);
    let objective = g.mean_all(per);
    let loss = g.neg(objective);
    let next_log_pi = g.value_data(log_pi2);
    ActorBuild {
        graph: g,
        objective,
        loss,
        policy_vars: pol_vars,
        encoder_vars: None,
        predictor_vars: None,
        next_log_pi,
    }
}

impl AgentBundle {
    pub fn new(settings: AgentSettings) -> Result<Self, TerlError> {
        if settings.alpha < 0.0 {
            return Err(TerlError::Config(format!("alpha must be non-negative, got {}", settings.alpha)));
        }
        if settings.alpha == 0.0 && !settings.sac_mode {
            return Err(TerlError::Config("alpha = 0 requires sac_mode".into()));
        }
        #[cfg(not(feature = "entropy-objective"))]
        if !settings.sac_mode {
            return Err(TerlError::Config(
                "this build excludes the trajectory-entropy objective; only sac_mode runs are possible"
                    .into(),
            ));
        }

        let policy_input = if settings.sac_mode { settings.obs_dim } else { settings.latent };
        let policy = Policy::new(
            policy_input,
            settings.act_dim,
            settings.hidden,
            seed::derive(settings.seed, "init/policy"),
        );
        let critics = CriticPair::new(
            settings.obs_dim,
            settings.act_dim,
            settings.hidden,
            seed::derive(settings.seed, "init/critic1"),
            seed::derive(settings.seed, "init/critic2"),
        );
        let temperature = Temperature::new(
            settings.init_temperature,
            settings.temperature_lr,
            -(settings.act_dim as f64),
            settings.learn_temperature,
        );

        #[cfg(feature = "entropy-objective")]
        let parts = if settings.sac_mode {
            None
        } else {
            Some(Parts::new(
                settings.obs_dim,
                settings.act_dim,
                settings.hidden,
                settings.latent,
                seed::derive(settings.seed, "init/encoder"),
                seed::derive(settings.seed, "init/predictor"),
            ))
        };

        let critic_opt = {
            let params: Vec<&Tensor<f32>> = critics.q1.params().iter().chain(critics.q2.params()).collect();
            Adam::for_params(AdamHyper::with_lr(settings.critic_lr), &params)
        };
        let actor_opt = {
            let mut params: Vec<&Tensor<f32>> = policy.mlp.params().iter().collect();
            #[cfg(feature = "entropy-objective")]
            if let Some(p) = &parts {
                params.extend(p.encoder.params());
                params.extend(p.predictor.params());
            }
            Adam::for_params(AdamHyper::with_lr(settings.actor_lr), &params)
        };

        Ok(AgentBundle {
            settings,
            policy,
            critics,
            temperature,
            #[cfg(feature = "entropy-objective")]
            parts,
            critic_opt,
            actor_opt,
            counters: UpdateCounters::default(),
        })
    }

    /// Latent the policy consumes for one observation row.
    pub fn latent_row(&self, obs: &[f32]) -> Vec<f32> {
        #[cfg(feature = "entropy-objective")]
        if let Some(p) = &self.parts {
            return p.encode_row(obs);
        }
        obs.to_vec()
    }

    pub fn act(&self, obs: &[f32], deterministic: bool, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let z = self.latent_row(obs);
        if deterministic {
            self.policy.act_deterministic(&z)
        } else {
            self.policy.act_stochastic(&z, rng)
        }
    }

    /// One gradient round for a sampled batch. Draws target noise first and
    /// actor noise second from `rng`, so the stream layout is identical in
    /// plain-SAC and full builds.
    pub fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> UpdateStats {
        let n = batch.n;
        let (od, ad) = (batch.obs_dim, batch.act_dim);
        let s = Tensor::new(vec![n, od], batch.s.clone());
        let s_next = Tensor::new(vec![n, od], batch.s_next.clone());
        let a = Tensor::new(vec![n, ad], batch.a.clone());
        let a_prev = Tensor::new(vec![n, ad], batch.a_prev.clone());
        let is_first = Tensor::new(vec![n, 1], batch.is_first.clone());

        // Information-regularized reward, recomputed from the current
        // encoder/predictor (never cached in the buffer).
        #[cfg(feature = "entropy-objective")]
        let (r_star, entropy_bound) = match &self.parts {
            Some(p) => {
                let lq = objective::log_q_batch(
                    p,
                    &objective::LogQBatch { s: &s, s_next: &s_next, a_prev: &a_prev, is_first: &is_first, a: &a },
                );
                let r_star = objective::info_reward(&batch.r, &lq, self.settings.alpha);
                (r_star, objective::upper_bound(&lq) as f32)
            }
            None => (batch.r.clone(), 0.0),
        };
        #[cfg(not(feature = "entropy-objective"))]
        let (r_star, entropy_bound) = (batch.r.clone(), 0.0f32);

        #[cfg(feature = "entropy-objective")]
        let z_next = match &self.parts {
            Some(p) => p.encoder.forward(&s_next),
            None => s_next.clone(),
        };
        #[cfg(not(feature = "entropy-objective"))]
        let z_next = s_next.clone();

        let beta = self.temperature.beta();
        let target_noise = draw_normal(rng, n, ad);
        let y = critic_target(
            &self.critics,
            &self.policy,
            &TargetInputs {
                s_next: &s_next,
                z_next: &z_next,
                r_star: &r_star,
                done: &batch.done,
                noise: &target_noise,
            },
            self.settings.gamma,
            beta,
        );
        let critic_loss = critic_update(&mut self.critics, &mut self.critic_opt, &s, &a, &y);
        self.counters.critic_updates += 1;

        let mut actor_objective = None;
        if self.counters.critic_updates % ACTOR_UPDATE_EVERY == 0 {
            let actor_noise = draw_normal(rng, n, ad);
            let inputs = ActorInputs {
                s: &s,
                s_next: &s_next,
                a: &a,
                a_prev: &a_prev,
                is_first: &is_first,
                r: &batch.r,
                noise: &actor_noise,
            };
            #[cfg(feature = "entropy-objective")]
            let build = build_actor_objective(
                &self.policy,
                &self.critics,
                self.parts.as_ref(),
                &inputs,
                self.settings.alpha,
                beta,
                self.settings.gamma,
            );
            #[cfg(not(feature = "entropy-objective"))]
            let build =
                build_actor_objective(&self.policy, &self.critics, &inputs, beta, self.settings.gamma);

            build.graph.backward(build.loss);
            let mut grads: Vec<Vec<f32>> = Vec::new();
            for &v in &build.policy_vars.vars {
                grads.push(build.graph.grad(v).expect("policy grad"));
            }
            for vars in [&build.encoder_vars, &build.predictor_vars].into_iter().flatten() {
                for &v in &vars.vars {
                    grads.push(build.graph.grad(v).expect("objective grad"));
                }
            }
            let slices: Vec<&[f32]> = grads.iter().map(|v| v.as_slice()).collect();
            {
                let mut params: Vec<&mut Tensor<f32>> = self.policy.mlp.params_mut().iter_mut().collect();
                #[cfg(feature = "entropy-objective")]
                if let Some(p) = &mut self.parts {
                    params.extend(p.encoder.params_mut().iter_mut());
                    params.extend(p.predictor.params_mut().iter_mut());
                }
                self.actor_opt.update(&mut params, &slices);
            }
            actor_objective = Some(build.graph.scalar_value(build.objective));
            self.counters.actor_updates += 1;

            let mean_log_pi =
                build.next_log_pi.iter().map(|&v| v as f64).sum::<f64>() / build.next_log_pi.len() as f64;
            self.temperature.update(mean_log_pi);
        }

        if self.counters.critic_updates % TARGET_UPDATE_EVERY == 0 {
            self.critics.soft_update(TARGET_EMA_RATE);
            self.counters.target_updates += 1;
        }

        UpdateStats { critic_loss, actor_objective, entropy_bound, beta: self.temperature.beta() }
    }

    // ---- checkpointing --------------------------------------------------

    fn write_mlp<W: Write>(w: &mut W, prefix: &str, mlp: &Mlp<f32>) -> std::io::Result<()> {
        for (i, p) in mlp.params().iter().enumerate() {
            let kind = if i % 2 == 0 { "w" } else { "b" };
            let name = format!("{prefix}/{kind}{}", i / 2);
            write_block(w, &name, p.shape(), p.data())?;
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        Self::write_mlp(w, "policy", &self.policy.mlp)?;
        Self::write_mlp(w, "critic1", &self.critics.q1)?;
        Self::write_mlp(w, "critic2", &self.critics.q2)?;
        Self::write_mlp(w, "target1", &self.critics.target1)?;
        Self::write_mlp(w, "target2", &self.critics.target2)?;
        write_block(w, "log_beta", &[1], &[self.temperature.log_beta()])?;
        #[cfg(feature = "entropy-objective")]
        if let Some(p) = &self.parts {
            Self::write_mlp(w, "encoder", &p.encoder)?;
            Self::write_mlp(w, "predictor", &p.predictor)?;
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<(), TerlError> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| TerlError::io(format!("creating checkpoint {}", path.display()), e))?;
        self.save(&mut file)
            .map_err(|e| TerlError::io(format!("writing checkpoint {}", path.display()), e))?;
        Ok(())
    }

    fn mlp_from_blocks(
        blocks: &HashMap<String, TensorBlock>,
        prefix: &str,
        head: Head,
        path: &Path,
    ) -> Result<Mlp<f32>, TerlError> {
        let mut widths = Vec::new();
        let mut params = Vec::new();
        for layer in 0.. {
            let Some(w) = blocks.get(&format!("{prefix}/w{layer}")) else { break };
            let b = blocks.get(&format!("{prefix}/b{layer}")).ok_or_else(|| TerlError::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("{prefix}/w{layer} present without its bias"),
            })?;
            if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[1] {
                return Err(TerlError::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("{prefix} layer {layer} has inconsistent shapes"),
                });
            }
            if widths.is_empty() {
                widths.push(w.shape[0]);
            } else if *widths.last().unwrap() != w.shape[0] {
                return Err(TerlError::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("{prefix} layer {layer} does not chain with the previous layer"),
                });
            }
            widths.push(w.shape[1]);
            params.push(Tensor::new(w.shape.clone(), w.data.clone()).with_grad());
            params.push(Tensor::new(b.shape.clone(), b.data.clone()).with_grad());
        }
        if widths.len() < 3 {
            return Err(TerlError::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("missing or truncated {prefix} network"),
            });
        }
        Ok(Mlp::from_params(MlpSpec::new(widths, head), params))
    }

    /// Load a bundle for evaluation. Optimizer state is fresh; resuming
    /// training from a checkpoint is out of scope.
    pub fn load<R: Read>(r: &mut R, path: &Path) -> Result<Self, TerlError> {
        let ck = |reason: String| TerlError::Checkpoint { path: path.to_path_buf(), reason };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| ck(format!("reading magic: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ck("bad magic; not a checkpoint file".into()));
        }
        let mut version = [0u8; 4];
        r.read_exact(&mut version).map_err(|e| ck(format!("reading version: {e}")))?;
        let version = u32::from_le_bytes(version);
        if version != CHECKPOINT_VERSION {
            return Err(ck(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let blocks = read_all_blocks(r).map_err(|e| ck(e.to_string()))?;
        let blocks: HashMap<String, TensorBlock> =
            blocks.into_iter().map(|b| (b.name.clone(), b)).collect();

        let gaussian = Head::Gaussian { min_log_std: LOG_STD_MIN, max_log_std: LOG_STD_MAX };
        let policy_mlp = Self::mlp_from_blocks(&blocks, "policy", gaussian, path)?;
        let q1 = Self::mlp_from_blocks(&blocks, "critic1", Head::Plain, path)?;
        let q2 = Self::mlp_from_blocks(&blocks, "critic2", Head::Plain, path)?;
        let target1 = Self::mlp_from_blocks(&blocks, "target1", Head::Plain, path)?;
        let target2 = Self::mlp_from_blocks(&blocks, "target2", Head::Plain, path)?;
        let log_beta = blocks
            .get("log_beta")
            .and_then(|b| b.data.first().copied())
            .ok_or_else(|| ck("missing log_beta".into()))?;

        let act_dim = policy_mlp.spec().output_dim() / 2;
        let obs_dim = q1.spec().input_dim() - act_dim;
        let hidden = policy_mlp.spec().widths[1];
        let has_parts = blocks.contains_key("encoder/w0");

        #[cfg(not(feature = "entropy-objective"))]
        if has_parts {
            return Err(ck(
                "checkpoint carries an encoder/predictor but this build excludes the trajectory-entropy objective"
                    .into(),
            ));
        }

        #[cfg(feature = "entropy-objective")]
        let parts = if has_parts {
            Some(Parts {
                encoder: Self::mlp_from_blocks(&blocks, "encoder", Head::Plain, path)?,
                predictor: Self::mlp_from_blocks(&blocks, "predictor", gaussian, path)?,
            })
        } else {
            None
        };

        let mut settings = AgentSettings::defaults(obs_dim, act_dim);
        settings.hidden = hidden;
        settings.sac_mode = !has_parts;
        settings.latent = policy_mlp.spec().input_dim();
        if settings.sac_mode {
            settings.alpha = 0.0;
        }

        let policy = Policy { mlp: policy_mlp };
        let critics = CriticPair { q1, q2, target1, target2 };
        let mut temperature = Temperature::new(
            settings.init_temperature,
            settings.temperature_lr,
            -(settings.act_dim as f64),
            settings.learn_temperature,
        );
        temperature.set_log_beta(log_beta);

        let critic_opt = {
            let params: Vec<&Tensor<f32>> = critics.q1.params().iter().chain(critics.q2.params()).collect();
            Adam::for_params(AdamHyper::with_lr(settings.critic_lr), &params)
        };
        let actor_opt = {
            let mut params: Vec<&Tensor<f32>> = policy.mlp.params().iter().collect();
            #[cfg(feature = "entropy-objective")]
            if let Some(p) = &parts {
                params.extend(p.encoder.params());
                params.extend(p.predictor.params());
            }
            Adam::for_params(AdamHyper::with_lr(settings.actor_lr), &params)
        };

        Ok(AgentBundle {
            settings,
            policy,
            critics,
            temperature,
            #[cfg(feature = "entropy-objective")]
            parts,
            critic_opt,
            actor_opt,
            counters: UpdateCounters::default(),
        })
    }

    pub fn load_from_path(path: &Path) -> Result<Self, TerlError> {
        let mut file = std::fs::File::open(path).map_err(|e| TerlError::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("opening: {e}"),
        })?;
        Self::load(&mut file, path)
    }
}
