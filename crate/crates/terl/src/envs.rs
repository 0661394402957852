//! Two deterministic, analytically specified continuous-control environments
//! with evaluation-time perturbation knobs (mass/gravity scale, action noise,
//! observation noise).
//!
//! All dynamics numbers are closed form, so tests can pin them by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::TerlError;

/// Evaluation-time perturbations. Defaults are neutral; with neutral values
/// no noise is ever drawn, so results are bit-identical to an unperturbed
/// build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Multiplies the body mass in the dynamics.
    pub mass_scale: f64,
    /// Multiplies gravitational acceleration.
    pub gravity_scale: f64,
    /// Std of Gaussian noise added to actions before clipping (native units).
    pub action_noise_sigma: f64,
    /// Std of Gaussian noise added to emitted observations (native units).
    pub obs_noise_sigma: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { mass_scale: 1.0, gravity_scale: 1.0, action_noise_sigma: 0.0, obs_noise_sigma: 0.0 }
    }
}

impl PerturbConfig {
    pub fn is_neutral(&self) -> bool {
        *self == PerturbConfig::default()
    }

    pub fn validate(&self) -> Result<(), TerlError> {
        if !(self.mass_scale > 0.0) || !(self.gravity_scale > 0.0) {
            return Err(TerlError::Config(format!(
                "perturbation scales must be positive, got mass_scale={} gravity_scale={}",
                self.mass_scale, self.gravity_scale
            )));
        }
        if self.action_noise_sigma < 0.0 || self.obs_noise_sigma < 0.0 {
            return Err(TerlError::Config(format!(
                "noise sigmas must be non-negative, got action={} obs={}",
                self.action_noise_sigma, self.obs_noise_sigma
            )));
        }
        Ok(())
    }
}

/// One environment step. `done` flags time-limit truncation only; these
/// tasks are continuing, so truncation is not a terminal for bootstrapping.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub step_index: usize,
}

pub const EPISODE_LEN: usize = 200;

fn wrap_angle(theta: f64) -> f64 {
    (theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Torque-limited pendulum; theta = 0 is upright. Semi-implicit Euler:
/// thdot += (3 g' / 2 l) sin(theta) dt + (3 / m' l^2) u dt, theta += thdot dt,
/// with thdot clipped to [-8, 8] and reward
/// -(wrap(theta)^2 + 0.1 thdot^2 + 0.001 u^2) on the pre-step state.
#[derive(Debug, Clone)]
pub struct PendulumEnv {
    theta: f64,
    theta_dot: f64,
    step_index: usize,
    rng: ChaCha8Rng,
    last_executed: [f64; 1],
}

impl PendulumEnv {
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const GRAVITY: f64 = 10.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;

    fn new() -> Self {
        PendulumEnv {
            theta: 0.0,
            theta_dot: 0.0,
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            last_executed: [0.0],
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// Test hook: place the pendulum at an exact state.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }
}

/// Force-limited point mass in the [-2, 2]^2 box with velocity clipped to
/// [-2, 2]; a clipped position zeroes the matching velocity component.
/// Reward is -|pos - goal| - 0.01 |a|^2 on the pre-step position.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pos: [f64; 2],
    vel: [f64; 2],
    step_index: usize,
    rng: ChaCha8Rng,
    last_executed: [f64; 2],
}

impl PointMassEnv {
    pub const MASS: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_FORCE: f64 = 1.0;
    pub const BOX: f64 = 2.0;
    pub const MAX_SPEED: f64 = 2.0;
    pub const START: [f64; 2] = [-1.0, -1.0];
    pub const GOAL: [f64; 2] = [1.0, 1.0];

    fn new() -> Self {
        PointMassEnv {
            pos: Self::START,
            vel: [0.0, 0.0],
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            last_executed: [0.0, 0.0],
        }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn state(&self) -> ([f64; 2], [f64; 2]) {
        (self.pos, self.vel)
    }
}

/// Environment selected by name; see [`ToyEnv::by_name`].
#[derive(Debug, Clone)]
pub enum ToyEnv {
    Pendulum(PendulumEnv),
    PointMass(PointMassEnv),
}

impl ToyEnv {
    pub fn by_name(name: &str) -> Result<Self, TerlError> {
        match name {
            "pendulum" => Ok(ToyEnv::Pendulum(PendulumEnv::new())),
            "pointmass" => Ok(ToyEnv::PointMass(PointMassEnv::new())),
            other => Err(TerlError::Config(format!(
                "unknown environment {other:?}; expected \"pendulum\" or \"pointmass\""
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToyEnv::Pendulum(_) => "pendulum",
            ToyEnv::PointMass(_) => "pointmass",
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self {
            ToyEnv::Pendulum(_) => 3,
            ToyEnv::PointMass(_) => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ToyEnv::Pendulum(_) => 1,
            ToyEnv::PointMass(_) => 2,
        }
    }

    /// Symmetric native action bound: actions live in [-limit, limit]^d.
    pub fn action_limit(&self) -> f64 {
        match self {
            ToyEnv::Pendulum(_) => PendulumEnv::MAX_TORQUE,
            ToyEnv::PointMass(_) => PointMassEnv::MAX_FORCE,
        }
    }

    pub fn episode_len(&self) -> usize {
        EPISODE_LEN
    }

    /// Action actually applied on the last step, after noise and clipping.
    pub fn last_executed_action(&self) -> &[f64] {
        match self {
            ToyEnv::Pendulum(e) => &e.last_executed,
            ToyEnv::PointMass(e) => &e.last_executed,
        }
    }

    /// Seeded reset. Pendulum: theta ~ U(-pi, pi), thdot ~ U(-1, 1).
    /// Point mass: start plus U(-0.05, 0.05) position noise, zero velocity.
    /// The per-episode RNG also feeds any perturbation noise drawn later.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            ToyEnv::Pendulum(e) => {
                e.rng = ChaCha8Rng::seed_from_u64(seed);
                e.theta = (e.rng.gen::<f64>() * 2.0 - 1.0) * std::f64::consts::PI;
                e.theta_dot = e.rng.gen::<f64>() * 2.0 - 1.0;
                e.step_index = 0;
                e.obs()
            }
            ToyEnv::PointMass(e) => {
                e.rng = ChaCha8Rng::seed_from_u64(seed);
                e.pos = [
                    PointMassEnv::START[0] + (e.rng.gen::<f64>() * 2.0 - 1.0) * 0.05,
                    PointMassEnv::START[1] + (e.rng.gen::<f64>() * 2.0 - 1.0) * 0.05,
                ];
                e.vel = [0.0, 0.0];
                e.step_index = 0;
                e.obs()
            }
        }
    }

    /// Advance one step with a native-unit action (caller scales the policy
    /// output to env bounds first). Noise draws are skipped entirely at
    /// zero sigma so neutral perturbations leave the RNG untouched.
    pub fn step(&mut self, action: &[f64], perturb: &PerturbConfig) -> StepResult {
        assert!(
            action.iter().all(|a| a.is_finite()),
            "env step: non-finite action {action:?}"
        );
        match self {
            ToyEnv::Pendulum(e) => {
                assert_eq!(action.len(), 1, "pendulum takes a 1-d action");
                let mut u = action[0];
                if perturb.action_noise_sigma > 0.0 {
                    let xi: f64 = e.rng.sample(StandardNormal);
                    u += perturb.action_noise_sigma * xi;
                }
                u = u.clamp(-PendulumEnv::MAX_TORQUE, PendulumEnv::MAX_TORQUE);
                e.last_executed = [u];

                let reward = -(wrap_angle(e.theta).powi(2)
                    + 0.1 * e.theta_dot.powi(2)
                    + 0.001 * u.powi(2));

                let m = perturb.mass_scale * PendulumEnv::MASS;
                let g = perturb.gravity_scale * PendulumEnv::GRAVITY;
                let l = PendulumEnv::LENGTH;
                e.theta_dot += (3.0 * g / (2.0 * l)) * e.theta.sin() * PendulumEnv::DT
                    + (3.0 / (m * l * l)) * u * PendulumEnv::DT;
                e.theta_dot = e.theta_dot.clamp(-PendulumEnv::MAX_SPEED, PendulumEnv::MAX_SPEED);
                e.theta += e.theta_dot * PendulumEnv::DT;
                e.step_index += 1;

                let mut obs = e.obs();
                if perturb.obs_noise_sigma > 0.0 {
                    for o in &mut obs {
                        let xi: f64 = e.rng.sample(StandardNormal);
                        *o += perturb.obs_noise_sigma * xi;
                    }
                }
                StepResult { obs, reward, done: e.step_index >= EPISODE_LEN, step_index: e.step_index }
            }
            ToyEnv::PointMass(e) => {
                assert_eq!(action.len(), 2, "point mass takes a 2-d action");
                let mut exec = [action[0], action[1]];
                if perturb.action_noise_sigma > 0.0 {
                    for a in &mut exec {
                        let xi: f64 = e.rng.sample(StandardNormal);
                        *a += perturb.action_noise_sigma * xi;
                    }
                }
                for a in &mut exec {
                    *a = a.clamp(-PointMassEnv::MAX_FORCE, PointMassEnv::MAX_FORCE);
                }
                e.last_executed = exec;

                let dist = ((e.pos[0] - PointMassEnv::GOAL[0]).powi(2)
                    + (e.pos[1] - PointMassEnv::GOAL[1]).powi(2))
                .sqrt();
                let effort = exec[0] * exec[0] + exec[1] * exec[1];
                let reward = -dist - 0.01 * effort;

                let m = perturb.mass_scale * PointMassEnv::MASS;
                for i in 0..2 {
                    e.vel[i] += exec[i] / m * PointMassEnv::DT;
                    e.vel[i] = e.vel[i].clamp(-PointMassEnv::MAX_SPEED, PointMassEnv::MAX_SPEED);
                }
                for i in 0..2 {
                    e.pos[i] += e.vel[i] * PointMassEnv::DT;
                    if e.pos[i] < -PointMassEnv::BOX {
                        e.pos[i] = -PointMassEnv::BOX;
                        e.vel[i] = 0.0;
                    } else if e.pos[i] > PointMassEnv::BOX {
                        e.pos[i] = PointMassEnv::BOX;
                        e.vel[i] = 0.0;
                    }
                }
                e.step_index += 1;

                let mut obs = e.obs();
                if perturb.obs_noise_sigma > 0.0 {
                    for o in &mut obs {
                        let xi: f64 = e.rng.sample(StandardNormal);
                        *o += perturb.obs_noise_sigma * xi;
                    }
                }
                StepResult { obs, reward, done: e.step_index >= EPISODE_LEN, step_index: e.step_index }
            }
        }
    }
}
