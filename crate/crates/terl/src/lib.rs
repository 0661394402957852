//! Trajectory-entropy-regularized soft actor-critic on two analytic
//! continuous-control tasks, with the robustness and trajectory-
//! compressibility evaluation harnesses around it.

pub mod agent;
pub mod envs;
pub mod error;
#[cfg(feature = "entropy-objective")]
pub mod objective;
pub mod replay;
pub mod sac;

pub use error::TerlError;

/// Latent width fed to the policy when the encoder is active.
pub fn latent_dim_default() -> usize {
    #[cfg(feature = "entropy-objective")]
    {
        objective::LATENT_DIM
    }
    #[cfg(not(feature = "entropy-objective"))]
    {
        30
    }
}
