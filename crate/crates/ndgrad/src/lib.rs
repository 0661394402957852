//! Minimal dense-tensor numerical core: graph-recorded forward ops,
//! reverse-mode gradients, diagonal-Gaussian log densities, and Adam —
//! enough for small ReLU MLPs with plain or Gaussian heads.
//!
//! Contract violations (shape mismatches, non-scalar losses) panic with a
//! message naming the operation; recoverable conditions return `Result`.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod graph;
pub mod mlp;
pub mod seed;
pub mod tensor;

pub use adam::{Adam, AdamHyper};
pub use gaussian::{gaussian_log_prob, tanh_squash_log_prob, HALF_LN_TWO_PI, SQUASH_EPS};
pub use graph::{Graph, Var};
pub use mlp::{Head, Mlp, MlpOut, MlpSpec, MlpVars};
pub use tensor::{Real, Tensor};
