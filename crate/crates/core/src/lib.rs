//! Spectral estimation of POMDP parameters from a single trajectory generated
//! by a stochastic memoryless policy.
//!
//! The pipeline, per action `l`:
//!
//! 1. [`views`]: encode each window `(t−1, t, t+1)` with `a_t = l` as three one-hot views.
//! 2. [`moments`]: estimate view covariances, symmetrize the first two views and form
//!    the second and third moments.
//! 3. [`decomposition`]: whiten and run the tensor power method to recover the
//!    third-view matrix and the conditional state weights.
//! 4. [`recovery`]: invert the symmetrization to obtain the second view, read off
//!    reward and observation densities, align the latent labels across actions and
//!    recover the transition tensor.
//!
//! [`bounds`] evaluates the confidence radii and sample-size condition that go with
//! the estimates, and [`pipeline`] ties everything together.

pub mod bounds;
pub mod decomposition;
pub mod error;
pub mod generate;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod oracle;
pub mod pipeline;
pub mod pomdp;
pub mod recovery;
pub mod sweep;
pub mod tensor;
pub mod views;

pub use error::{Error, Result};
pub use pomdp::{MemorylessPolicy, PomdpModel, Step, Trajectory};
pub use tensor::Tensor3;
