//! Minimal reverse-mode automatic differentiation for small dense models.
//!
//! Values live in row-major [`Tensor`]s. A [`Tape`] records every operation
//! whose inputs need a gradient and replays them in reverse on
//! [`Tape::backward`]. Learned parameters are kept in a [`ParamSet`] outside
//! the tape; they are bound into a tape on first use and their gradients are
//! folded back with [`Tape::accumulate_param_grads`].

mod adam;
mod error;
mod gradcheck;
mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{gradient_check, gradient_check_with, relative_error, FiniteDifference};
pub use params::{ParamId, ParamSet};
pub use real::Real;
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

/// Seeded PCG32 stream; every stochastic choice in a run is drawn from one of these.
pub type Rng = rand_pcg::Pcg32;

/// Creates the run RNG from an explicit 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
