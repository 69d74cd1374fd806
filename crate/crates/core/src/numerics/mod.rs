//! Dense tensors, reverse-mode gradients, optimizers and the finite-difference
//! gradient checker.

mod container;
mod gradcheck;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use container::{decode_params, encode_params, read_params, write_params, PARAMS_MAGIC};
pub use gradcheck::{
    grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck,
    RELATIVE_ERROR_FLOOR,
};
pub use graph::{Graph, Var};
pub use ops::{activation, cross_entropy, matmul, sigmoid, softmax, Activation};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{glorot_uniform, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}
