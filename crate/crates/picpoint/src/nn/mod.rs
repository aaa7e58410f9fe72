//! Minimal neural-network toolkit on `ndarray`.
//!
//! Every layer ships a hand-written backward pass (verified against
//! central finite differences in the test suite), computations are
//! generic over [`Elem`] (`f32` for training, `f64` for oracles), and
//! all reduction orders are fixed so results are bit-reproducible for
//! any thread count.

mod adam;
mod archive;
mod elem;
mod gradcheck;
mod linear;
mod matmul;
mod ops;
mod params;
mod rngstate;

pub use adam::{cosine_lr, Adam, AdamHyper};
pub use archive::{TensorArchive, TensorEntry, ARCHIVE_MAGIC};
pub use elem::{DType, Elem};
pub use gradcheck::{central_diff_grad, max_sym_rel_error};
pub use linear::Linear;
pub use matmul::{matmul, par_matmul};
pub use ops::{l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward_inplace};
pub use params::{GradStore, ParamId, ParamStore};
pub use rngstate::{fnv1a64, mix_seed, rng_from_seed, RngState};
