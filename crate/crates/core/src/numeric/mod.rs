//! Dense `f64` tensors, a reverse-mode tape, parameter storage,
//! checkpoints and a finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gradcheck::{finite_difference_check, GradCheckReport, DENOMINATOR_FLOOR};
pub use graph::{log_sum_exp, sigmoid, softmax_in_place, Graph, NodeGrads, NodeId};
pub use params::{glorot, param_rng, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
