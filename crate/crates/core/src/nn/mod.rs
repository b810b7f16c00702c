//! Minimal neural-computation substrate: tensors, a reverse-mode tape, layers,
//! attention, an Adam optimiser and checkpoints.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use attention::{attention, scaled_dot_attention};
pub use checkpoint::{Checkpoint, OptimizerState};
pub use gradcheck::{grad_check, grad_check_at, grad_check_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Padding, Var};
pub use layers::{conv_glu_forward, Affine, Conv1d, ConvGlu, ConvGluStack, Embedding, ParamStore};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Scalar, Tensor};
