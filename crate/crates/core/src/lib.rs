pub mod curvature;
pub mod decoder;
pub mod dist;
pub mod gradcheck;
pub mod landscapes;
pub mod merge;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use objective::Objective;
pub use rng::{Lane, Rng};
pub use tape::{Elementwise, Reduction, Tape, Var};
pub use tensor::{Tensor, TensorError};
