//! Dense arrays, the autodiff tape, primitive ops and the optimizer.

mod graph;
pub mod ops;
mod optim;
pub mod par;
mod param;
mod real;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{AttnMask, Conv2dSpec};
pub use optim::{Adam, WarmupSchedule};
pub use param::{GradBuffer, ParamId, ParamStore, Parameter};
pub use real::{Precision, Real};
pub use tensor::Tensor;
