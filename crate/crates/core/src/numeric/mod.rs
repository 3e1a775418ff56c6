//! Dense `f64` tensors, a reverse-mode tape, optimizers and recurrent cells.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use nn::{lstm_step, masked_update, Linear, LinearVars, Lstm, LstmVars};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{log_softmax, log_sum_exp, softmax, Tensor};
