//! Minimal reverse-mode differentiation stack: tensors, kernels, a recorded
//! op tape, the ops the model needs, AdamW, and the cosine restart schedule.
//! Compute runs in f32; every graph can also run in f64 for gradient
//! verification against finite differences.

pub mod gradcheck;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use kernels::SumOrder;
pub use ops::{NnError, Result as NnResult};
pub use optim::{AdamW, Parameter};
pub use schedule::CosineRestartSchedule;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{el, Element, Tensor};
