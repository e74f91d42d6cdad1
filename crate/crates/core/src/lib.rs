//! Training a Neural Turing Machine (and an LSTM baseline) to decide
//! membership in the Dyck language, with the numerics built from first
//! principles: a reverse-mode differentiation tape, Adam, exactly
//! uniform Dyck samplers backed by ballot counts, and AUC-based
//! strong-generalization evaluation.

pub mod dyck;
pub mod eval;
pub mod lstm;
pub mod model;
pub mod ntm;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;

pub use dyck::{LabeledSample, Word};
pub use model::{Model, ModelKind, SequenceModel};
pub use tensor::{Tape, Tensor, ValueId};
pub use train::TrainConfig;
