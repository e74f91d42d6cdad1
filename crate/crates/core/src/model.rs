//! Common surface shared by the two sequence classifiers.

use crate::lstm::LstmParams;
use crate::ntm::NtmParams;
use crate::tensor::{Tape, Tensor, ValueId};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ntm,
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Ntm => write!(f, "ntm"),
            ModelKind::Lstm => write!(f, "lstm"),
        }
    }
}

/// A per-symbol binary classifier over encoded {u, d} sequences.
///
/// Parameters are visited in a fixed order; the training loop relies on
/// `forward_logits_tape` registering exactly one tape leaf per visited
/// parameter, in that same order, before anything else.
pub trait SequenceModel {
    fn kind(&self) -> ModelKind;

    /// Named parameters, fixed order.
    fn visit(&self) -> Vec<(&'static str, &Tensor)>;

    /// Same order as [`SequenceModel::visit`].
    fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    /// Records a full forward pass, returning one output logit per
    /// input symbol. Leaves for all parameters come first, in visit
    /// order, so their gradients can be read back by position.
    fn forward_logits_tape(&self, tape: &mut Tape, inputs: &[Tensor]) -> Vec<ValueId>;

    /// Plain forward pass returning one probability per input symbol.
    fn forward_probs(&self, inputs: &[Tensor]) -> Vec<f64>;

    /// Total scalar parameter count.
    fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.len()).sum()
    }

    /// Memory locations N, for models with external memory.
    fn memory_locations(&self) -> Option<usize> {
        None
    }

    /// Hidden size, for the LSTM baseline.
    fn lstm_hidden(&self) -> Option<usize> {
        None
    }
}

/// Either classifier, as stored in checkpoints and driven by the CLI.
#[derive(Clone, Debug)]
pub enum Model {
    Ntm(NtmParams),
    Lstm(LstmParams),
}

impl Model {
    pub fn as_ntm(&self) -> Option<&NtmParams> {
        match self {
            Model::Ntm(p) => Some(p),
            Model::Lstm(_) => None,
        }
    }
}

impl SequenceModel for Model {
    fn kind(&self) -> ModelKind {
        match self {
            Model::Ntm(_) => ModelKind::Ntm,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    fn visit(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Model::Ntm(p) => p.visit(),
            Model::Lstm(p) => p.visit(),
        }
    }

    fn visit_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Model::Ntm(p) => p.visit_mut(),
            Model::Lstm(p) => p.visit_mut(),
        }
    }

    fn forward_logits_tape(&self, tape: &mut Tape, inputs: &[Tensor]) -> Vec<ValueId> {
        match self {
            Model::Ntm(p) => p.forward_logits_tape(tape, inputs),
            Model::Lstm(p) => p.forward_logits_tape(tape, inputs),
        }
    }

    fn forward_probs(&self, inputs: &[Tensor]) -> Vec<f64> {
        match self {
            Model::Ntm(p) => p.forward_probs(inputs),
            Model::Lstm(p) => p.forward_probs(inputs),
        }
    }

    fn memory_locations(&self) -> Option<usize> {
        match self {
            Model::Ntm(p) => p.memory_locations(),
            Model::Lstm(p) => p.memory_locations(),
        }
    }

    fn lstm_hidden(&self) -> Option<usize> {
        match self {
            Model::Ntm(p) => p.lstm_hidden(),
            Model::Lstm(p) => p.lstm_hidden(),
        }
    }
}
