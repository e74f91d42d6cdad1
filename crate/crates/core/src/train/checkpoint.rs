//! Checkpoint files: one JSON document mapping parameter names to
//! shape + flat value arrays, plus metadata identifying the model kind
//! and geometry. Doubles are written in shortest round-trip decimal
//! form, so save → load is bit-exact.

use crate::lstm::LstmParams;
use crate::model::{Model, ModelKind, SequenceModel};
use crate::ntm::{NtmGeometry, NtmParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "ntm-dyck-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unrecognized checkpoint format {0:?}")]
    BadFormat(String),
    #[error("checkpoint is a {found} model, expected {expected}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("checkpoint metadata incomplete: missing {0}")]
    MissingMeta(&'static str),
    #[error("unknown parameter {0:?} in checkpoint")]
    UnknownParam(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter {0:?} missing from checkpoint")]
    MissingParam(&'static str),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelKind,
    pub seed: u64,
    /// Training steps completed when this checkpoint was written.
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory_locations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub memory_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub controller_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shift_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lstm_hidden: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    pub meta: CheckpointMeta,
    params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, step: u64) -> Self {
        let meta = match model {
            Model::Ntm(p) => CheckpointMeta {
                model: ModelKind::Ntm,
                seed,
                step,
                memory_locations: Some(p.geometry.locations),
                memory_width: Some(p.geometry.width),
                controller_hidden: Some(p.geometry.hidden),
                shift_window: Some(p.geometry.shift_window),
                lstm_hidden: None,
            },
            Model::Lstm(p) => CheckpointMeta {
                model: ModelKind::Lstm,
                seed,
                step,
                memory_locations: None,
                memory_width: None,
                controller_hidden: None,
                shift_window: None,
                lstm_hidden: Some(p.hidden),
            },
        };
        let params = model
            .visit()
            .into_iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                tensor: t.clone(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            meta,
            params,
        }
    }

    /// Rebuilds the model, validating every name and shape against the
    /// geometry declared in the metadata.
    pub fn into_model(self) -> Result<Model, CheckpointError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::BadFormat(self.format));
        }
        let need = |field: Option<usize>, name: &'static str| {
            field.ok_or(CheckpointError::MissingMeta(name))
        };
        let mut model = match self.meta.model {
            ModelKind::Ntm => {
                let geometry = NtmGeometry {
                    locations: need(self.meta.memory_locations, "memory_locations")?,
                    width: need(self.meta.memory_width, "memory_width")?,
                    hidden: need(self.meta.controller_hidden, "controller_hidden")?,
                    shift_window: need(self.meta.shift_window, "shift_window")?,
                };
                Model::Ntm(NtmParams::zeros(geometry))
            }
            ModelKind::Lstm => {
                Model::Lstm(LstmParams::zeros(need(self.meta.lstm_hidden, "lstm_hidden")?))
            }
        };
        let mut slots = model.visit_mut();
        let mut filled = vec![false; slots.len()];
        for entry in self.params {
            let Some(pos) = slots.iter().position(|(n, _)| *n == entry.name) else {
                return Err(CheckpointError::UnknownParam(entry.name));
            };
            let (_, slot) = &mut slots[pos];
            if slot.shape() != entry.tensor.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: entry.name,
                    expected: slot.shape().to_vec(),
                    got: entry.tensor.shape().to_vec(),
                });
            }
            **slot = entry.tensor;
            filled[pos] = true;
        }
        if let Some(pos) = filled.iter().position(|f| !f) {
            let name = slots[pos].0;
            return Err(CheckpointError::MissingParam(name));
        }
        drop(slots);
        Ok(model)
    }
}

pub fn save_checkpoint(
    model: &Model,
    seed: u64,
    step: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let ckpt = Checkpoint::from_model(model, seed, step);
    let mut text = serde_json::to_string_pretty(&ckpt)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), CheckpointError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    let meta = ckpt.meta.clone();
    let model = ckpt.into_model()?;
    Ok((model, meta))
}

/// Loads a checkpoint and rejects it unless it holds the expected kind.
pub fn load_checkpoint_as(
    path: &Path,
    expected: ModelKind,
) -> Result<(Model, CheckpointMeta), CheckpointError> {
    let (model, meta) = load_checkpoint(path)?;
    if meta.model != expected {
        return Err(CheckpointError::WrongKind {
            expected,
            found: meta.model,
        });
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use tempfile::tempdir;

    fn bits(model: &Model) -> Vec<u64> {
        model
            .visit()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact_for_both_kinds() {
        let dir = tempdir().unwrap();
        let models = [
            Model::Ntm(NtmParams::init(
                NtmGeometry {
                    locations: 8,
                    width: 4,
                    hidden: 6,
                    shift_window: 3,
                },
                &mut seeded(51, 1),
            )),
            Model::Lstm(LstmParams::init(5, &mut seeded(52, 1))),
        ];
        for (i, model) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}.json"));
            save_checkpoint(model, 42, 1200, &path).unwrap();
            let (loaded, meta) = load_checkpoint(&path).unwrap();
            assert_eq!(bits(model), bits(&loaded));
            assert_eq!(meta.seed, 42);
            assert_eq!(meta.step, 1200);
            assert_eq!(meta.model, model.kind());
        }
    }

    #[test]
    fn metadata_records_geometry() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ntm.json");
        let model = Model::Ntm(NtmParams::zeros(NtmGeometry::default()));
        save_checkpoint(&model, 7, 0, &path).unwrap();
        let (_, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.memory_locations, Some(128));
        assert_eq!(meta.memory_width, Some(20));
        assert_eq!(meta.controller_hidden, Some(100));
        assert_eq!(meta.shift_window, Some(3));
        assert_eq!(meta.lstm_hidden, None);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ntm.json");
        save_checkpoint(&Model::Lstm(LstmParams::zeros(4)), 0, 0, &path).unwrap();
        let err = load_checkpoint_as(&path, ModelKind::Ntm).unwrap_err();
        assert!(matches!(err, CheckpointError::WrongKind { .. }), "{err}");
    }

    #[test]
    fn corrupt_and_mismatched_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Json(_))));

        // shape poisoned relative to the declared geometry
        let model = Model::Lstm(LstmParams::zeros(3));
        let mut ckpt = Checkpoint::from_model(&model, 0, 0);
        ckpt.params[0].tensor = Tensor::zeros(&[2, 2]);
        let path2 = dir.path().join("shape.json");
        std::fs::write(&path2, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(&path2),
            Err(CheckpointError::ShapeMismatch { .. })
        ));

        // a parameter goes missing
        let mut ckpt2 = Checkpoint::from_model(&model, 0, 0);
        ckpt2.params.pop();
        let path3 = dir.path().join("missing.json");
        std::fs::write(&path3, serde_json::to_string(&ckpt2).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(&path3),
            Err(CheckpointError::MissingParam(_))
        ));
    }

    #[test]
    fn init_state_reproducible_after_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ntm.json");
        let model = Model::Ntm(NtmParams::init(
            NtmGeometry {
                locations: 8,
                width: 4,
                hidden: 6,
                shift_window: 3,
            },
            &mut seeded(53, 1),
        ));
        save_checkpoint(&model, 1, 0, &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        let (orig, re) = (model.as_ntm().unwrap(), loaded.as_ntm().unwrap());
        let s1 = crate::ntm::init_state(orig);
        let s2 = crate::ntm::init_state(re);
        assert_eq!(s1.memory.data(), s2.memory.data());
        assert_eq!(s1.w_read.data(), s2.w_read.data());
        assert_eq!(s1.read.data(), s2.read.data());
    }
}
