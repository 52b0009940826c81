use std::fs;
use std::path::Path;

use numcore::{Real, Tensor};
use serde::{Deserialize, Serialize};

use super::{build_model, HyperParams, ModelTask, MultiTaskModel, SharingConfig};
use crate::data::Vocabulary;
use crate::error::{io_error, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub hp: HyperParams,
    pub config: SharingConfig,
    pub tasks: Vec<ModelTask>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &MultiTaskModel<F>) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
                values: t.to_f64(),
            })
            .collect();
        Self {
            hp: model.hp,
            config: model.config,
            tasks: model.tasks.clone(),
            src_vocab: model.src_vocab.clone(),
            tgt_vocab: model.tgt_vocab.clone(),
            tensors,
        }
    }

    /// Rebuilds the registry from the stored layout and overwrites every tensor by name.
    pub fn into_model<F: Real>(self) -> Result<MultiTaskModel<F>> {
        let mut model = build_model::<F>(
            self.config,
            self.tasks,
            self.src_vocab,
            self.tgt_vocab,
            self.hp,
            0,
        )?;
        if model.params().len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params().len(),
                self.tensors.len()
            )));
        }
        for nt in self.tensors {
            let id = model
                .params()
                .find(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", nt.name)))?;
            if model.params().get(id).shape() != nt.shape.as_slice() {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", nt.name)));
            }
            let t = Tensor::from_f64(nt.shape, &nt.values)?;
            *model.params_mut().get_mut(id) = t.with_grad();
        }
        Ok(model)
    }
}

pub fn save_checkpoint<F: Real>(model: &MultiTaskModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from_model(model))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<MultiTaskModel<F>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    ck.into_model()
}
