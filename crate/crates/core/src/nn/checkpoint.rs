//! Checkpoints: `manifest.json` plus one raw tensor per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{Model, ModelSpec};
use crate::nn::optim::OptimizerKind;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: ModelSpec,
    pub epoch: usize,
    #[serde(default)]
    pub optimizer: Option<OptimizerKind>,
    #[serde(default)]
    pub optimizer_steps: u64,
    pub params: Vec<ParamEntry>,
}

/// Optional training state stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainState {
    pub epoch: usize,
    pub optimizer: Option<OptimizerKind>,
    pub optimizer_steps: u64,
}

pub fn save_checkpoint(model: &Model, state: TrainState, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    let mut files = Vec::new();
    for (name, t) in model.param_names().into_iter().zip(model.params()) {
        let file = format!("{name}.bin");
        t.save_raw(&dir.join(&file))?;
        files.push(file.clone());
        files.push(format!("{name}.json"));
        params.push(ParamEntry {
            name,
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        spec: model.spec().clone(),
        epoch: state.epoch,
        optimizer: state.optimizer,
        optimizer_steps: state.optimizer_steps,
        params,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(MANIFEST.into());
    Ok(files)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, TrainState)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut params = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        let t = Tensor::load_raw(&dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Data(format!(
                "{}: shape {:?} differs from manifest {:?}",
                entry.file,
                t.shape(),
                entry.shape
            )));
        }
        params.push(t);
    }
    let model = Model::from_params(manifest.spec.clone(), params)?;
    let names = model.param_names();
    for (entry, name) in manifest.params.iter().zip(&names) {
        if &entry.name != name {
            return Err(Error::Data(format!(
                "manifest lists {} where {name} was expected",
                entry.name
            )));
        }
    }
    Ok((
        model,
        TrainState {
            epoch: manifest.epoch,
            optimizer: manifest.optimizer,
            optimizer_steps: manifest.optimizer_steps,
        },
    ))
}
