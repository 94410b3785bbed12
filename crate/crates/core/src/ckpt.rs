//! Checkpoint directories: FTEN parameter files plus JSON manifest, model
//! config, optimizer momentum, and trainer state. Loading rebuilds the model
//! skeleton from the config and overwrites every parameter bit-exactly, so a
//! resumed run continues the original trajectory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::Sgd;
use crate::params::ParamStore;
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub completed_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: BTreeMap<String, String>,
    momentum: BTreeMap<String, String>,
}

pub fn save_checkpoint<T: Real>(
    dir: &Path,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    opt: &Sgd<T>,
    state: &TrainerState,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("params"))?;
    std::fs::create_dir_all(dir.join("momentum"))?;
    let mut manifest = Manifest {
        params: BTreeMap::new(),
        momentum: BTreeMap::new(),
    };
    for (i, (id, entry)) in store.entries().enumerate() {
        let pfile = format!("params/p{i:05}.ften");
        store.tensor(id).write_ften(&dir.join(&pfile))?;
        manifest.params.insert(entry.name.clone(), pfile);
        let mfile = format!("momentum/m{i:05}.ften");
        Tensor::new(entry.shape.clone(), opt.velocity()[i].clone())?
            .write_ften(&dir.join(&mfile))?;
        manifest.momentum.insert(entry.name.clone(), mfile);
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(state)?)?;
    Ok(())
}

pub struct LoadedCheckpoint<T: Real> {
    pub cfg: ModelConfig,
    pub state: TrainerState,
    pub model: Model,
    pub store: ParamStore<T>,
    pub opt: Sgd<T>,
}

pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<LoadedCheckpoint<T>> {
    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let state: TrainerState =
        serde_json::from_str(&std::fs::read_to_string(dir.join("state.json"))?)?;
    if state.precision != T::DTYPE.precision() {
        return Err(Error::config(format!(
            "checkpoint holds {:?} parameters, requested {:?}",
            state.precision,
            T::DTYPE.precision()
        )));
    }
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let (model, mut store) = Model::build::<T>(cfg.clone(), state.seed)?;
    if manifest.params.len() != store.len() {
        return Err(Error::Format(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    for (name, file) in &manifest.params {
        let t = Tensor::<T>::read_ften(&dir.join(file))?;
        store.load_named(name, &t)?;
    }
    let mut opt = Sgd::new(
        &store,
        state.lr,
        state.momentum,
        state.weight_decay,
    );
    for (i, (_, entry)) in store.entries().enumerate() {
        let file = manifest.momentum.get(&entry.name).ok_or_else(|| {
            Error::Format(format!("manifest lacks momentum for {:?}", entry.name))
        })?;
        let t = Tensor::<T>::read_ften(&dir.join(file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::dim(format!(
                "momentum for {:?} has shape {:?}, want {:?}",
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        opt.set_velocity(i, t.to_vec());
    }
    Ok(LoadedCheckpoint {
        cfg,
        state,
        model,
        store,
        opt,
    })
}
