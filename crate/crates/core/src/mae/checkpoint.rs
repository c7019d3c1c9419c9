//! Checkpoint directories: one tensor file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::io::{read_tensor, write_tensor};

use super::model::{MaeConfig, MaeModel};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "hymba-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: MaeConfig,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &MaeModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        let file = format!("{name}.cht");
        write_tensor(&dir.join(&file), t)?;
        params.push(ParamEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        config: model.config.clone(),
        params,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<MaeModel> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Format {
        path: path.clone(),
        reason: format!("cannot read checkpoint manifest: {e}"),
    })?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Format {
            path,
            reason: format!("unsupported checkpoint format `{}`", manifest.format),
        });
    }
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let file = dir.join(&entry.file);
        let t = read_tensor(&file)?;
        if t.shape() != entry.shape {
            return Err(Error::Format {
                path: file,
                reason: format!("shape {:?} disagrees with manifest {:?}", t.shape(), entry.shape),
            });
        }
        store.insert(entry.name.clone(), t);
    }
    MaeModel::from_params(manifest.config, store)
}
