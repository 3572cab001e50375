//! Model checkpoints: a rank-1 JGAT tensor holding every parameter as f32
//! plus a JSON manifest (`<file>.json`) naming each slice.

use std::path::{Path, PathBuf};

use jga_io::tensor::{read_tensor, write_tensor, Tensor};
use serde::{Deserialize, Serialize};

use crate::store::{ParamEntry, ParameterStore};
use crate::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(path: &Path, store: &ParameterStore, meta: serde_json::Value) -> Result<(), NnError> {
    let t = Tensor::from_f64(vec![store.num_params()], store.values())?;
    write_tensor(path, &t)?;
    let manifest = Manifest {
        params: store.entries().to_vec(),
        meta,
    };
    jga_io::write_json(&manifest_path(path), &manifest)?;
    Ok(())
}

/// Loads values into a store built with the same architecture. Returns the
/// manifest's metadata.
pub fn load(path: &Path, store: &mut ParameterStore) -> Result<serde_json::Value, NnError> {
    let manifest: Manifest = jga_io::read_json(&manifest_path(path))?;
    if manifest.params != store.entries() {
        let first = manifest
            .params
            .iter()
            .zip(store.entries())
            .find(|(a, b)| a != b)
            .map(|(a, b)| {
                format!(
                    "file has `{}` {:?}, model expects `{}` {:?}",
                    a.name, a.dims, b.name, b.dims
                )
            })
            .unwrap_or_else(|| {
                format!(
                    "file has {} parameters, model expects {}",
                    manifest.params.len(),
                    store.entries().len()
                )
            });
        return Err(NnError::Checkpoint(first));
    }
    let t = read_tensor(path)?;
    if t.dims != [store.num_params()] {
        return Err(NnError::Checkpoint(format!(
            "payload dims {:?}, expected [{}]",
            t.dims,
            store.num_params()
        )));
    }
    store.values_mut().copy_from_slice(&t.to_f64());
    Ok(manifest.meta)
}
