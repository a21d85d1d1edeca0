//! JSON files for standalone networks (verifiers, probes).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ficgan_autograd::{ParamStore, Tensor};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::arch::ParamSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct NetFile<C, R> {
    kind: String,
    config: C,
    report: Option<R>,
    params: BTreeMap<String, StoredArray>,
}

pub fn store_to_map(params: &ParamStore<f32>) -> BTreeMap<String, StoredArray> {
    params.iter().map(|(k, t)| (k.clone(), StoredArray { shape: t.shape().to_vec(), data: t.data().to_vec() })).collect()
}

/// Rebuild a store, requiring exactly the arrays named by `specs`.
pub fn map_to_store(mut map: BTreeMap<String, StoredArray>, specs: &[ParamSpec], ctx: &str) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for s in specs {
        let a = map.remove(&s.name).ok_or_else(|| Error::format(ctx, format!("missing parameter {}", s.name)))?;
        if a.shape != s.shape || a.data.len() != s.shape.iter().product::<usize>() {
            return Err(Error::ConfigMismatch { expected: format!("{} with shape {:?}", s.name, s.shape), found: format!("shape {:?}", a.shape) });
        }
        store.insert(s.name.clone(), Tensor::new(a.shape, a.data));
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::format(ctx, format!("unexpected parameter {extra}")));
    }
    Ok(store)
}

pub fn save_net<C: Serialize, R: Serialize>(path: &Path, kind: &str, config: &C, report: Option<&R>, params: &ParamStore<f32>) -> Result<()> {
    let file = NetFile { kind: kind.to_string(), config, report, params: store_to_map(params) };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&file)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Returns `(config, report, raw arrays)`; the caller checks the arrays.
pub fn load_net<C: DeserializeOwned, R: DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, Option<R>, BTreeMap<String, StoredArray>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let file: NetFile<C, R> = serde_json::from_slice(&bytes).map_err(|e| Error::format(&ctx, e))?;
    if file.kind != kind {
        return Err(Error::format(&ctx, format!("expected a {kind} file, found {}", file.kind)));
    }
    Ok((file.config, file.report, file.params))
}
