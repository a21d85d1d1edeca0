//! Tar archive holding `meta.json` plus raw little-endian `f32` arrays.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use ficgan_autograd::{Adam, AdamConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::{arch, Model, ModelConfig, Verifier, VerifierConfig};

pub const FORMAT_VERSION: u32 = 1;
const META: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Stored as a decimal string: JSON numbers cannot hold a `u128`.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Free-form provenance recorded with every checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dataset_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub loss_weights: Option<LossWeights>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub generator: Adam<f32>,
    pub discriminator: Adam<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub iteration: u64,
    pub rng: Option<RngState>,
    pub meta: CheckpointMeta,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    config: ModelConfig,
    verifier_config: Option<VerifierConfig>,
    iteration: u64,
    rng: Option<RngState>,
    meta: CheckpointMeta,
    optimizer: Option<BTreeMap<String, AdamMeta>>,
    arrays: Vec<ArrayEntry>,
}

/// Read only the `format_version` so old archives give a version error
/// rather than a schema error.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn array_path(name: &str) -> String {
    format!("arrays/{name}.f32")
}

impl Checkpoint {
    fn named_arrays(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = self.model.params.iter().map(|(k, v)| (k.clone(), v)).collect();
        if let Some(v) = &self.model.verifier {
            out.extend(v.params.iter().map(|(k, v)| (k.clone(), v)));
        }
        if let Some(o) = &self.optimizer {
            for (tag, adam) in [("adam_g", &o.generator), ("adam_d", &o.discriminator)] {
                out.extend(adam.m.iter().map(|(k, v)| (format!("{tag}.m.{k}"), v)));
                out.extend(adam.v.iter().map(|(k, v)| (format!("{tag}.v.{k}"), v)));
            }
        }
        out
    }

    /// Write atomically: the archive appears at `path` only once complete.
    pub fn save(&self, path: &Path) -> Result<()> {
        let arrays = self.named_arrays();
        let optimizer = self.optimizer.as_ref().map(|o| {
            [("adam_g", &o.generator), ("adam_d", &o.discriminator)]
                .into_iter()
                .map(|(tag, a)| {
                    let c = a.config;
                    (tag.to_string(), AdamMeta { lr: c.lr, beta1: c.beta1, beta2: c.beta2, eps: c.eps, step: a.step })
                })
                .collect()
        });
        let meta = MetaFile {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            verifier_config: self.model.verifier.as_ref().map(|v| v.config.clone()),
            iteration: self.iteration,
            rng: self.rng,
            meta: self.meta.clone(),
            optimizer,
            arrays: arrays.iter().map(|(n, t)| ArrayEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        };
        let tmp = path.with_extension("tmp");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut builder = tar::Builder::new(file);
        let mut append = |name: &str, bytes: &[u8]| -> Result<()> {
            let mut header = tar::Header::new_gnu();
            header.set_size(bytes.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_cksum();
            builder.append_data(&mut header, name, bytes).map_err(|e| Error::io(&tmp, e))
        };
        append(META, &serde_json::to_vec_pretty(&meta)?)?;
        for (name, t) in &arrays {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            append(&array_path(name), &bytes)?;
        }
        let file = builder.into_inner().map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut archive = tar::Archive::new(file);
        let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for entry in archive.entries().map_err(|e| Error::io(path, e))? {
            let mut entry = entry.map_err(|e| Error::io(path, e))?;
            let name = entry.path().map_err(|e| Error::io(path, e))?.to_string_lossy().into_owned();
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
            blobs.insert(name, buf);
        }
        let ctx = path.display().to_string();
        let raw = blobs.get(META).ok_or_else(|| Error::format(&ctx, "archive has no meta.json"))?;
        let probe: VersionProbe = serde_json::from_slice(raw).map_err(|e| Error::format(&ctx, e))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::Version { expected: FORMAT_VERSION, found: probe.format_version });
        }
        let meta: MetaFile = serde_json::from_slice(raw).map_err(|e| Error::format(&ctx, e))?;
        meta.config.validate()?;

        let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for a in &meta.arrays {
            let bytes = blobs.get(&array_path(&a.name)).ok_or_else(|| Error::format(&ctx, format!("missing array {}", a.name)))?;
            let n: usize = a.shape.iter().product();
            if bytes.len() != 4 * n {
                return Err(Error::format(&ctx, format!("array {} has {} bytes, shape {:?} needs {}", a.name, bytes.len(), a.shape, 4 * n)));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(a.name.clone(), Tensor::new(a.shape.clone(), data));
        }

        let mut specs = arch::encoder_specs(&meta.config);
        specs.extend(arch::mapping_specs(&meta.config));
        specs.extend(arch::generator_specs(&meta.config));
        specs.extend(arch::discriminator_specs(&meta.config));
        let params = take_specs(&mut tensors, &specs, &ctx)?;
        let verifier = match &meta.verifier_config {
            Some(vc) => {
                vc.validate()?;
                Some(Verifier { config: vc.clone(), params: take_specs(&mut tensors, &arch::verifier_specs(vc), &ctx)? })
            }
            None => None,
        };
        let optimizer = match &meta.optimizer {
            Some(opt) => {
                let build = |tag: &str, tensors: &mut BTreeMap<String, Tensor<f32>>| -> Result<Adam<f32>> {
                    let m = opt.get(tag).ok_or_else(|| Error::format(&ctx, format!("missing optimizer {tag}")))?;
                    let mut adam = Adam::new(AdamConfig { lr: m.lr, beta1: m.beta1, beta2: m.beta2, eps: m.eps }, &ParamStore::new());
                    adam.step = m.step;
                    for (prefix, store) in [("m", &mut adam.m), ("v", &mut adam.v)] {
                        let head = format!("{tag}.{prefix}.");
                        let names: Vec<String> = tensors.keys().filter(|k| k.starts_with(&head)).cloned().collect();
                        for k in names {
                            let t = tensors.remove(&k).expect("listed above");
                            store.insert(k[head.len()..].to_string(), t);
                        }
                    }
                    Ok(adam)
                };
                let generator = build("adam_g", &mut tensors)?;
                let discriminator = build("adam_d", &mut tensors)?;
                Some(OptimizerState { generator, discriminator })
            }
            None => None,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::format(&ctx, format!("unexpected array {extra}")));
        }
        Ok(Self { model: Model { config: meta.config, params, verifier }, iteration: meta.iteration, rng: meta.rng, meta: meta.meta, optimizer })
    }

    /// Load and require a specific model configuration.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.model.config != expected {
            return Err(Error::ConfigMismatch {
                expected: serde_json::to_string(expected)?,
                found: serde_json::to_string(&ck.model.config)?,
            });
        }
        Ok(ck)
    }
}

fn take_specs(tensors: &mut BTreeMap<String, Tensor<f32>>, specs: &[arch::ParamSpec], ctx: &str) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for s in specs {
        let t = tensors.remove(&s.name).ok_or_else(|| Error::format(ctx, format!("missing parameter {}", s.name)))?;
        if t.shape() != s.shape.as_slice() {
            return Err(Error::ConfigMismatch { expected: format!("{} with shape {:?}", s.name, s.shape), found: format!("shape {:?}", t.shape()) });
        }
        store.insert(s.name.clone(), t);
    }
    Ok(store)
}
