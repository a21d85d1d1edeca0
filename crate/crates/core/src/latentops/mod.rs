//! Inference-time identity manipulation: k-same centroids, degree control,
//! attribute centroids, example-directed codes and identity swapping.

mod algebra;
mod query;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use algebra::{build_degree_schedule, centroid, directed_code, k_same_centroid, schedule_with, LayerSchedule, Provenance};
pub use query::AttributeQuery;

use crate::error::{Error, Result};
use crate::nets::{IdCode, Image, Model, SpatialCode, StyleVector};
use crate::seeding::rng_for;
use crate::synthfaces::{Attributes, DatasetManifest, Sample};

pub const DEFAULT_MAX_K: usize = 256;

/// Encoded identity of one manifest sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub sample_id: String,
    pub identity_id: u32,
    pub attributes: Attributes,
    pub z_id: IdCode,
    pub w: StyleVector,
}

/// Identity codes of a whole manifest, computed once per model.
#[derive(Clone, Debug, Default)]
pub struct StyleBank {
    entries: Vec<BankEntry>,
    index: HashMap<String, usize>,
}

const BANK_CHUNK: usize = 64;

impl StyleBank {
    pub fn build(model: &Model, manifest: &DatasetManifest) -> Result<Self> {
        let samples: Vec<&Sample> = manifest.samples.iter().collect();
        Self::from_samples(model, manifest, &samples)
    }

    pub fn from_samples(model: &Model, manifest: &DatasetManifest, samples: &[&Sample]) -> Result<Self> {
        let mut entries = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(BANK_CHUNK) {
            let images = chunk.iter().map(|s| Ok(manifest.load_image(s)?.to_model())).collect::<Result<Vec<_>>>()?;
            let z: Vec<IdCode> = model.encode(&images)?.into_iter().map(|(z, _)| z).collect();
            let w = model.map_identity(&z)?;
            for ((s, z_id), w) in chunk.iter().zip(z).zip(w) {
                entries.push(BankEntry { sample_id: s.sample_id.clone(), identity_id: s.label.identity_id, attributes: s.label.attributes, z_id, w });
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<BankEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.sample_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate sample id {}", e.sample_id)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn get(&self, sample_id: &str) -> Option<&BankEntry> {
        self.index.get(sample_id).map(|&i| &self.entries[i])
    }

    fn lookup(&self, sample_id: &str) -> Result<&BankEntry> {
        self.get(sample_id).ok_or_else(|| Error::invalid(format!("unknown sample id {sample_id:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ksame,
    Degree,
    Attribute,
    Directed,
    Swap,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Ksame, Mode::Degree, Mode::Attribute, Mode::Directed, Mode::Swap];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ksame => "ksame",
            Mode::Degree => "degree",
            Mode::Attribute => "attribute",
            Mode::Directed => "directed",
            Mode::Swap => "swap",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::invalid(format!("unknown mode {s:?}")))
    }
}

/// Space in which pool codes are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSpace {
    /// Mapped styles `w`.
    #[default]
    W,
    /// Identity codes `z_id`, mapped after averaging.
    Zid,
}

impl FromStr for CodeSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(CodeSpace::W),
            "zid" => Ok(CodeSpace::Zid),
            _ => Err(Error::invalid(format!("unknown code space {s:?}; expected w or zid"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnonymizationParams {
    pub mode: Mode,
    /// Pool size; defaults to `min(256, available)`.
    pub k: Option<usize>,
    /// Layers `0..layer_index` keep the source style.
    pub layer_index: usize,
    pub alpha: f64,
    /// Permit `alpha` outside `[0, 1]`.
    pub extrapolate: bool,
    pub attribute_query: Option<String>,
    pub target_sample: Option<String>,
    pub seed: u64,
    pub space: CodeSpace,
    /// Explicit pool, bypassing seeded selection.
    pub pool: Option<Vec<String>>,
}

impl Default for AnonymizationParams {
    fn default() -> Self {
        Self {
            mode: Mode::Ksame,
            k: None,
            layer_index: 0,
            alpha: 0.5,
            extrapolate: false,
            attribute_query: None,
            target_sample: None,
            seed: 0,
            space: CodeSpace::W,
            pool: None,
        }
    }
}

impl AnonymizationParams {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.layer_index > num_layers {
            return Err(Error::invalid(format!("layer_index {} outside [0, {num_layers}]", self.layer_index)));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !self.alpha.is_finite() || (!self.extrapolate && !(0.0..=1.0).contains(&self.alpha)) {
            return Err(Error::invalid(format!("alpha = {} outside [0, 1] (set extrapolate to allow)", self.alpha)));
        }
        match self.mode {
            Mode::Directed | Mode::Swap if self.target_sample.is_none() => {
                return Err(Error::MissingTarget(format!("mode {} needs a target sample", self.mode)));
            }
            Mode::Attribute if self.attribute_query.is_none() => {
                return Err(Error::invalid("mode attribute needs an attribute query"));
            }
            _ => {}
        }
        if let Some(q) = &self.attribute_query {
            q.parse::<AttributeQuery>()?;
        }
        if let (Some(pool), Some(k)) = (&self.pool, self.k) {
            if pool.len() != k {
                return Err(Error::invalid(format!("explicit pool has {} ids but k = {k}", pool.len())));
            }
        }
        Ok(())
    }
}

/// The replacement style, independent of the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedStyle {
    pub style: StyleVector,
    pub tag: Provenance,
    pub pool_sample_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub mode: Mode,
    pub k: usize,
    pub layer_index: usize,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub space: CodeSpace,
    pub attribute_query: Option<String>,
    pub target_sample: Option<String>,
    pub pool_sample_ids: Vec<String>,
    pub provenance: Vec<Provenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anonymized {
    pub image: Image,
    pub schedule: LayerSchedule,
    pub audit: Audit,
}

/// Seeded selection of `k` pool members from `candidates` (no replacement).
pub fn select_pool<'a>(candidates: &[&'a BankEntry], k: usize, seed: u64) -> Result<Vec<&'a BankEntry>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > candidates.len() {
        return Err(Error::InsufficientPool { needed: k, available: candidates.len() });
    }
    let mut rng = rng_for("latentops.pool", &[seed]);
    Ok(index::sample(&mut rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect())
}

/// Centroid of the pool in the requested space, as a style.
pub fn pool_centroid(model: &Model, pool: &[&BankEntry], space: CodeSpace) -> Result<StyleVector> {
    match space {
        CodeSpace::W => {
            let rows: Vec<&[f64]> = pool.iter().map(|e| e.w.as_slice()).collect();
            StyleVector::new(centroid(&rows)?)
        }
        CodeSpace::Zid => {
            let rows: Vec<&[f64]> = pool.iter().map(|e| e.z_id.as_slice()).collect();
            let z = IdCode::new(centroid(&rows)?)?;
            Ok(model.map_identity(&[z])?.remove(0))
        }
    }
}

/// Mean style over `k` seeded samples satisfying `query`, with their ids.
pub fn attribute_centroid(model: &Model, bank: &StyleBank, query: &AttributeQuery, k: usize, seed: u64, space: CodeSpace) -> Result<(StyleVector, Vec<String>)> {
    let candidates: Vec<&BankEntry> = bank.entries().iter().filter(|e| query.matches(&e.attributes)).collect();
    let pool = select_pool(&candidates, k, seed)?;
    let w = pool_centroid(model, &pool, space)?;
    Ok((w, pool.iter().map(|e| e.sample_id.clone()).collect()))
}

fn pool_for<'a>(bank: &'a StyleBank, params: &AnonymizationParams) -> Result<Vec<&'a BankEntry>> {
    if let Some(ids) = &params.pool {
        if ids.is_empty() {
            return Err(Error::invalid("explicit pool is empty"));
        }
        return ids.iter().map(|id| bank.lookup(id)).collect();
    }
    let query: AttributeQuery = match &params.attribute_query {
        Some(q) => q.parse()?,
        None => AttributeQuery::Const(true),
    };
    let candidates: Vec<&BankEntry> = bank.entries().iter().filter(|e| query.matches(&e.attributes)).collect();
    let k = params.k.unwrap_or_else(|| DEFAULT_MAX_K.min(candidates.len()));
    if candidates.is_empty() {
        return Err(Error::InsufficientPool { needed: k.max(1), available: 0 });
    }
    select_pool(&candidates, k, params.seed)
}

/// Resolve the replacement style for `params` against `bank`.
pub fn resolve(model: &Model, bank: &StyleBank, params: &AnonymizationParams) -> Result<ResolvedStyle> {
    params.validate(model.num_layers())?;
    let target = || -> Result<&BankEntry> {
        let id = params.target_sample.as_deref().ok_or_else(|| Error::MissingTarget(format!("mode {} needs a target sample", params.mode)))?;
        bank.get(id).ok_or_else(|| Error::MissingTarget(format!("target sample {id:?} is not in the dataset")))
    };
    match params.mode {
        Mode::Swap => Ok(ResolvedStyle { style: target()?.w.clone(), tag: Provenance::Target, pool_sample_ids: Vec::new() }),
        Mode::Directed => {
            let w_t = target()?.w.clone();
            let pool = pool_for(bank, params)?;
            let w_m = pool_centroid(model, &pool, params.space)?;
            Ok(ResolvedStyle {
                style: directed_code(&w_m, &w_t, params.alpha)?,
                tag: Provenance::Directed,
                pool_sample_ids: pool.iter().map(|e| e.sample_id.clone()).collect(),
            })
        }
        Mode::Ksame | Mode::Degree | Mode::Attribute => {
            let pool = pool_for(bank, params)?;
            Ok(ResolvedStyle {
                style: pool_centroid(model, &pool, params.space)?,
                tag: Provenance::Anonymized,
                pool_sample_ids: pool.iter().map(|e| e.sample_id.clone()).collect(),
            })
        }
    }
}

/// Source style and spatial code for each image.
pub fn encode_sources(model: &Model, images: &[Image]) -> Result<Vec<(StyleVector, SpatialCode)>> {
    let codes = model.encode(images)?;
    let ids: Vec<IdCode> = codes.iter().map(|(z, _)| z.clone()).collect();
    let ws = model.map_identity(&ids)?;
    Ok(ws.into_iter().zip(codes).map(|(w, (_, z))| (w, z)).collect())
}

/// Render every source with the replacement style injected from layer `i`.
pub fn render(model: &Model, sources: &[(StyleVector, SpatialCode)], resolved: &ResolvedStyle, i: usize) -> Result<Vec<(Image, LayerSchedule)>> {
    let l = model.num_layers();
    let schedules = sources.iter().map(|(w_s, _)| schedule_with(w_s, &resolved.style, i, l, resolved.tag)).collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = sources.iter().zip(&schedules).map(|((_, z), s)| (z, s.styles.as_slice())).collect();
    let images = model.generate_batch(&items)?;
    Ok(images.into_iter().zip(schedules).collect())
}

fn audit(params: &AnonymizationParams, resolved: &ResolvedStyle, provenance: Vec<Provenance>) -> Audit {
    Audit {
        mode: params.mode,
        k: resolved.pool_sample_ids.len(),
        layer_index: params.layer_index,
        alpha: (params.mode == Mode::Directed).then_some(params.alpha),
        seed: params.seed,
        space: params.space,
        attribute_query: params.attribute_query.clone(),
        target_sample: params.target_sample.clone(),
        pool_sample_ids: resolved.pool_sample_ids.clone(),
        provenance,
    }
}

pub fn anonymize_batch(model: &Model, bank: &StyleBank, images: &[Image], params: &AnonymizationParams) -> Result<Vec<Anonymized>> {
    let resolved = resolve(model, bank, params)?;
    let sources = encode_sources(model, images)?;
    Ok(render(model, &sources, &resolved, params.layer_index)?
        .into_iter()
        .map(|(image, schedule)| {
            let audit = audit(params, &resolved, schedule.provenance.clone());
            Anonymized { image, schedule, audit }
        })
        .collect())
}

pub fn anonymize(model: &Model, bank: &StyleBank, x_s: &Image, params: &AnonymizationParams) -> Result<Anonymized> {
    Ok(anonymize_batch(model, bank, std::slice::from_ref(x_s), params)?.remove(0))
}

/// One output per layer index `0..=L`.
pub fn sweep(model: &Model, bank: &StyleBank, x_s: &Image, params: &AnonymizationParams) -> Result<Vec<Image>> {
    let resolved = resolve(model, bank, params)?;
    let sources = encode_sources(model, std::slice::from_ref(x_s))?;
    let (w_s, z) = &sources[0];
    let l = model.num_layers();
    let schedules = (0..=l).map(|i| schedule_with(w_s, &resolved.style, i, l, resolved.tag)).collect::<Result<Vec<_>>>()?;
    let items: Vec<_> = schedules.iter().map(|s| (z, s.styles.as_slice())).collect();
    model.generate_batch(&items)
}

/// Target identity on every layer: `G(z_non(x_s), [w(x_t); L])`.
pub fn identity_swap(model: &Model, x_s: &Image, x_t: &Image) -> Result<Image> {
    let codes = encode_sources(model, &[x_s.clone(), x_t.clone()])?;
    let l = model.num_layers();
    let schedule = schedule_with(&codes[0].0, &codes[1].0, 0, l, Provenance::Target)?;
    model.generate(&codes[0].1, &schedule.styles)
}
