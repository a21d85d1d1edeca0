//! JSON request and response bodies.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ficgan_core::imageio::RgbImage;
use ficgan_core::latentops::{AnonymizationParams, Audit, CodeSpace, Mode};
use ficgan_core::nets::Image;
use ficgan_core::synthfaces::Attributes;
use ficgan_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub image_size: usize,
    #[serde(rename = "L")]
    pub num_layers: usize,
    pub d_id: usize,
    pub d_w: usize,
    pub num_identities: usize,
    pub num_samples: usize,
    pub iteration: u64,
}

/// Source image: exactly one of `image` (base64 PNG) or `sample_id`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Source {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

/// Anonymization knobs shared by `/v1/anonymize` and `/v1/sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamsBody {
    pub mode: Mode,
    pub k: Option<usize>,
    pub layer_index: usize,
    pub alpha: f64,
    pub extrapolate: bool,
    pub attribute_query: Option<String>,
    pub target_sample_id: Option<String>,
    pub seed: u64,
    pub space: CodeSpace,
    pub pool_sample_ids: Option<Vec<String>>,
}

impl Default for ParamsBody {
    fn default() -> Self {
        ParamsBody::from(&AnonymizationParams::default())
    }
}

impl From<&AnonymizationParams> for ParamsBody {
    fn from(p: &AnonymizationParams) -> Self {
        Self {
            mode: p.mode,
            k: p.k,
            layer_index: p.layer_index,
            alpha: p.alpha,
            extrapolate: p.extrapolate,
            attribute_query: p.attribute_query.clone(),
            target_sample_id: p.target_sample.clone(),
            seed: p.seed,
            space: p.space,
            pool_sample_ids: p.pool.clone(),
        }
    }
}

impl From<ParamsBody> for AnonymizationParams {
    fn from(b: ParamsBody) -> Self {
        Self {
            mode: b.mode,
            k: b.k,
            layer_index: b.layer_index,
            alpha: b.alpha,
            extrapolate: b.extrapolate,
            attribute_query: b.attribute_query,
            target_sample: b.target_sample_id,
            seed: b.seed,
            space: b.space,
            pool: b.pool_sample_ids,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnonymizeRequest {
    #[serde(flatten)]
    pub source: Source,
    #[serde(flatten)]
    pub params: ParamsBody,
    #[serde(default)]
    pub return_audit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnonymizeResponse {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Audit>,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructRequest {
    #[serde(flatten)]
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    #[serde(flatten)]
    pub source: Source,
    #[serde(flatten)]
    pub params: ParamsBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    /// Entry `i` keeps the source style on layers `0..i`.
    pub images: Vec<String>,
    pub timing_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: String,
    pub identity_id: u32,
    pub attributes: Attributes,
    pub thumbnail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplesPage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub total_pages: usize,
    pub samples: Vec<SampleSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: serde_json::Value,
}

pub fn encode_image(img: &Image) -> Result<String, Error> {
    Ok(STANDARD.encode(RgbImage::from_model(img).encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<RgbImage, Error> {
    let bytes = STANDARD.decode(b64.trim()).map_err(|e| Error::invalid(format!("image is not valid base64: {e}")))?;
    RgbImage::decode_png(&bytes)
}
