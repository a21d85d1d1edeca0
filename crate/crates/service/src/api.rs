//! HTTP endpoints over an immutable model, manifest and style bank.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ficgan_core::latentops::{self, AnonymizationParams, StyleBank};
use ficgan_core::nets::{Image, Model};
use ficgan_core::synthfaces::DatasetManifest;
use ficgan_core::trainer::Checkpoint;
use ficgan_core::Error;
use serde::Deserialize;
use serde_json::json;

use crate::wire::*;

pub struct AppState {
    pub model: Model,
    pub manifest: DatasetManifest,
    pub bank: StyleBank,
    pub iteration: u64,
}

impl AppState {
    pub fn new(model: Model, manifest: DatasetManifest, iteration: u64) -> Result<Self, Error> {
        if manifest.image_size != model.config.image_size {
            return Err(Error::ConfigMismatch {
                expected: format!("dataset of {0}x{0} images", model.config.image_size),
                found: format!("{0}x{0}", manifest.image_size),
            });
        }
        let bank = StyleBank::build(&model, &manifest)?;
        Ok(Self { model, manifest, bank, iteration })
    }

    pub fn load(checkpoint: &Path, dataset: &Path) -> Result<Self, Error> {
        let ck = Checkpoint::load(checkpoint)?;
        let manifest = DatasetManifest::load(dataset)?;
        Self::new(ck.model, manifest, ck.iteration)
    }

    pub fn info(&self) -> Info {
        let c = &self.model.config;
        Info {
            image_size: c.image_size,
            num_layers: c.num_layers,
            d_id: c.d_id,
            d_w: c.d_w,
            num_identities: self.manifest.num_identities,
            num_samples: self.manifest.len(),
            iteration: self.iteration,
        }
    }

    pub fn source_image(&self, src: &Source) -> Result<Image, Error> {
        let img = match (&src.image, &src.sample_id) {
            (Some(b64), None) => decode_image(b64)?,
            (None, Some(id)) => {
                let s = self.manifest.find(id).ok_or_else(|| Error::invalid(format!("unknown sample_id {id:?}")))?;
                self.manifest.load_image(s)?
            }
            _ => return Err(Error::invalid("provide exactly one of image or sample_id")),
        };
        if img.size() != self.model.config.image_size {
            return Err(Error::invalid(format!("image is {0}x{0}, model expects {1}x{1}", img.size(), self.model.config.image_size)));
        }
        Ok(img.to_model())
    }

    pub fn anonymize(&self, req: &AnonymizeRequest) -> Result<AnonymizeResponse, Error> {
        let start = Instant::now();
        let x = self.source_image(&req.source)?;
        let params: AnonymizationParams = req.params.clone().into();
        let out = latentops::anonymize(&self.model, &self.bank, &x, &params)?;
        Ok(AnonymizeResponse {
            image: encode_image(&out.image)?,
            audit: req.return_audit.then_some(out.audit),
            timing_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn reconstruct(&self, req: &ReconstructRequest) -> Result<ImageResponse, Error> {
        let start = Instant::now();
        let x = self.source_image(&req.source)?;
        let rec = self.model.reconstruct(std::slice::from_ref(&x))?;
        Ok(ImageResponse { image: encode_image(&rec[0])?, timing_ms: start.elapsed().as_secs_f64() * 1e3 })
    }

    pub fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse, Error> {
        let start = Instant::now();
        let x = self.source_image(&req.source)?;
        let params: AnonymizationParams = req.params.clone().into();
        let images = latentops::sweep(&self.model, &self.bank, &x, &params)?;
        Ok(SweepResponse { images: images.iter().map(encode_image).collect::<Result<_, _>>()?, timing_ms: start.elapsed().as_secs_f64() * 1e3 })
    }

    pub fn samples(&self, page: usize, page_size: usize) -> Result<SamplesPage, Error> {
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(Error::invalid(format!("page_size must be in [1, {MAX_PAGE_SIZE}]")));
        }
        let total = self.manifest.len();
        let total_pages = total.div_ceil(page_size);
        let samples = self
            .manifest
            .samples
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|s| {
                let png = self.manifest.load_image(s)?.encode_png()?;
                Ok(SampleSummary {
                    sample_id: s.sample_id.clone(),
                    identity_id: s.label.identity_id,
                    attributes: s.label.attributes,
                    thumbnail: base64::Engine::encode(&base64::engine::general_purpose::STANDARD, png),
                })
            })
            .collect::<Result<_, Error>>()?;
        Ok(SamplesPage { page, page_size, total, total_pages, samples })
    }
}

pub const DEFAULT_PAGE_SIZE: usize = 24;
pub const MAX_PAGE_SIZE: usize = 200;

/// Error wrapper rendering `{code, message, details}`.
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let details = match &e {
            Error::InsufficientPool { needed, available } => json!({ "needed": needed, "available": available }),
            _ => json!({}),
        };
        let status = match e.code() {
            "invalid_argument" | "insufficient_pool" | "missing_target" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, body: ErrorBody { code: e.code().to_string(), message: e.to_string(), details } }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: ErrorBody { code: "invalid_argument".into(), message: r.body_text(), details: json!({}) } }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: ErrorBody { code: "invalid_argument".into(), message: r.body_text(), details: json!({}) } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = Arc<AppState>;

/// Run CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(state: Shared, f: impl FnOnce(&AppState) -> Result<T, Error> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, body: ErrorBody { code: "internal".into(), message: e.to_string(), details: json!({}) } })?
        .map_err(ApiError::from)
}

async fn info(State(s): State<Shared>) -> Json<Info> {
    Json(s.info())
}

async fn anonymize(State(s): State<Shared>, body: Result<Json<AnonymizeRequest>, JsonRejection>) -> Result<Json<AnonymizeResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |st| st.anonymize(&req)).await?))
}

async fn reconstruct(State(s): State<Shared>, body: Result<Json<ReconstructRequest>, JsonRejection>) -> Result<Json<ImageResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |st| st.reconstruct(&req)).await?))
}

async fn sweep(State(s): State<Shared>, body: Result<Json<SweepRequest>, JsonRejection>) -> Result<Json<SweepResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(s, move |st| st.sweep(&req)).await?))
}

#[derive(Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn samples(State(s): State<Shared>, q: Result<Query<PageQuery>, QueryRejection>) -> Result<Json<SamplesPage>, ApiError> {
    let Query(q) = q?;
    let (page, size) = (q.page.unwrap_or(0), q.page_size.unwrap_or(DEFAULT_PAGE_SIZE));
    Ok(Json(blocking(s, move |st| st.samples(page, size)).await?))
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, body: ErrorBody { code: "not_found".into(), message: "no such endpoint".into(), details: json!({}) } }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/anonymize", post(anonymize))
        .route("/v1/reconstruct", post(reconstruct))
        .route("/v1/sweep", post(sweep))
        .route("/v1/samples", get(samples))
        .fallback(not_found)
        .with_state(state)
}

pub async fn serve(state: AppState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
