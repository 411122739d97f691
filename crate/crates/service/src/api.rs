use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use gel_core::clcnn::{evaluate_sliding, WindowScore};
use gel_core::glyphset::IMAGE_SIDE;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::image::encode_gray;
use crate::state::ServiceState;

/// Server-side bound on every latent coordinate.
pub const Z_LIMIT: f32 = 4.0;
/// Largest SSA preview offset accepted.
pub const U_CAP: f64 = 4.0;
pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 500;
pub const DEFAULT_K: usize = 10;

type AppState = Arc<ServiceState>;

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/chars", get(chars))
        .route("/api/embedding/{ch}", get(embedding))
        .route("/api/decode", post(decode))
        .route("/api/neighbors", post(neighbors))
        .route("/api/ssa_preview", post(ssa_preview))
        .route("/api/classify", post(classify))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

fn codepoint(c: char) -> String {
    format!("U+{:04X}", c as u32)
}

/// A single character, given literally or as `U+XXXX`.
fn parse_char(s: &str) -> Result<char, ApiError> {
    let mut it = s.chars();
    if let (Some(c), None) = (it.next(), it.next()) {
        return Ok(c);
    }
    let hex = s.strip_prefix("U+").or_else(|| s.strip_prefix("u+"));
    hex.and_then(|h| u32::from_str_radix(h, 16).ok())
        .and_then(char::from_u32)
        .ok_or_else(|| ApiError::bad_request(format!("expected a single character or U+XXXX, got {s:?}")))
}

fn lookup_index(state: &ServiceState, c: char) -> Result<usize, ApiError> {
    state.table.position(c).ok_or_else(|| {
        let nearest: Vec<String> = state.table.nearest_codepoints(c, 5).into_iter().map(String::from).collect();
        ApiError {
            status: StatusCode::NOT_FOUND,
            error: format!("{c:?} ({}) is not in the charset", codepoint(c)),
            nearest: Some(nearest),
        }
    })
}

fn check_z(state: &ServiceState, z: &[f32]) -> Result<Vec<f32>, ApiError> {
    let d = state.latent_dim();
    if z.len() != d {
        return Err(ApiError::bad_request(format!("z has length {}, expected {d}", z.len())));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(ApiError::bad_request(format!("z[{i}] is not finite")));
    }
    Ok(z.iter().map(|v| v.clamp(-Z_LIMIT, Z_LIMIT)).collect())
}

fn render(state: &ServiceState, z: &[f32]) -> Result<Vec<u8>, ApiError> {
    let pixels = state.model.decode(z).map_err(ApiError::internal)?;
    Ok(encode_gray(&pixels, IMAGE_SIDE, IMAGE_SIDE))
}

#[derive(Debug, Deserialize)]
pub struct CharsQuery {
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub page: usize,
    pub per_page: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CharItem {
    pub char: String,
    pub codepoint: String,
    pub index: usize,
    /// Mean vector restricted to the active dimensions.
    pub mu_active: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CharsPage {
    pub active_dims: Vec<usize>,
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub items: Vec<CharItem>,
}

async fn chars(State(state): State<AppState>, Query(q): Query<CharsQuery>) -> Json<CharsPage> {
    let query = q.query.trim();
    let matches: Vec<usize> = if query.is_empty() {
        (0..state.table.len()).collect()
    } else if let Ok(c) = parse_char(query) {
        state.table.position(c).into_iter().collect()
    } else {
        let mut seen = Vec::new();
        for c in query.chars() {
            if let Some(i) = state.table.position(c) {
                if !seen.contains(&i) {
                    seen.push(i);
                }
            }
        }
        seen
    };
    let per_page = q.per_page.unwrap_or(DEFAULT_PER_PAGE).clamp(1, MAX_PER_PAGE);
    let items = matches
        .iter()
        .skip(q.page.saturating_mul(per_page))
        .take(per_page)
        .map(|&i| {
            let e = &state.table.entries()[i];
            CharItem {
                char: e.codepoint.to_string(),
                codepoint: codepoint(e.codepoint),
                index: i,
                mu_active: state.active_dims.iter().map(|&j| e.mu[j]).collect(),
            }
        })
        .collect();
    Json(CharsPage {
        active_dims: state.active_dims.clone(),
        total: matches.len(),
        page: q.page,
        per_page,
        items,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EmbeddingResponse {
    pub char: String,
    pub codepoint: String,
    pub index: usize,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

async fn embedding(State(state): State<AppState>, UrlPath(ch): UrlPath<String>) -> Result<Json<EmbeddingResponse>, ApiError> {
    let c = parse_char(&ch)?;
    let i = lookup_index(&state, c)?;
    let e = &state.table.entries()[i];
    Ok(Json(EmbeddingResponse {
        char: c.to_string(),
        codepoint: codepoint(c),
        index: i,
        mu: e.mu.clone(),
        sigma: e.sigma.clone(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub z: Vec<f32>,
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn decode(State(state): State<AppState>, Json(req): Json<DecodeRequest>) -> Result<Response, ApiError> {
    let z = check_z(&state, &req.z)?;
    Ok(png_response(render(&state, &z)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NeighborsRequest {
    pub z: Vec<f32>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Neighbor {
    pub char: String,
    pub codepoint: String,
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NeighborsResponse {
    pub neighbors: Vec<Neighbor>,
}

fn neighbor_list(state: &ServiceState, z: &[f32], k: usize) -> Vec<Neighbor> {
    state
        .neighbors(z, k)
        .into_iter()
        .map(|(i, distance)| {
            let c = state.table.entries()[i].codepoint;
            Neighbor {
                char: c.to_string(),
                codepoint: codepoint(c),
                index: i,
                distance,
            }
        })
        .collect()
}

async fn neighbors(State(state): State<AppState>, Json(req): Json<NeighborsRequest>) -> Result<Json<NeighborsResponse>, ApiError> {
    let z = check_z(&state, &req.z)?;
    Ok(Json(NeighborsResponse {
        neighbors: neighbor_list(&state, &z, req.k),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SsaPreviewRequest {
    pub char: String,
    pub dim: usize,
    pub u: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SsaPreviewResponse {
    pub z: Vec<f32>,
    /// Base64-encoded PNG of the perturbed reconstruction.
    pub png: String,
    pub neighbors: Vec<Neighbor>,
}

async fn ssa_preview(State(state): State<AppState>, Json(req): Json<SsaPreviewRequest>) -> Result<Json<SsaPreviewResponse>, ApiError> {
    let c = parse_char(&req.char)?;
    let i = lookup_index(&state, c)?;
    let d = state.latent_dim();
    if req.dim >= d {
        return Err(ApiError::bad_request(format!("dim {} out of range 0..{d}", req.dim)));
    }
    if !req.u.is_finite() || req.u.abs() > U_CAP {
        return Err(ApiError::bad_request(format!("|u| must be at most {U_CAP}, got {}", req.u)));
    }
    let mut z = state.table.entries()[i].mu.clone();
    if req.u != 0.0 {
        z[req.dim] = (z[req.dim] as f64 + req.u) as f32;
    }
    let z = check_z(&state, &z)?;
    let png = render(&state, &z)?;
    Ok(Json(SsaPreviewResponse {
        neighbors: neighbor_list(&state, &z, req.k),
        png: base64::engine::general_purpose::STANDARD.encode(png),
        z,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassifyResponse {
    pub label: usize,
    pub category: String,
    pub probs: Vec<f64>,
    pub windows: Vec<WindowScore>,
}

async fn classify(State(state): State<AppState>, Json(req): Json<ClassifyRequest>) -> Result<Json<ClassifyResponse>, ApiError> {
    if state.classifier.is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no classifier loaded"));
    }
    if req.text.is_empty() {
        return Err(ApiError::bad_request("text is empty"));
    }
    let result = tokio::task::spawn_blocking(move || {
        let clf = state.classifier.as_ref().expect("checked above");
        evaluate_sliding(&clf.model, &state.table, &state.charset, &req.text)
            .map(|r| (clf.meta.categories[r.label].clone(), r))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(ApiError::internal)?;
    let (category, r) = result;
    Ok(Json(ClassifyResponse {
        label: r.label,
        category,
        probs: r.mean_probs,
        windows: r.windows,
    }))
}
