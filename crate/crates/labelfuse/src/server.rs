//! HTTP API of the review queue.
//!
//! | route | result |
//! |---|---|
//! | `GET /api/items?status=&offset=&limit=` | `{items, total}` |
//! | `GET /api/items/{id}` | one item plus its class name |
//! | `POST /api/items/{id}/decision` | updated item |
//! | `GET /api/images/{dataset}/{image_id}` | image bytes |
//! | `GET /api/labelspace` | unified categories |
//! | `GET /api/stats` | route and status counts |
//!
//! Errors are `{"error": kind, "message": text}` with 400 (bad paging or
//! filter), 403 (path traversal), 404, 409 (already decided) or 422
//! (invalid decision).

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use labelfuse_core::fuse::FusionReport;
use labelfuse_core::model::{CategorySpec, ImageKey, ImageRecord};
use labelfuse_core::review::{Decision, ReviewError, ReviewItem, StatusCounts, StatusKind};
use serde::{Deserialize, Serialize};

use crate::store::{ReviewStore, StoreError};

/// Everything the handlers need.
pub struct ServerState {
    pub store: Arc<ReviewStore>,
    images: BTreeMap<ImageKey, ImageRecord>,
    /// Directory that image `file_path`s are relative to, per dataset.
    image_roots: BTreeMap<String, PathBuf>,
    fusion: FusionReport,
}

impl ServerState {
    pub fn new(
        store: Arc<ReviewStore>,
        images: impl IntoIterator<Item = ImageRecord>,
        image_roots: BTreeMap<String, PathBuf>,
        fusion: FusionReport,
    ) -> Self {
        let images = images.into_iter().map(|i| (i.key(), i)).collect();
        Self { store, images, image_roots, fusion }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.kind, message: &self.message })).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::Review(r) => match r {
                ReviewError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
                ReviewError::AlreadyDecided(_) => Self::new(StatusCode::CONFLICT, "already_decided", message),
                ReviewError::InvalidCategory(_) => {
                    Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_category", message)
                }
                ReviewError::InvalidBox(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_box", message),
                ReviewError::BadPage(_) => Self::new(StatusCode::BAD_REQUEST, "bad_page", message),
                _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "review_state", message),
            },
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", message)
            }
        }
    }
}

type Shared = Arc<ServerState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/decision", post(decide))
        .route("/api/images/{dataset}/{image_id}", get(image))
        .route("/api/labelspace", get(labelspace))
        .route("/api/stats", get(stats))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

#[derive(Serialize)]
struct ItemPage {
    items: Vec<ReviewItem>,
    total: usize,
}

async fn list_items(
    State(s): State<Shared>,
    query: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<ItemPage>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_query", e.body_text()))?;
    let filter =
        match q.status.as_deref() {
            None | Some("") | Some("all") => None,
            Some(text) => Some(StatusKind::parse(text).ok_or_else(|| {
                ApiError::new(StatusCode::BAD_REQUEST, "bad_status", format!("unknown status `{text}`"))
            })?),
        };
    let (items, total) = s.store.list(filter, q.offset, q.limit)?;
    Ok(Json(ItemPage { items, total }))
}

#[derive(Serialize)]
struct ItemView {
    #[serde(flatten)]
    item: ReviewItem,
    category_name: Option<String>,
    image_url: String,
}

fn view(s: &ServerState, item: ReviewItem) -> ItemView {
    let space = s.store.label_space();
    let image_url = format!("/api/images/{}/{}", item.candidate.image.dataset, item.candidate.image.id);
    ItemView { category_name: space.name(item.candidate.category_id).map(String::from), image_url, item }
}

async fn get_item(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<ItemView>, ApiError> {
    let item = s.store.get(&id).ok_or_else(|| ApiError::from(StoreError::Review(ReviewError::NotFound(id))))?;
    Ok(Json(view(&s, item)))
}

#[derive(Debug, Deserialize)]
struct DecisionRequest {
    #[serde(flatten)]
    decision: Decision,
    actor: String,
}

async fn decide(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Json<ItemView>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_request", e.body_text()))?;
    let store = s.store.clone();
    let item = tokio::task::spawn_blocking(move || store.decide(&id, &req.decision, &req.actor))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(view(&s, item)))
}

fn is_plain_segment(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\', '\0'])
}

/// `root/relative`, provided `relative` stays below `root`.
fn resolve_below(root: &Path, relative: &str) -> Result<PathBuf, ApiError> {
    let forbidden = || ApiError::new(StatusCode::FORBIDDEN, "forbidden", "path escapes the data root");
    let rel = Path::new(relative);
    if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(forbidden());
    }
    let path = root.join(rel);
    let (Ok(real_root), Ok(real)) = (root.canonicalize(), path.canonicalize()) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no image file `{relative}`")));
    };
    if !real.starts_with(&real_root) {
        return Err(forbidden());
    }
    Ok(real)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image(
    State(s): State<Shared>,
    UrlPath((dataset, image_id)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    if !is_plain_segment(&dataset) || !is_plain_segment(&image_id) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "path traversal rejected"));
    }
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no image {dataset}/{image_id}"));
    let record = s.images.get(&ImageKey::new(dataset.clone(), image_id.clone())).ok_or_else(not_found)?;
    let root = s.image_roots.get(&dataset).ok_or_else(not_found)?;
    let path = resolve_below(root, &record.file_path)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], Body::from(bytes)).into_response())
}

async fn labelspace(State(s): State<Shared>) -> Json<Vec<CategorySpec>> {
    Json(s.store.label_space().categories().to_vec())
}

#[derive(Serialize)]
struct Stats {
    statuses: StatusCounts,
    total: usize,
    fusion: FusionReport,
}

async fn stats(State(s): State<Shared>) -> Json<Stats> {
    let statuses = s.store.counts();
    Json(Stats { total: statuses.total(), statuses, fusion: s.fusion.clone() })
}
