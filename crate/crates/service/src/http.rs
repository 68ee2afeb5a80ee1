use std::future::Future;
use std::path::PathBuf;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nst_core::config::{ConfigOverrides, TransferConfig};
use nst_core::experiments::{presets, SweepSpec};
use nst_core::imaging;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::ApiError;
use crate::jobs::{Service, SweepUpload};

const BODY_LIMIT: usize = 64 * 1024 * 1024;

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/frames/{k}", get(get_frame))
        .route("/jobs/{id}/losses", get(get_losses))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/presets", get(list_presets))
        .route("/sweeps", post(submit_sweep))
        .route("/sweeps/{id}/sheet", get(get_sheet))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service)
}

/// Serves until `shutdown` resolves. Running jobs keep going on their
/// worker threads; queued ones are marked failed on the next start.
pub async fn serve(
    listener: TcpListener,
    service: Service,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::bad_request("invalid_multipart", e.to_string())
}

/// Runs blocking registry or file work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn submit_job(
    State(service): State<Service>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let (mut content, mut style, mut config) = (None, None, None);
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        match name.as_str() {
            "content" => content = Some(bytes),
            "style" => style = Some(bytes),
            "config" => config = Some(bytes),
            other => {
                return Err(ApiError::bad_request(
                    "unexpected_field",
                    format!("unexpected multipart field `{other}`"),
                )
                .with_field(other))
            }
        }
    }
    let content = content.ok_or_else(|| ApiError::missing_field("content"))?;
    let style = style.ok_or_else(|| ApiError::missing_field("style"))?;
    let overrides = match config {
        Some(bytes) if !bytes.iter().all(u8::is_ascii_whitespace) => {
            serde_json::from_slice::<ConfigOverrides>(&bytes).map_err(|e| {
                ApiError::bad_request("invalid_config", format!("config: {e}")).with_field("config")
            })?
        }
        _ => ConfigOverrides::default(),
    };
    let config = overrides
        .apply(&TransferConfig::default())
        .map_err(|e| ApiError::invalid("config", e))?;
    let id = blocking(move || {
        let content = imaging::decode_png(&content).map_err(|e| ApiError::invalid("content", e))?;
        let style = imaging::decode_png(&style).map_err(|e| ApiError::invalid("style", e))?;
        service.submit_job(content, style, config)
    })
    .await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

async fn list_jobs(State(service): State<Service>) -> Response {
    Json(service.list()).into_response()
}

async fn get_job(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(service.get(&id)?).into_response())
}

async fn png_file(path: PathBuf) -> Result<Response, ApiError> {
    let bytes = tokio::fs::read(&path).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_frame(
    State(service): State<Service>,
    Path((id, k)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    png_file(service.frame_path(&id, k)?).await
}

async fn get_losses(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let csv = service.losses_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn cancel_job(
    State(service): State<Service>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let status = blocking({
        let id = id.clone();
        move || service.cancel(&id)
    })
    .await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "id": id, "status": status })),
    )
        .into_response())
}

async fn list_presets() -> Response {
    let body: Vec<_> = presets()
        .into_iter()
        .map(|(name, config)| json!({ "name": name, "config": config }))
        .collect();
    Json(body).into_response()
}

async fn submit_sweep(
    State(service): State<Service>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let (mut spec, mut contents, mut styles) = (None, Vec::new(), Vec::new());
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(multipart_error)?;
        match name.as_str() {
            "spec" => spec = Some(bytes),
            "content" => contents.push((file_name, bytes.to_vec())),
            "style" => styles.push((file_name, bytes.to_vec())),
            other => {
                return Err(ApiError::bad_request(
                    "unexpected_field",
                    format!("unexpected multipart field `{other}`"),
                )
                .with_field(other))
            }
        }
    }
    let spec = spec.ok_or_else(|| ApiError::missing_field("spec"))?;
    let spec: SweepSpec = serde_json::from_slice(&spec).map_err(|e| {
        ApiError::bad_request("invalid_spec", format!("spec: {e}")).with_field("spec")
    })?;
    let upload = SweepUpload {
        spec,
        contents,
        styles,
    };
    let id = blocking(move || service.submit_sweep(upload)).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response())
}

#[derive(Deserialize)]
struct SheetQuery {
    #[serde(default)]
    content: usize,
}

async fn get_sheet(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<SheetQuery>,
) -> Result<Response, ApiError> {
    png_file(service.sheet_path(&id, query.content)?).await
}
