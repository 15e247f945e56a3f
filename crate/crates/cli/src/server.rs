use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use vulnscan::service::{Predictor, ServiceError};

use crate::commands::service_config;

pub fn router(predictor: Arc<Predictor>) -> Router {
    Router::new()
        .route("/config", get(config))
        .route("/predict", post(predict))
        .with_state(predictor)
}

async fn config(State(predictor): State<Arc<Predictor>>) -> Json<serde_json::Value> {
    Json(predictor.handle_config())
}

fn error_response(err: &ServiceError) -> Response {
    let status = StatusCode::from_u16(err.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(serde_json::json!({ "error": err.to_string() }))).into_response()
}

async fn predict(State(predictor): State<Arc<Predictor>>, body: Bytes) -> Response {
    // the forward pass is CPU-bound; keep it off the async workers
    let result = tokio::task::spawn_blocking(move || predictor.handle_predict(&body)).await;
    match result {
        Ok(Ok(document)) => ([(header::CONTENT_TYPE, "application/json")], document).into_response(),
        Ok(Err(err)) => error_response(&err),
        Err(join) => error_response(&ServiceError::Internal(join.to_string())),
    }
}

pub fn serve(model_dir: &Path, bind: &str) -> Result<()> {
    let config = service_config(model_dir, bind);
    let predictor = Arc::new(Predictor::load(&config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .with_context(|| format!("binding {}", config.bind))?;
        let addr = listener.local_addr()?;
        info!("serving {} classes", predictor.model().n_branches());
        // scripts and tests read the bound address from this line
        println!("listening on {addr}");
        axum::serve(listener, router(predictor))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
