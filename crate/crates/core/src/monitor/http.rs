//! axum adapter over [`super::api::handle`], plus the periodic snapshot refresher.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, Response, StatusCode, Uri};
use axum::Router;
use tokio::net::TcpListener;

use super::api::handle;
use super::Monitor;

async fn dispatch(State(monitor): State<Arc<Monitor>>, method: Method, uri: Uri) -> Response<Body> {
    let target = uri
        .path_and_query()
        .map_or_else(|| uri.path().to_owned(), |pq| pq.as_str().to_owned());
    let r = tokio::task::block_in_place(|| handle(&monitor, method.as_str(), &target));
    Response::builder()
        .status(StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR))
        .header(header::CONTENT_TYPE, r.content_type)
        .body(Body::from(r.body))
        .expect("valid response")
}

pub fn router(monitor: Arc<Monitor>) -> Router {
    Router::new().fallback(dispatch).with_state(monitor)
}

/// Rebuilds the snapshot every `refresh_period_s` until the task is dropped.
pub async fn refresh_loop(monitor: Arc<Monitor>) {
    let period = Duration::from_secs_f64(monitor.config().refresh_period_s.max(0.001));
    let mut ticker = tokio::time::interval(period);
    loop {
        ticker.tick().await;
        monitor.refresh();
    }
}

pub async fn serve(listener: TcpListener, monitor: Arc<Monitor>) -> std::io::Result<()> {
    tokio::spawn(refresh_loop(monitor.clone()));
    axum::serve(listener, router(monitor)).await
}
