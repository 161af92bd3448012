//! Drive the HTTP service in-process: create a session, take two shots and
//! ask for the metrics. `frustum serve` exposes the same router on a socket.

use axum::body::Body;
use axum::http::Request;
use flying_frustum::service::http::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn post(app: &axum::Router, uri: &str, body: Value) -> Result<Value, Box<dyn std::error::Error>> {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string()))?;
    let bytes = app.clone().oneshot(req).await?.into_body().collect().await?.to_bytes();
    Ok(serde_json::from_slice(&bytes)?)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let app = router(AppState::new(dir.path())?);
    let created = post(&app, "/sessions", json!({ "phantom": "tube_in_cube", "seed": 1 })).await?;
    let id = created["id"].as_str().ok_or("no id")?.to_string();
    for az in [0.0, 90.0] {
        let shot = post(&app, &format!("/sessions/{id}/acquire"), json!({ "view": { "azimuth": az, "elevation": 5.0 } })).await?;
        println!("shot {}: entry at {}", shot["shot"], shot["landmark_pixels"]["tube_entry"]["pixel"]);
    }
    let req = Request::get(format!("/sessions/{id}/metrics")).body(Body::empty())?;
    let bytes = app.clone().oneshot(req).await?.into_body().collect().await?.to_bytes();
    println!("metrics: {}", String::from_utf8_lossy(&bytes));
    Ok(())
}
