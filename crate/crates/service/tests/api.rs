use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use uvmakeup_core::colorxfer::{ColorNet, ColorNetConfig};
use uvmakeup_core::patternseg::{SegNet, SegNetConfig};
use uvmakeup_core::pipeline::Pipeline;
use uvmakeup_core::synthdata::procedural_faces;
use uvmakeup_core::uvgeom::SilhouetteProvider;
use uvmakeup_core::{FaceRole, Image, UvLayout};
use uvmakeup_service::{router, AppState, ServiceConfig};

const BOUNDARY: &str = "----uvmakeup-test-boundary";

enum Part<'a> {
    Text(&'a str),
    File(&'a [u8]),
}

fn multipart(parts: &[(&str, Part)]) -> Body {
    let mut body = Vec::new();
    for (name, part) in parts {
        body.extend(format!("--{BOUNDARY}\r\n").as_bytes());
        match part {
            Part::Text(t) => {
                body.extend(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n{t}\r\n").as_bytes());
            }
            Part::File(bytes) => {
                body.extend(
                    format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\nContent-Type: image/png\r\n\r\n")
                        .as_bytes(),
                );
                body.extend(*bytes);
                body.extend(b"\r\n");
            }
        }
    }
    body.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    Body::from(body)
}

fn pipeline() -> Pipeline {
    Pipeline::new(Arc::new(SilhouetteProvider::new(UvLayout::default())))
        .with_color(Arc::new(ColorNet::new(ColorNetConfig::default(), 1).unwrap()))
        .with_pattern(Arc::new(SegNet::new(SegNetConfig::default(), 2).unwrap()))
}

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig { styles: dir.join("styles"), models: dir.join("models"), ..Default::default() }
}

fn app(dir: &Path, pipeline: Option<Pipeline>) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(config(dir), pipeline).unwrap());
    (router(Arc::clone(&state)), state)
}

fn faces() -> Vec<Vec<u8>> {
    procedural_faces(3, 17, &UvLayout::default()).unwrap().iter().map(|f| f.image.encode_png().unwrap()).collect()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, parts: &[(&str, Part<'_>)]) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(parts))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn image_of(v: &Value) -> Vec<u8> {
    base64::engine::general_purpose::STANDARD.decode(v["image"].as_str().unwrap()).unwrap()
}

#[tokio::test]
async fn health_reports_unloaded_models_and_transfer_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), None);
    let (status, body) = get(&app, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json(&body)["ready"], false);

    let f = faces();
    let (status, err) =
        post(&app, "/api/transfer", &[("source", Part::File(&f[0])), ("reference", Part::File(&f[1]))]).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(err["category"], "model-missing");

    // no model directory at all: the service still starts
    let state = AppState::from_config(config(dir.path())).unwrap();
    assert!(state.pipeline().is_none());
}

#[tokio::test]
async fn style_upload_precomputes_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path(), Some(pipeline()));
    let f = faces();

    let blank = Image::filled(256, 256, [0.4, 0.5, 0.6]).encode_png().unwrap();
    let (status, err) = post(&app, "/api/styles", &[("image", Part::File(&blank))]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["category"], "geometry");
    assert_eq!(err["detail"]["input"], "style");

    let (status, info) = post(&app, "/api/styles", &[("image", Part::File(&f[1]))]).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = info["id"].as_str().unwrap().to_string();
    let (_, list) = get(&app, "/api/styles").await;
    assert_eq!(json(&list)[0]["id"], id.as_str());
    let (status, thumb) = get(&app, &format!("/api/styles/{id}/thumbnail")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(Image::decode_png(&thumb).unwrap().dims(), (64, 64));

    // stored artifacts equal an on-the-fly preparation of the same image
    let fresh = pipeline().prepare_reference(&Image::decode_png(&f[1]).unwrap(), FaceRole::Style).unwrap();
    let check = |state: &AppState| {
        let styles = state.styles();
        let stored = &styles.get(&id).unwrap().face;
        assert_eq!(stored.texture, fresh.texture);
        assert_eq!(stored.mask, fresh.mask);
        assert_eq!(stored.position, fresh.position);
    };
    check(&state);
    let before = state.styles().checksums().unwrap();
    drop((app, state));

    let restarted = AppState::new(config(dir.path()), Some(pipeline())).unwrap();
    check(&restarted);
    assert_eq!(restarted.styles().checksums().unwrap(), before);
}

#[tokio::test]
async fn alpha_sweep_gives_distinct_ids_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Some(pipeline()));
    let f = faces();
    let (_, info) = post(&app, "/api/styles", &[("image", Part::File(&f[1]))]).await;
    let style = info["id"].as_str().unwrap().to_string();

    let mut ids = Vec::new();
    for alpha in ["0", "0.5", "1"] {
        let parts = [("source", Part::File(&f[0])), ("style", Part::Text(&style)), ("alpha", Part::Text(alpha))];
        let (status, first) = post(&app, "/api/transfer", &parts).await;
        assert_eq!(status, StatusCode::OK, "{first}");
        let (_, again) = post(&app, "/api/transfer", &parts).await;
        assert_eq!(first["id"], again["id"]);
        assert_eq!(image_of(&first), image_of(&again));

        let id = first["id"].as_str().unwrap().to_string();
        let (status, stored) = get(&app, &format!("/api/result/{id}/output.png")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(stored, image_of(&first));
        let (_, meta) = get(&app, &format!("/api/result/{id}")).await;
        let meta = json(&meta);
        assert!(meta["artifacts"].as_array().unwrap().iter().any(|a| a == "pattern_mask"));
        assert_eq!(meta["request"]["alpha"].as_f64().unwrap(), alpha.parse::<f64>().unwrap());
        ids.push(id);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 3);

    // an independent server instance produces the same bytes
    let other = tempfile::tempdir().unwrap();
    let (app2, _) = self::app(other.path(), Some(pipeline()));
    let parts = [("source", Part::File(&f[0])), ("reference", Part::File(&f[1])), ("regions", Part::Text("lips,eyes"))];
    let (_, a) = post(&app, "/api/transfer", &parts).await;
    let (_, b) = post(&app2, "/api/transfer", &parts).await;
    assert_eq!(a["id"], b["id"]);
    assert_eq!(image_of(&a), image_of(&b));
}

#[tokio::test]
async fn invalid_requests_are_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Some(pipeline()));
    let f = faces();
    let src = || ("source", Part::File(&f[0]));

    let cases: Vec<(Vec<(&str, Part)>, StatusCode)> = vec![
        (vec![src(), ("style", Part::Text("0123456789abcdef"))], StatusCode::NOT_FOUND),
        (vec![src(), ("reference", Part::File(&f[1])), ("alpha", Part::Text("2"))], StatusCode::BAD_REQUEST),
        (vec![src(), ("reference", Part::File(&f[1])), ("regions", Part::Text(","))], StatusCode::BAD_REQUEST),
        (vec![src(), ("reference", Part::File(&f[1])), ("use_color", Part::Text("maybe"))], StatusCode::BAD_REQUEST),
        (vec![src()], StatusCode::BAD_REQUEST),
        (vec![("reference", Part::File(&f[1]))], StatusCode::BAD_REQUEST),
        (vec![src(), ("reference", Part::File(b"not a png"))], StatusCode::BAD_REQUEST),
        (vec![src(), ("reference2", Part::File(&f[1]))], StatusCode::BAD_REQUEST),
    ];
    for (parts, expected) in cases {
        let (status, err) = post(&app, "/api/transfer", &parts).await;
        assert_eq!(status, expected, "{err}");
        assert!(err["category"].is_string() && err["message"].is_string(), "{err}");
    }

    let (status, body) = get(&app, "/api/result/missing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json(&body)["category"], "not-found");

    let blank = Image::filled(256, 256, [0.5; 3]).encode_png().unwrap();
    let (status, err) =
        post(&app, "/api/transfer", &[("source", Part::File(&blank)), ("reference", Part::File(&f[1]))]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["detail"]["input"], "source");
}

#[tokio::test]
async fn oversized_uploads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { max_upload_bytes: 1024, ..config(dir.path()) };
    let app = router(Arc::new(AppState::new(cfg, Some(pipeline())).unwrap()));
    let f = faces();
    let (status, err) = post(&app, "/api/styles", &[("image", Part::File(&f[0]))]).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(err["category"], "payload-too-large");
}
