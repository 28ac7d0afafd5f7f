use std::path::{Path, PathBuf};
use std::sync::Arc;

use audiohall::analysis::type_frequency;
use audiohall::corpus::{load_corpus, save_corpus};
use audiohall::{Corpus, HallucType, Sample};
use audiohall_annotate::{router, ServiceConfig};
use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
}

fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let mut samples: Vec<Sample> = (1..=n)
        .map(|i| Sample::new(format!("s{i}"), format!("audio/s{i}.wav"), format!("I hear sound number {i}.")))
        .collect();
    if let Some(last) = samples.last_mut() {
        last.audio_ref = "https://example.org/remote.wav".into();
    }
    save_corpus(&Corpus::new(samples).unwrap(), &corpus).unwrap();
    std::fs::create_dir(dir.path().join("audio")).unwrap();
    std::fs::write(dir.path().join("audio/s1.wav"), (0u8..=255).collect::<Vec<_>>()).unwrap();
    Fixture { _dir: dir, corpus }
}

fn app(corpus: &Path, rewrite_every: usize) -> Router {
    let cfg = ServiceConfig {
        rewrite_every,
        ..ServiceConfig::new(corpus)
    };
    router(cfg.open().unwrap(), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn put_label(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::put(format!("/api/samples/{id}/annotation"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

#[tokio::test]
async fn label_round_trip() {
    let f = fixture(3);
    let app = app(&f.corpus, 50);

    let (s, next) = get_json(&app, "/api/samples/next").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(next["sample"]["id"], "s1");
    assert_eq!(next["complete"], false);

    let (s, stored) = put_label(&app, "s1", json!({"sample_id": "s1", "hallucinated": false, "halluc_type": null})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stored["hallucinated"], false);
    assert!(stored["timestamp"].is_string());
    let (_, sample) = get_json(&app, "/api/samples/s1").await;
    assert_eq!(sample["annotation"], stored);

    let (s, stored) = put_label(&app, "s2", json!({"hallucinated": true, "type": "C", "annotator": "ann1"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stored["type"], "C");
    assert_eq!(stored["annotator"], "ann1");

    let (_, p) = get_json(&app, "/api/progress").await;
    assert_eq!(p["total"], 3);
    assert_eq!(p["labeled"], 2);
    assert_eq!(p["per_type"], json!({"A": 0, "B": 0, "C": 1}));
    assert_eq!(p["hallucination_rate"], 0.5);

    let (_, next) = get_json(&app, "/api/samples/next?after=s1").await;
    assert_eq!(next["sample"]["id"], "s3");
}

#[tokio::test]
async fn rejects_bad_labels_and_unknown_ids() {
    let f = fixture(2);
    let app = app(&f.corpus, 50);
    let (s, body) = put_label(&app, "s1", json!({"hallucinated": false, "halluc_type": "A"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("not hallucinated"));
    let (s, _) = put_label(&app, "s1", json!({"hallucinated": true})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = put_label(&app, "s1", json!({"halluc_type": "A"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = put_label(&app, "s1", json!({"sample_id": "s2", "hallucinated": false})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = put_label(&app, "s9", json!({"hallucinated": false})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json(&app, "/api/samples/s9").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json(&app, "/api/samples/next?after=s9").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, p) = get_json(&app, "/api/progress").await;
    assert_eq!(p["labeled"], 0);
    assert_eq!(p["hallucination_rate"], Value::Null);
}

#[tokio::test]
async fn acknowledged_labels_survive_a_crash() {
    let f = fixture(5);
    {
        // a rewrite interval the test never reaches, so only the journal holds the labels
        let app = app(&f.corpus, 1000);
        put_label(&app, "s1", json!({"hallucinated": false})).await;
        put_label(&app, "s2", json!({"hallucinated": true, "halluc_type": "A"})).await;
        put_label(&app, "s2", json!({"hallucinated": true, "halluc_type": "B"})).await;
        put_label(&app, "s4", json!({"hallucinated": true, "halluc_type": "C"})).await;
    }
    assert!(load_corpus(&f.corpus).unwrap().samples().iter().all(|s| s.annotation.is_none()));

    let app = app(&f.corpus, 1000);
    let (_, s2) = get_json(&app, "/api/samples/s2").await;
    assert_eq!(s2["annotation"]["type"], "B");
    let (_, p) = get_json(&app, "/api/progress").await;
    assert_eq!(p["labeled"], 3);
    // replay also brings the corpus file up to date
    let on_disk = load_corpus(&f.corpus).unwrap();
    assert_eq!(on_disk.get("s4").unwrap().halluc_type(), Some(HallucType::C));
    assert_eq!(on_disk.get("s2").unwrap().halluc_type(), Some(HallucType::B));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_serialize() {
    let f = fixture(40);
    let app = app(&f.corpus, 7);
    let mut tasks = Vec::new();
    for i in 1..=39 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let t = ["A", "B", "C"][i % 3];
            put_label(&app, &format!("s{i}"), json!({"hallucinated": true, "halluc_type": t})).await.0
        }));
    }
    // many writers racing on the same sample
    for i in 0..20 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = if i % 2 == 0 {
                json!({"hallucinated": false, "annotator": format!("w{i}")})
            } else {
                json!({"hallucinated": true, "halluc_type": "A", "annotator": format!("w{i}")})
            };
            put_label(&app, "s40", body).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }

    let (_, s40) = get_json(&app, "/api/samples/s40").await;
    let ann = &s40["annotation"];
    let w: usize = ann["annotator"].as_str().unwrap()[1..].parse().unwrap();
    assert_eq!(ann["hallucinated"], w % 2 == 1);
    assert_eq!(ann["type"], if w % 2 == 1 { json!("A") } else { Value::Null });

    let journal = std::fs::read_to_string(audiohall_annotate::store::journal_path(&f.corpus)).unwrap();
    assert_eq!(journal.lines().count(), 59);

    drop(app);
    let reopened = ServiceConfig::new(&f.corpus).open().unwrap();
    let corpus = reopened.store.snapshot();
    assert!(corpus.samples().iter().all(|s| s.annotation.is_some()));
    assert_eq!(corpus.get("s40").unwrap().annotation.as_ref().unwrap().annotator(), Some(format!("w{w}").as_str()));

    let freq = type_frequency(&corpus).unwrap();
    let progress = reopened.store.progress();
    assert_eq!(progress.per_type, freq.type_counts);
    assert_eq!(progress.hallucinated, freq.total_hallucinated);
    assert_eq!(progress.labeled, freq.total_sentences);
}

#[tokio::test]
async fn serves_audio_with_ranges() {
    let f = fixture(3);
    let app = app(&f.corpus, 50);
    let (s, body) = call(&app, Request::get("/api/audio/s1").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body.len(), 256);

    let req = Request::get("/api/audio/s1").header(header::RANGE, "bytes=10-19").body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::PARTIAL_CONTENT);
    assert_eq!(res.headers()[header::CONTENT_RANGE], "bytes 10-19/256");
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&body[..], &(10u8..20).collect::<Vec<_>>()[..]);

    let (s, _) = call(&app, Request::get("/api/audio/s2").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let res = app.clone().oneshot(Request::get("/api/audio/s3").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::TEMPORARY_REDIRECT);
    assert_eq!(res.headers()[header::LOCATION], "https://example.org/remote.wav");
}

#[tokio::test]
async fn serves_ui_assets() {
    let f = fixture(1);
    let placeholder = app(&f.corpus, 50);
    let (s, body) = call(&placeholder, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/progress"));

    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>bundle</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let bundled = router(Arc::clone(&ServiceConfig::new(&f.corpus).open().unwrap()), Some(ui.path()));
    let (s, body) = call(&bundled, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!((s, body), (StatusCode::OK, b"<html>bundle</html>".to_vec()));
    let (s, body) = call(&bundled, Request::get("/app.js").body(Body::empty()).unwrap()).await;
    assert_eq!((s, body), (StatusCode::OK, b"console.log(1)".to_vec()));
    let (_, p) = get_json(&bundled, "/api/progress").await;
    assert_eq!(p["total"], 1);
}
