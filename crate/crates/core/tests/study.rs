use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use synthrad::imaging::{decode, make_phantom_set, save_png, DatasetManifest, ImageMeta, ManifestEntry, Origin};
use synthrad::memaudit::{build_review_bundle, SimilarPair};
use synthrad::study::{router, Mode, NextItem, StudyFiles, StudyService, StudySetup};
use synthrad::turing::{analyze_study, build_quartets, Quartet, ResponseRecord};

const N_QUARTETS: usize = 6;
const SEED: u64 = 11;

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    quartets: Vec<Quartet>,
    image_paths: HashMap<String, std::path::PathBuf>,
    review: (std::path::PathBuf, Vec<synthrad::memaudit::BundleRecord>),
}

fn manifest_for(ids: &[String], dir: &Path, offset: u64) -> DatasetManifest {
    let images = make_phantom_set(ids.len(), 16, offset).unwrap();
    let entries = ids
        .iter()
        .zip(images)
        .map(|(id, mut img)| {
            img.meta.source_id = id.clone();
            let name = format!("{id}.png");
            save_png(&img, dir.join(&name)).unwrap();
            ManifestEntry::from_image(&img, name, 0)
        })
        .collect();
    DatasetManifest::new(entries, 0, dir).unwrap()
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let pool = |prefix: &str| (0..N_QUARTETS + 2).map(|i| format!("{prefix}-{i:03}")).collect::<Vec<_>>();
    let (real, a, b, c) = (pool("real"), pool("ckpta"), pool("ckptb"), pool("ckptc"));
    let manifests: Vec<DatasetManifest> = [&real, &a, &b, &c]
        .iter()
        .enumerate()
        .map(|(i, ids)| manifest_for(ids, &root, i as u64))
        .collect();
    let quartets = build_quartets(&real, [&a, &b, &c], N_QUARTETS, SEED).unwrap();
    let image_paths = manifests
        .iter()
        .flat_map(|m| m.entries.iter().map(|e| (e.source_id.clone(), m.resolve(e))).collect::<Vec<_>>())
        .collect();
    let pairs: Vec<SimilarPair> = (1..=3)
        .map(|rank| SimilarPair {
            rank,
            real_id: real[rank].clone(),
            synth_id: a[rank].clone(),
            cosine: 1.0 - rank as f64 * 0.01,
        })
        .collect();
    let bundle_dir = root.join("bundle");
    let records = build_review_bundle(&pairs, &manifests[0], &manifests[1], &bundle_dir).unwrap();
    Fixture {
        _dir: dir,
        root,
        quartets,
        image_paths,
        review: (bundle_dir, records),
    }
}

impl Fixture {
    fn open(&self) -> StudyService {
        StudyService::open(
            StudySetup {
                seed: SEED,
                quartets: self.quartets.clone(),
                image_paths: self.image_paths.clone(),
                review: Some(self.review.clone()),
            },
            StudyFiles::in_dir(&self.root.join("study")),
        )
        .unwrap()
    }

    fn responses_log(&self) -> Vec<u8> {
        std::fs::read(StudyFiles::in_dir(&self.root.join("study")).responses).unwrap_or_default()
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn create(app: &axum::Router, rater: &str, mode: &str) -> String {
    let (status, body) = call(app, "POST", "/api/sessions", Some(&json!({"rater_id": rater, "mode": mode}).to_string())).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    json_of(&body)["session_id"].as_str().unwrap().to_string()
}

fn answer(quartet_id: &str) -> String {
    json!({"quartet_id": quartet_id, "chosen_slot": 2, "ratings": [1, 2, 3, 4]}).to_string()
}

#[tokio::test]
async fn full_session_never_reveals_origin() {
    let fx = fixture();
    let app = router(Arc::new(Mutex::new(fx.open())));
    let sid = create(&app, "rater-a", "rating").await;
    let forbidden: Vec<String> = fx
        .quartets
        .iter()
        .flat_map(|q| q.source_ids.iter().cloned())
        .chain(["real", "ckpt", "hidden_truth", "group", "source"].map(String::from))
        .collect();

    let mut seen = Vec::new();
    loop {
        let (status, body) = call(&app, "GET", &format!("/api/session/{sid}/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        let text = String::from_utf8(body.clone()).unwrap();
        for word in &forbidden {
            assert!(!text.contains(word.as_str()), "payload leaks {word}: {text}");
        }
        let v = json_of(&body);
        if v.get("done").is_some() {
            assert_eq!(v, json!({"done": true}));
            break;
        }
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["images", "quartet_id"]);
        for token in v["images"].as_array().unwrap() {
            let (status, png) = call(&app, "GET", &format!("/api/image/{}", token.as_str().unwrap()), None).await;
            assert_eq!(status, StatusCode::OK);
            let img = decode(&png, ImageMeta::new("x", Origin::Synthetic)).unwrap();
            assert_eq!((img.width(), img.height()), (16, 16));
        }
        let qid = v["quartet_id"].as_str().unwrap().to_string();
        let (status, _) = call(&app, "POST", &format!("/api/session/{sid}/response"), Some(&answer(&qid))).await;
        assert_eq!(status, StatusCode::OK);
        seen.push(qid);
    }
    seen.sort();
    let mut all: Vec<String> = fx.quartets.iter().map(|q| q.quartet_id.clone()).collect();
    all.sort();
    assert_eq!(seen, all);
    let (_, body) = call(&app, "GET", &format!("/api/session/{sid}/progress"), None).await;
    let p = json_of(&body);
    assert_eq!((p["answered"].as_u64(), p["total"].as_u64(), p["done"].as_bool()), (Some(6), Some(6), Some(true)));
}

#[tokio::test]
async fn error_statuses() {
    let fx = fixture();
    let app = router(Arc::new(Mutex::new(fx.open())));
    let sid = create(&app, "rater-b", "rating").await;
    let submit = format!("/api/session/{sid}/response");

    let (status, body) = call(&app, "POST", &submit, Some(r#"{"quartet_id": "q000", "chosen_slot": 7, "ratings": [1, 2, 5]}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json_of(&body)["fields"], json!(["chosen_slot", "ratings"]));
    let (status, _) = call(&app, "POST", &submit, Some("not json")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = call(&app, "POST", &submit, Some(&answer("q999"))).await;
    assert_eq!((status, json_of(&body)["fields"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!(["quartet_id"])));

    let (_, body) = call(&app, "GET", &format!("/api/session/{sid}/next"), None).await;
    let current = json_of(&body)["quartet_id"].as_str().unwrap().to_string();
    let other = fx.quartets.iter().find(|q| q.quartet_id != current).unwrap().quartet_id.clone();
    let (status, _) = call(&app, "POST", &submit, Some(&answer(&other))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "POST", &submit, Some(&answer(&current))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "POST", &submit, Some(&answer(&current))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    assert_eq!(call(&app, "GET", "/api/session/nope/next", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/session/nope/progress", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/image/deadbeef", None).await.0, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/sessions", Some(r#"{"rater_id": " "}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    // Only the one accepted answer reached the log.
    assert_eq!(fx.responses_log().iter().filter(|&&b| b == b'\n').count(), 1);
}

#[test]
fn restart_replays_to_identical_state() {
    let fx = fixture();
    let mut svc = fx.open();
    let sid = svc.create_session("rater-c", Mode::Rating).unwrap().session_id;
    let other = svc.create_session("rater-d", Mode::Rating).unwrap().session_id;
    assert_ne!(sid, other);
    assert_ne!(svc.session(&sid).unwrap().order, svc.session(&other).unwrap().order);
    for _ in 0..3 {
        let NextItem::Quartet(q) = svc.next_item(&sid).unwrap() else { panic!("expected a quartet") };
        svc.submit(&sid, &serde_json::from_str(&answer(&q.quartet_id)).unwrap()).unwrap();
    }
    let before_log = fx.responses_log();
    let (progress, next) = (svc.progress(&sid).unwrap(), svc.next_item(&sid).unwrap());
    let sessions: Vec<_> = svc.sessions().cloned().collect();
    drop(svc);

    let mut svc = fx.open();
    assert_eq!(svc.sessions().cloned().collect::<Vec<_>>(), sessions);
    assert_eq!(svc.progress(&sid).unwrap(), progress);
    assert_eq!(svc.next_item(&sid).unwrap(), next);
    assert_eq!(svc.create_session("rater-c", Mode::Rating).unwrap(), progress);

    let NextItem::Quartet(q) = next else { panic!("expected a quartet") };
    svc.submit(&sid, &serde_json::from_str(&answer(&q.quartet_id)).unwrap()).unwrap();
    let after_log = fx.responses_log();
    assert!(after_log.len() > before_log.len());
    assert_eq!(&after_log[..before_log.len()], &before_log[..]);
}

#[test]
fn concurrent_raters_produce_an_analyzable_log() {
    let fx = fixture();
    let svc = Arc::new(Mutex::new(fx.open()));
    let handles: Vec<_> = (0..4)
        .map(|r| {
            let svc = Arc::clone(&svc);
            std::thread::spawn(move || {
                let rater = format!("rater-{r}");
                let sid = svc.lock().unwrap().create_session(&rater, Mode::Rating).unwrap().session_id;
                loop {
                    let mut s = svc.lock().unwrap();
                    match s.next_item(&sid).unwrap() {
                        NextItem::Quartet(q) => {
                            let body = json!({"quartet_id": q.quartet_id, "chosen_slot": 1 + r % 4, "ratings": [2, 2, 3, 1]});
                            s.submit(&sid, &body).unwrap();
                        }
                        _ => break,
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let log: Vec<ResponseRecord> =
        synthrad::jsonl::read(StudyFiles::in_dir(&fx.root.join("study")).responses).unwrap();
    assert_eq!(log.len(), 4 * N_QUARTETS);
    assert!(log.iter().all(|r| !r.timestamp.is_empty()));
    let report = analyze_study(&log, &fx.quartets).unwrap();
    assert_eq!((report.n_raters, report.n_quartets), (4, N_QUARTETS));
}

#[tokio::test]
async fn triage_sessions_review_pairs() {
    let fx = fixture();
    let app = router(Arc::new(Mutex::new(fx.open())));
    let mut sids = Vec::new();
    for reviewer in ["rev-1", "rev-2", "rev-3"] {
        sids.push(create(&app, reviewer, "triage").await);
    }
    for (i, sid) in sids.iter().enumerate() {
        let (_, body) = call(&app, "GET", &format!("/api/session/{sid}/next"), None).await;
        let v = json_of(&body);
        assert_eq!(v["pair_rank"], json!(1));
        let text = String::from_utf8(body).unwrap();
        assert!(!text.contains("real-") && !text.contains("ckpta-"), "{text}");
        let (status, png) = call(&app, "GET", &format!("/api/image/{}", v["image"].as_str().unwrap()), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(decode(&png, ImageMeta::new("p", Origin::Synthetic)).unwrap().width() == 32);

        let verdict = json!({"rank": 1, "verdict": "not_memorized"}).to_string();
        let (status, _) = call(&app, "POST", &format!("/api/session/{sid}/response"), Some(&verdict)).await;
        // Each pair takes exactly two reviewers.
        assert_eq!(status, if i < 2 { StatusCode::OK } else { StatusCode::CONFLICT });
    }
    let bad = json!({"rank": 2, "verdict": "maybe"}).to_string();
    let (status, body) = call(&app, "POST", &format!("/api/session/{}/response", sids[0]), Some(&bad)).await;
    assert_eq!((status, json_of(&body)["fields"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!(["verdict"])));
}
