mod common;

use std::sync::mpsc;
use std::time::Duration;

use common::{copy_dir, fixture_dir};
use labelfuse::config::PipelineConfig;
use labelfuse::{pipeline, server};
use serde_json::{json, Value};

struct Api {
    base: String,
    agent: ureq::Agent,
    _dir: tempfile::TempDir,
}

impl Api {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&fixture_dir(), dir.path()).unwrap();
        let cfg = PipelineConfig::load(&dir.path().join("labelfuse.toml"), Some(dir.path())).unwrap();
        pipeline::cmd_unify(&cfg).unwrap();
        pipeline::cmd_fuse(&cfg).unwrap();
        let (state, added) = pipeline::prepare_serve(&cfg, &pipeline::store_dir(&cfg, None)).unwrap();
        assert_eq!(added, 4);
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, server::router(state)).await.unwrap();
            });
        });
        let addr = rx.recv_timeout(Duration::from_secs(10)).unwrap();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { base: format!("http://{addr}"), agent, _dir: dir }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }

    fn decide(&self, id: &str, body: Value) -> (u16, Value) {
        let mut r = self.agent.post(format!("{}/api/items/{id}/decision", self.base)).send_json(body).unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }
}

#[test]
fn listing_paging_and_filters() {
    let api = Api::start();
    let (s, page) = api.get("/api/items?limit=3");
    assert_eq!(s, 200);
    assert_eq!(page["total"], 4);
    assert_eq!(page["items"].as_array().unwrap().len(), 3);
    let (_, rest) = api.get("/api/items?offset=3");
    assert_eq!(rest["items"][0]["item_id"], "rural-00000001");
    assert_eq!(api.get("/api/items?limit=0").0, 400);
    assert_eq!(api.get("/api/items?limit=501").0, 400);
    assert_eq!(api.get("/api/items?status=bogus").0, 400);
    assert_eq!(api.get("/api/items?offset=-1").0, 400);

    let (s, item) = api.get("/api/items/city-00000000");
    assert_eq!(s, 200);
    assert_eq!(item["category_name"], "rider");
    assert_eq!(item["status"]["status"], "pending");
    assert!(item["image_url"].as_str().unwrap().starts_with("/api/images/city/"));
    assert_eq!(api.get("/api/items/nope").0, 404);

    let (_, space) = api.get("/api/labelspace");
    let names: Vec<&str> = space.as_array().unwrap().iter().map(|c| c["canonical_name"].as_str().unwrap()).collect();
    assert_eq!(names, ["car", "person", "rider"]);
}

#[test]
fn decisions_and_errors() {
    let api = Api::start();
    assert_eq!(api.decide("city-00000000", json!({"action": "relabel", "category_id": 99, "actor": "a"})).0, 422);
    assert_eq!(api.decide("city-00000000", json!({"action": "adjust", "bbox": [60, 40, 30, 30], "actor": "a"})).0, 422);
    assert_eq!(api.decide("city-00000000", json!({"action": "shrug", "actor": "a"})).0, 422);
    assert_eq!(api.decide("city-00000000", json!({"action": "accept"})).0, 422);
    assert_eq!(api.decide("nope", json!({"action": "accept", "actor": "a"})).0, 404);

    let (s, item) = api.decide("city-00000000", json!({"action": "accept", "actor": "a"}));
    assert_eq!(s, 200);
    assert_eq!(item["status"]["status"], "accepted");
    assert_eq!(item["decided_by"], "a");
    let (s, err) = api.decide("city-00000000", json!({"action": "reject", "actor": "b"}));
    assert_eq!(s, 409);
    assert_eq!(err["error"], "already_decided");

    let (_, stats) = api.get("/api/stats");
    assert_eq!(stats["statuses"]["accepted"], 1);
    assert_eq!(stats["statuses"]["pending"], 3);
    assert_eq!(stats["total"], 4);
    assert_eq!(stats["fusion"]["routes"]["needs_review"], 4);
    let (_, accepted) = api.get("/api/items?status=accepted");
    assert_eq!(accepted["total"], 1);
}

#[test]
fn images_are_confined_to_their_roots() {
    let api = Api::start();
    let r = api.agent.get(format!("{}/api/images/city/1", api.base)).call().unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers().get("content-type").unwrap(), "image/png");
    assert_eq!(api.get("/api/images/city/999").0, 404);
    assert_eq!(api.get("/api/images/nowhere/1").0, 404);
    assert_eq!(api.get("/api/images/city/..%2F..%2Fetc%2Fpasswd").0, 403);
}
