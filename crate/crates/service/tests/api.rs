use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use rnr_core::corpus::{Corpus, Dialogue, Speaker, Split, Turn, Vocab};
use rnr_core::retnref::{responder_registry, Flag, Reply, Responder, Trace, Turns};
use rnr_service::study::{Choice, Event, Item, ModelResponse, PrefixTurn, StudySpec};
use rnr_service::{router, AppState, ServiceConfig};

/// Canned reply; when `copies`, flags a copy for history lengths 1, 5, 9...
struct Canned {
    text: &'static str,
    copies: bool,
}

impl Responder for Canned {
    fn respond(&self, turns: &Turns) -> rnr_core::Result<Reply> {
        let copied = self.copies && turns.history.len() % 4 == 1;
        Ok(Reply {
            tokens: Vec::new(),
            text: self.text.to_string(),
            trace: Trace {
                retrieved: Vec::new(),
                retrieved_text: copied.then(|| self.text.to_string()),
                retrieval_score: None,
                generated: Vec::new(),
                overlap: copied.then_some(1.0),
                flag: if copied { Flag::Copied } else { Flag::Generated },
            },
        })
    }
}

const MODEL_A: &str = "retnref++";
const MODEL_B: &str = "s2s";
const REPLY_A: &str = "sounds good to me";
const REPLY_B: &str = "not really";

fn corpus(dialogues: usize) -> Corpus {
    let dialogues = (0..dialogues)
        .map(|i| Dialogue {
            persona_self: vec![format!("i have {i} cats ."), "i like tea .".into()],
            persona_partner: vec![format!("i am {i} years old .")],
            turns: (0..6)
                .map(|t| {
                    let sp = if t % 2 == 0 { Speaker::P1 } else { Speaker::P2 };
                    Turn::new(sp, &format!("turn {t} of chat {i}"))
                })
                .collect(),
        })
        .collect();
    Corpus {
        dialogues,
        split: Split::Test,
    }
}

fn state(dir: Option<&std::path::Path>) -> Arc<AppState> {
    let c = corpus(100);
    let vocab = Vocab::build(&Corpus { split: Split::Train, ..c.clone() }, 1).unwrap();
    let mut models = responder_registry();
    models.register(MODEL_A, Arc::new(Canned { text: REPLY_A, copies: true }));
    models.register(MODEL_B, Arc::new(Canned { text: REPLY_B, copies: false }));
    let config = ServiceConfig {
        state_dir: dir.map(|d| d.to_path_buf()),
        ..ServiceConfig::default()
    };
    let mut corpora = HashMap::new();
    corpora.insert("test".to_string(), c.clone());
    corpora.insert(
        "small".to_string(),
        Corpus {
            dialogues: c.dialogues[..10].to_vec(),
            split: Split::Test,
        },
    );
    Arc::new(AppState::new(config, Arc::new(vocab), models, c.personas(), corpora).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

fn assert_error(got: &(StatusCode, Value), status: StatusCode, code: &str) {
    assert_eq!(got.0, status, "{}", got.1);
    assert_eq!(got.1["code"], code, "{}", got.1);
    assert!(got.1["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn chat_session_lifecycle() {
    let app = router(state(None));
    let (s, v) = call(&app, "POST", "/v1/chat/sessions", Some(json!({"variant": MODEL_A, "seed": 3}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["session_id"].as_str().unwrap().to_string();
    assert!(!v["persona"].as_array().unwrap().is_empty());

    let uri = format!("/v1/chat/sessions/{id}/messages");
    let (s, v) = call(&app, "POST", &uri, Some(json!({"text": "hi there"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["reply"], REPLY_A);
    assert_eq!(v["history_len"], 2);
    for _ in 0..2 {
        call(&app, "POST", &uri, Some(json!({"text": "and you ?"}))).await;
    }
    let (_, v) = call(&app, "GET", &format!("/v1/chat/sessions/{id}"), None).await;
    let hist = v["history"].as_array().unwrap();
    assert_eq!(hist.len(), 6);
    for (i, t) in hist.iter().enumerate() {
        assert_eq!(t["role"], if i % 2 == 0 { "human" } else { "model" });
        assert_eq!(t.get("trace").is_some(), i % 2 == 1);
    }
    let flags: Vec<&str> = hist.iter().filter_map(|t| t["trace"]["flag"].as_str()).collect();
    assert!(flags.contains(&"copied") && flags.contains(&"generated"));

    assert_error(&call(&app, "POST", &uri, Some(json!({"text": "  "}))).await, StatusCode::BAD_REQUEST, "empty_text");
    assert_error(
        &call(&app, "POST", "/v1/chat/sessions/nope/messages", Some(json!({"text": "x"}))).await,
        StatusCode::NOT_FOUND,
        "unknown_session",
    );
}

#[tokio::test]
async fn unknown_variant_and_bad_bodies() {
    let app = router(state(None));
    assert_error(
        &call(&app, "POST", "/v1/chat/sessions", Some(json!({"variant": "foo"}))).await,
        StatusCode::BAD_REQUEST,
        "unknown_variant",
    );
    assert_error(&call(&app, "POST", "/v1/chat/sessions", Some(json!({"seed": 1}))).await, StatusCode::BAD_REQUEST, "invalid_request");
    assert_error(&call(&app, "GET", "/v1/nothing", None).await, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn same_seed_same_persona() {
    let app = router(state(None));
    let mut seen = HashSet::new();
    for seed in 0..20u64 {
        let (_, a) = call(&app, "POST", "/v1/chat/sessions", Some(json!({"variant": MODEL_B, "seed": seed}))).await;
        let (_, b) = call(&app, "POST", "/v1/chat/sessions", Some(json!({"variant": MODEL_B, "seed": seed}))).await;
        assert_eq!(a["persona"], b["persona"]);
        assert_ne!(a["session_id"], b["session_id"]);
        seen.insert(a["persona"].to_string());
    }
    assert!(seen.len() > 1);
}

#[tokio::test]
async fn scores_are_gated_and_validated() {
    let app = router(state(None));
    let (_, v) = call(&app, "POST", "/v1/chat/sessions", Some(json!({"variant": MODEL_A}))).await;
    let id = v["session_id"].as_str().unwrap();
    let uri = format!("/v1/chat/sessions/{id}/scores");
    let good = json!({"engagingness": 4, "fluency": 5, "consistency": 3, "persona_pick": 1});
    assert_error(&call(&app, "POST", &uri, Some(good.clone())).await, StatusCode::CONFLICT, "too_few_turns");
    call(&app, "POST", &format!("/v1/chat/sessions/{id}/messages"), Some(json!({"text": "hello"}))).await;
    let bad = json!({"engagingness": 7, "fluency": 5, "consistency": 3, "persona_pick": 1});
    assert_error(&call(&app, "POST", &uri, Some(bad)).await, StatusCode::BAD_REQUEST, "invalid_score");
    assert_eq!(call(&app, "POST", &uri, Some(good.clone())).await.0, StatusCode::OK);
    let (_, v) = call(&app, "GET", &format!("/v1/chat/sessions/{id}"), None).await;
    assert_eq!(v["scores"][0], good);
}

async fn new_study(app: &Router, corpus: &str, jpi: usize, seed: u64) -> String {
    let body = json!({"model_a": MODEL_A, "model_b": MODEL_B, "corpus": corpus, "judgments_per_item": jpi, "seed": seed});
    let (s, v) = call(app, "POST", "/v1/ab/studies", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["study_id"].as_str().unwrap().to_string()
}

/// Serves and judges until every annotator sees `complete`; returns the
/// served (annotator, item) pairs in order.
async fn exhaust(app: &Router, id: &str, annotators: &[&str], choice: impl Fn(&Value) -> &'static str) -> Vec<(String, u64)> {
    let mut served = Vec::new();
    let mut done = HashSet::new();
    while done.len() < annotators.len() {
        for a in annotators {
            let (_, v) = call(app, "GET", &format!("/v1/ab/studies/{id}/next?annotator={a}"), None).await;
            if v["status"] == "complete" {
                done.insert(*a);
                continue;
            }
            let item = &v["item"];
            let item_id = item["item_id"].as_u64().unwrap();
            served.push((a.to_string(), item_id));
            let body = json!({"item_id": item_id, "annotator": a, "choice": choice(item)});
            let (s, v) = call(app, "POST", &format!("/v1/ab/studies/{id}/judgments"), Some(body)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
    }
    served
}

#[tokio::test]
async fn ten_items_two_judgments_is_twenty_servings() {
    let app = router(state(None));
    let id = new_study(&app, "small", 2, 1).await;
    let served = exhaust(&app, &id, &["ann1", "ann2", "ann3"], |_| "A").await;
    assert_eq!(served.len(), 20);
    let unique: HashSet<_> = served.iter().collect();
    assert_eq!(unique.len(), 20, "an annotator saw an item twice");
    let (_, v) = call(&app, "GET", &format!("/v1/ab/studies/{id}/next?annotator=ann4"), None).await;
    assert_eq!(v["status"], "complete");
    assert_eq!(v["progress"], json!({"judged": 20, "total": 20}));
}

#[tokio::test]
async fn pending_item_is_served_again() {
    let app = router(state(None));
    let id = new_study(&app, "small", 1, 1).await;
    let uri = format!("/v1/ab/studies/{id}/next?annotator=x");
    let (_, a) = call(&app, "GET", &uri, None).await;
    let (_, b) = call(&app, "GET", &uri, None).await;
    assert_eq!(a["item"], b["item"]);
    assert_error(&call(&app, "GET", &format!("/v1/ab/studies/{id}/next"), None).await, StatusCode::BAD_REQUEST, "invalid_request");
}

#[tokio::test]
async fn side_order_is_balanced() {
    let app = router(state(None));
    let mut a_first = 0;
    let id = new_study(&app, "test", 2, 9).await;
    let mut count = 0;
    for ann in ["p", "q"] {
        loop {
            let (_, v) = call(&app, "GET", &format!("/v1/ab/studies/{id}/next?annotator={ann}"), None).await;
            if v["status"] == "complete" {
                break;
            }
            count += 1;
            a_first += usize::from(v["item"]["response_a"] == REPLY_A);
            let body = json!({"item_id": v["item"]["item_id"], "annotator": ann, "choice": "unsure"});
            call(&app, "POST", &format!("/v1/ab/studies/{id}/judgments"), Some(body)).await;
        }
    }
    assert_eq!(count, 200);
    let share = a_first as f64 / 200.0;
    assert!((0.4..=0.6).contains(&share), "{share}");
}

#[tokio::test]
async fn judgment_errors_and_idempotency() {
    let app = router(state(None));
    let id = new_study(&app, "small", 2, 1).await;
    let post = |body: Value| {
        let app = app.clone();
        let uri = format!("/v1/ab/studies/{id}/judgments");
        async move { call(&app, "POST", &uri, Some(body)).await }
    };
    assert_error(&post(json!({"item_id": 0, "annotator": "z", "choice": "A"})).await, StatusCode::CONFLICT, "not_served");
    let (_, v) = call(&app, "GET", &format!("/v1/ab/studies/{id}/next?annotator=z"), None).await;
    let item = v["item"]["item_id"].clone();
    let (s, v) = post(json!({"item_id": item, "annotator": "z", "choice": "B"})).await;
    assert_eq!((s, v["status"].clone(), v["judgments"].clone()), (StatusCode::OK, json!("recorded"), json!(1)));
    let (_, v) = post(json!({"item_id": item, "annotator": "z", "choice": "B"})).await;
    assert_eq!((v["status"].clone(), v["judgments"].clone()), (json!("duplicate"), json!(1)));
    assert_error(&post(json!({"item_id": item, "annotator": "z", "choice": "A"})).await, StatusCode::CONFLICT, "already_judged");
    assert_error(&post(json!({"item_id": item, "annotator": "z", "choice": "C"})).await, StatusCode::BAD_REQUEST, "invalid_choice");
    assert_error(&post(json!({"item_id": 999, "annotator": "z", "choice": "A"})).await, StatusCode::NOT_FOUND, "unknown_item");
    assert_error(
        &call(&app, "GET", "/v1/ab/studies/nope/results", None).await,
        StatusCode::NOT_FOUND,
        "unknown_study",
    );
}

#[tokio::test]
async fn study_creation_errors() {
    let app = router(state(None));
    let mk = |a: &str, b: &str, c: &str, j: usize| json!({"model_a": a, "model_b": b, "corpus": c, "judgments_per_item": j});
    assert_error(&call(&app, "POST", "/v1/ab/studies", Some(mk("x", MODEL_B, "test", 2))).await, StatusCode::BAD_REQUEST, "unknown_model");
    assert_error(&call(&app, "POST", "/v1/ab/studies", Some(mk(MODEL_A, MODEL_B, "x", 2))).await, StatusCode::BAD_REQUEST, "unknown_corpus");
    assert_error(&call(&app, "POST", "/v1/ab/studies", Some(mk(MODEL_A, MODEL_A, "test", 2))).await, StatusCode::BAD_REQUEST, "invalid_request");
    assert_error(&call(&app, "POST", "/v1/ab/studies", Some(mk(MODEL_A, MODEL_B, "test", 0))).await, StatusCode::BAD_REQUEST, "invalid_request");
}

#[tokio::test]
async fn all_unsure_has_no_result() {
    let app = router(state(None));
    let id = new_study(&app, "small", 1, 1).await;
    exhaust(&app, &id, &["u"], |_| "unsure").await;
    let got = call(&app, "GET", &format!("/v1/ab/studies/{id}/results"), None).await;
    assert_error(&got, StatusCode::UNPROCESSABLE_ENTITY, "no_decisive_judgments");
    assert!(got.1["message"].as_str().unwrap().contains("no decisive judgments"));
}

#[tokio::test]
async fn results_unmap_positions_and_split_by_flag() {
    let app = router(state(None));
    let id = new_study(&app, "test", 1, 4).await;
    // Always pick the reply of model A, whichever side it is on.
    exhaust(&app, &id, &["k"], |item| if item["response_a"] == REPLY_A { "A" } else { "B" }).await;
    let (s, r) = call(&app, "GET", &format!("/v1/ab/studies/{id}/results"), None).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["overall"]["a_wins"], 100);
    assert_eq!(r["overall"]["b_wins"], 0);
    assert_eq!(r["overall"]["win_rate"], 1.0);
    let rows = r["by_flag"].as_array().unwrap();
    let sum = |k: &str| rows.iter().map(|x| x[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(sum("a_wins"), 100);
    assert_eq!(sum("b_wins") + sum("ties"), 0);
    assert!(rows.iter().all(|x| x["a_wins"].as_u64().unwrap() > 0));
    let (_, again) = call(&app, "GET", &format!("/v1/ab/studies/{id}/results"), None).await;
    assert_eq!(r, again);
}

fn contains_string(v: &Value, needle: &str) -> bool {
    match v {
        Value::String(s) => s.contains(needle),
        Value::Array(xs) => xs.iter().any(|x| contains_string(x, needle)),
        Value::Object(m) => m.iter().any(|(k, x)| k.contains(needle) || contains_string(x, needle)),
        _ => false,
    }
}

#[tokio::test]
async fn ab_payloads_never_name_models() {
    let app = router(state(None));
    let body = json!({"model_a": MODEL_A, "model_b": MODEL_B, "corpus": "small", "judgments_per_item": 2, "seed": 5});
    let (_, created) = call(&app, "POST", "/v1/ab/studies", Some(body)).await;
    let id = created["study_id"].as_str().unwrap().to_string();
    let mut payloads = vec![created];
    for ann in ["a1", "a2"] {
        loop {
            let (_, v) = call(&app, "GET", &format!("/v1/ab/studies/{id}/next?annotator={ann}"), None).await;
            payloads.push(v.clone());
            if v["status"] == "complete" {
                break;
            }
            let item = &v["item"];
            let keys: HashSet<&str> = item.as_object().unwrap().keys().map(String::as_str).collect();
            assert_eq!(keys, HashSet::from(["item_id", "prefix", "response_a", "response_b"]));
            for t in item["prefix"].as_array().unwrap() {
                let keys: HashSet<&str> = t.as_object().unwrap().keys().map(String::as_str).collect();
                assert_eq!(keys, HashSet::from(["speaker", "text"]));
            }
            let body = json!({"item_id": item["item_id"], "annotator": ann, "choice": "A"});
            let (_, ack) = call(&app, "POST", &format!("/v1/ab/studies/{id}/judgments"), Some(body)).await;
            payloads.push(ack);
        }
    }
    for p in &payloads {
        for needle in [MODEL_A, MODEL_B, "model", "flag", "copied", "generated", "swapped", "retriev"] {
            assert!(!contains_string(p, needle), "`{needle}` in {p}");
        }
    }
}

fn injected_log(a_wins: u64, b_wins: u64, ties: u64) -> String {
    let n = (a_wins + b_wins + ties) as usize;
    let items: Vec<Item> = (0..n)
        .map(|i| Item {
            item_id: i,
            dialogue_id: i,
            prefix: vec![PrefixTurn {
                speaker: Speaker::P1,
                text: "hello".into(),
            }],
            first: ModelResponse {
                text: REPLY_A.into(),
                flag: if i % 3 == 0 { Flag::Copied } else { Flag::Generated },
            },
            second: ModelResponse {
                text: REPLY_B.into(),
                flag: Flag::Generated,
            },
        })
        .collect();
    let spec = StudySpec {
        model_a: MODEL_A.into(),
        model_b: MODEL_B.into(),
        corpus: "test".into(),
        judgments_per_item: 1,
        seed: 0,
    };
    let mut lines = vec![Event::Created {
        study_id: "study-7".into(),
        spec,
        items,
    }];
    for i in 0..n {
        let swapped = i % 2 == 1;
        let wanted = if (i as u64) < a_wins {
            Some(true)
        } else if (i as u64) < a_wins + b_wins {
            Some(false)
        } else {
            None
        };
        let choice = match wanted {
            None => Choice::Unsure,
            Some(a) if a != swapped => Choice::A,
            Some(_) => Choice::B,
        };
        let annotator = format!("w{}", i % 13);
        lines.push(Event::Served {
            item_id: i,
            annotator: annotator.clone(),
            swapped,
        });
        lines.push(Event::Judged {
            item_id: i,
            annotator,
            choice,
            timestamp: "2018-01-01T00:00:00.000Z".into(),
        });
    }
    lines.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect()
}

#[tokio::test]
async fn injected_log_reproduces_published_statistics() {
    for (a, b, t, rate, p) in [(340, 284, 572, 0.545, 0.027), (571, 492, 203, 0.537, 0.016)] {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("studies")).unwrap();
        std::fs::write(dir.path().join("studies/study-7.jsonl"), injected_log(a, b, t)).unwrap();
        let app = router(state(Some(dir.path())));
        let (s, r) = call(&app, "GET", "/v1/ab/studies/study-7/results", None).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!((r["overall"]["a_wins"].as_u64(), r["overall"]["b_wins"].as_u64(), r["overall"]["ties"].as_u64()), (Some(a), Some(b), Some(t)));
        assert!((r["overall"]["win_rate"].as_f64().unwrap() - rate).abs() <= 0.001, "{r}");
        assert!((r["overall"]["p_value"].as_f64().unwrap() - p).abs() <= 0.002, "{r}");
        let rows = r["by_flag"].as_array().unwrap();
        for k in ["a_wins", "b_wins", "ties"] {
            let s: u64 = rows.iter().map(|x| x[k].as_u64().unwrap()).sum();
            assert_eq!(s, r["overall"][k].as_u64().unwrap());
        }
        // New studies do not collide with replayed ids.
        let id = new_study(&app, "small", 1, 0).await;
        assert_eq!(id, "study-8");
    }
}

#[tokio::test]
async fn replayed_log_gives_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let app = router(state(Some(dir.path())));
        let id = new_study(&app, "test", 2, 11).await;
        exhaust(&app, &id, &["r1", "r2"], |item| if item["item_id"].as_u64().unwrap() % 3 == 0 { "B" } else { "A" }).await;
        let (_, r) = call(&app, "GET", &format!("/v1/ab/studies/{id}/results"), None).await;
        (id, r)
    };
    // A torn final write is ignored on replay.
    let log = dir.path().join(format!("studies/{id}.jsonl"));
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"event\":\"judged\",\"item");
    std::fs::write(&log, text).unwrap();
    let app = router(state(Some(dir.path())));
    let (s, after) = call(&app, "GET", &format!("/v1/ab/studies/{id}/results"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    let sessions = std::fs::metadata(dir.path().join("sessions.jsonl")).unwrap();
    assert_eq!(sessions.len(), 0);
}
