//! HTTP client behaviour against a local scripted server.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gvqa_core::agents::{PromptTemplates, RemoteBackend, RetryPolicy};
use gvqa_core::paths::PathId;
use gvqa_core::{AgentSuite, Error, Session, TimeSpan, VideoMeta};
use serde_json::{json, Value};
use tiny_http::{Response, Server};

/// Serves `replies` in order (status, body), recording each request's path
/// and JSON body.
struct ScriptedServer {
    url: String,
    seen: Arc<Mutex<Vec<(String, Value)>>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl ScriptedServer {
    fn start(replies: Vec<(u16, String)>) -> Self {
        let server = Server::http("127.0.0.1:0").unwrap();
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let handle = thread::spawn(move || {
            for (status, body) in replies {
                let mut req = match server.recv_timeout(Duration::from_secs(10)) {
                    Ok(Some(r)) => r,
                    _ => return,
                };
                let mut text = String::new();
                req.as_reader().read_to_string(&mut text).unwrap();
                let parsed = serde_json::from_str(&text).unwrap_or(Value::Null);
                log.lock().unwrap().push((req.url().to_string(), parsed));
                req.respond(Response::from_string(body).with_status_code(status)).unwrap();
            }
        });
        Self {
            url,
            seen,
            handle: Some(handle),
        }
    }

    fn requests(&mut self) -> Vec<(String, Value)> {
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
        self.seen.lock().unwrap().clone()
    }
}

fn fast_retry(retries: u32) -> RetryPolicy {
    RetryPolicy {
        retries,
        backoff_base: Duration::from_millis(1),
        backoff_factor: 2.0,
        request_timeout: Duration::from_secs(5),
    }
}

fn suite(url: &str, retries: u32) -> AgentSuite {
    AgentSuite::new(Arc::new(RemoteBackend::new(url, fast_retry(retries), PromptTemplates::default())))
}

fn session() -> Session {
    Session::new("q1", VideoMeta::new("v1", 60.0).unwrap())
}

#[test]
fn ground_posts_flat_body_with_prompt() {
    let mut server = ScriptedServer::start(vec![(
        200,
        json!({"spans": [{"start": 5.0, "end": 12.0, "confidence": 0.9}]}).to_string(),
    )]);
    let agents = suite(&server.url, 0);
    let spans = agents.ground(&session(), PathId::GroundFirst, "The moment when a dog runs").unwrap();
    assert_eq!(spans.len(), 1);
    assert_eq!(spans[0].span, TimeSpan::new(5.0, 12.0).unwrap());

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let (path, body) = &requests[0];
    assert_eq!(path, "/ground");
    assert_eq!(body["video"], "v1");
    assert_eq!(body["query"], "The moment when a dog runs");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["max_frames"], 150);
    assert_eq!(body["fps"], 1.0);
    let prompt = body["prompt"].as_str().unwrap();
    assert!(prompt.contains("'The moment when a dog runs'"));
}

#[test]
fn verify_sends_span_and_zoomed_clip() {
    let mut server = ScriptedServer::start(vec![(200, json!({"logit_yes": 2.0, "logit_no": -1.0}).to_string())]);
    let agents = suite(&server.url, 0);
    let span = TimeSpan::new(10.0, 20.0).unwrap();
    let clip = TimeSpan::new(7.5, 22.5).unwrap();
    let logits = agents.verify(&session(), PathId::Joint, "q", span, clip).unwrap();
    assert_eq!(logits, (2.0, -1.0));

    let (path, body) = &server.requests()[0];
    assert_eq!(path, "/verify");
    assert_eq!(body["span"], json!([10.0, 20.0]));
    assert_eq!(body["clip"], json!([7.5, 22.5]));
    assert_eq!(body["max_frames"], 64);
    assert_eq!(body["fps"], 2.0);
}

#[test]
fn answerer_has_no_prompt_by_default() {
    let mut server = ScriptedServer::start(vec![(200, json!({"option_index": 1}).to_string())]);
    let agents = suite(&server.url, 0);
    let options = vec!["run".to_string(), "jump".to_string()];
    let choice = agents.answer(&session(), PathId::AnswerFirst, "What?", &options, None).unwrap();
    assert_eq!(choice.option_index, 1);
    assert_eq!(choice.option_text, "jump");

    let (path, body) = &server.requests()[0];
    assert_eq!(path, "/answer");
    assert!(body.get("prompt").is_none());
    assert_eq!(body["max_tokens"], 256);
}

#[test]
fn server_errors_and_garbage_are_retried() {
    let mut server = ScriptedServer::start(vec![
        (503, "busy".into()),
        (200, "not json".into()),
        (200, json!({"option_index": 0, "spans": []}).to_string()),
    ]);
    let agents = suite(&server.url, 3);
    let options = vec!["a".to_string()];
    let (choice, spans) = agents.gqa(&session(), PathId::Joint, "Why?", &options).unwrap();
    assert_eq!(choice.option_index, 0);
    assert!(spans.is_empty());
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn exhausted_retries_surface_as_transport_error() {
    let mut server = ScriptedServer::start(vec![(500, "boom".into()), (502, "boom".into())]);
    let agents = suite(&server.url, 1);
    let s = session();
    let err = agents.ground(&s, PathId::GroundFirst, "x").unwrap_err();
    match err {
        Error::Transport { endpoint, message, .. } => {
            assert_eq!(endpoint, "/ground");
            assert!(message.contains("HTTP 502"), "{message}");
            assert!(message.contains("2 attempts"), "{message}");
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(server.requests().len(), 2);

    let transcript = s.take_transcript();
    assert_eq!(transcript.len(), 1);
    assert!(transcript[0].response.is_none());
    assert!(transcript[0].error.as_deref().unwrap().contains("HTTP 502"));
}

#[test]
fn out_of_range_option_is_malformed() {
    let mut server = ScriptedServer::start(vec![(200, json!({"option_index": 7}).to_string())]);
    let agents = suite(&server.url, 0);
    let options = vec!["a".to_string(), "b".to_string()];
    let err = agents.answer(&session(), PathId::AnswerFirst, "q", &options, None).unwrap_err();
    assert!(matches!(err, Error::MalformedResponse { .. }), "{err:?}");
    server.requests();
}

#[test]
fn unreachable_server_is_transport_error() {
    // Bind then drop to get a port with nothing listening.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let agents = suite(&format!("http://127.0.0.1:{port}"), 1);
    let err = agents.ground(&session(), PathId::GroundFirst, "x").unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err:?}");
}
