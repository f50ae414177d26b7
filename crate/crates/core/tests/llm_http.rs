//! The HTTP completion client against an in-process mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use trialrl::env::{Action, Direction, TaskInstance};
use trialrl::harness::llm_http::{http_policy, HttpClient};
use trialrl::harness::LlmConfig;
use trialrl::memory::{MemoryMode, MemoryState};
use trialrl::policy::llm::{CompletionClient, CompletionRequest};
use trialrl::rng::stream;
use trialrl::rollout::run_episode;

enum Reply {
    Content(&'static str),
    Status(u16),
    Hang,
}

struct Mock {
    base_url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

/// Serves `reply(n)` to the n-th request (0-based).
fn serve(reply: fn(usize) -> Reply) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let n = h.fetch_add(1, Ordering::SeqCst);
            let b = b.clone();
            thread::spawn(move || handle(stream, reply(n), &b));
        }
    });
    Mock { base_url: format!("http://{addr}/v1"), hits, bodies }
}

fn handle(stream: TcpStream, reply: Reply, bodies: &std::sync::Mutex<Vec<Value>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    bodies.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
    let (status, text) = match reply {
        Reply::Content(c) => (200, json!({"choices": [{"message": {"role": "assistant", "content": c}}]}).to_string()),
        Reply::Status(s) => (s, "{}".to_string()),
        Reply::Hang => {
            thread::sleep(Duration::from_secs(5));
            return;
        }
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

fn config(mock: &Mock) -> LlmConfig {
    LlmConfig {
        base_url: mock.base_url.clone(),
        model: "mock".into(),
        timeout_secs: 2.0,
        retries: 2,
        ..LlmConfig::default()
    }
}

fn request() -> CompletionRequest {
    CompletionRequest { system: "sys".into(), user: "usr".into(), max_tokens: 1024, temperature: 0.7, stop: Vec::new() }
}

#[test]
fn echoed_action_reaches_the_episode() {
    let mock = serve(|_| Reply::Content("Moving on.<action>up</action>"));
    let policy = http_policy(&config(&mock)).unwrap();
    let task = TaskInstance::sokoban(6, 1, 3).with_max_steps(1);
    let memory = MemoryState::new(MemoryMode::Both);
    let episode = run_episode(&task, &policy, 0, &memory, 1.0, &mut stream(0, &[1])).unwrap();
    assert_eq!(episode.aborted, None);
    assert_eq!(episode.actions(), vec![Action::Move(Direction::Up)]);
    let body = &mock.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "mock");
    assert_eq!(body["max_tokens"], 1024);
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("within <action> </action> tags"));
}

#[test]
fn malformed_replies_exhaust_and_abort_the_episode() {
    let mock = serve(|_| Reply::Content("I am not sure what to do."));
    let policy = http_policy(&config(&mock)).unwrap();
    let task = TaskInstance::minesweeper(4, 2, 1);
    let memory = MemoryState::new(MemoryMode::Both);
    let episode = run_episode(&task, &policy, 0, &memory, 1.0, &mut stream(0, &[1])).unwrap();
    assert!(episode.steps.is_empty());
    assert!(!episode.success);
    assert!(episode.aborted.as_deref().unwrap().contains("malformed"));
    // One query plus the configured re-queries.
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1 + policy.malformed_retries);
}

#[test]
fn timeout_reports_the_attempt_count() {
    let mock = serve(|_| Reply::Hang);
    let cfg = LlmConfig { timeout_secs: 0.2, retries: 1, ..config(&mock) };
    let client = HttpClient::from_config(&cfg).unwrap().with_backoff(Duration::from_millis(10));
    let err = client.complete(&request()).unwrap_err();
    assert_eq!(err.attempts, 2);
}

#[test]
fn server_errors_are_retried_with_backoff() {
    let mock = serve(|n| if n < 2 { Reply::Status(503) } else { Reply::Content("<action>left</action>") });
    let client = HttpClient::from_config(&config(&mock)).unwrap().with_backoff(Duration::from_millis(10));
    assert_eq!(client.complete(&request()).unwrap(), "<action>left</action>");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let mock = serve(|_| Reply::Status(400));
    let client = HttpClient::from_config(&config(&mock)).unwrap().with_backoff(Duration::from_millis(10));
    let err = client.complete(&request()).unwrap_err();
    assert_eq!(err.attempts, 1);
    assert!(err.message.contains("400"));
}

#[test]
fn api_key_is_sent_as_bearer_token() {
    // The variable name is unique to this test.
    std::env::set_var("TRIALRL_MOCK_KEY", "sekret");
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut auth = None;
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end().to_string();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("authorization") {
                    auth = Some(v.trim().to_string());
                }
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let text = json!({"choices": [{"message": {"content": "ok"}}]}).to_string();
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}", text.len()).unwrap();
        auth
    });
    let cfg = LlmConfig {
        base_url: format!("http://{addr}/v1"),
        api_key_env: "TRIALRL_MOCK_KEY".into(),
        ..LlmConfig::default()
    };
    assert_eq!(HttpClient::from_config(&cfg).unwrap().complete(&request()).unwrap(), "ok");
    assert_eq!(server.join().unwrap().as_deref(), Some("Bearer sekret"));
}

#[test]
fn llm_backend_has_no_coin_prompts() {
    let mock = serve(|_| Reply::Content("<action>1</action>"));
    let policy = http_policy(&config(&mock)).unwrap();
    let task = TaskInstance::coin(4, 1, 0);
    let memory = MemoryState::new(MemoryMode::Both);
    let episode = run_episode(&task, &policy, 0, &memory, 1.0, &mut stream(0, &[1])).unwrap();
    assert!(episode.aborted.is_some());
    assert_eq!(mock.hits.load(Ordering::SeqCst), 0);
}
