//! Minimal HTTP server that answers chat requests from a script of status
//! codes, for exercising the client's retry policy without a network.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use ilsim::agent::chat::{chat_call, ChatDecoding, ChatEndpoint, ChatError, ChatMessage, HttpTransport, Role};

pub const KEY_ENV: &str = "ILSIM_STUB_KEY";

pub const OK_BODY: &str = r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"Rule: {A:on, B:off, screen:und}"},"finish_reason":"stop"}]}"#;

pub struct Stub {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

/// Serves `statuses` in order, one per connection; requests past the end
/// get the last status again.
pub fn serve(statuses: Vec<u16>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; length];
            let _ = reader.read_exact(&mut body);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let status = statuses[n.min(statuses.len() - 1)];
            let payload =
                if status == 200 { OK_BODY.to_string() } else { format!("{{\"error\":\"status {status}\"}}") };
            let reply = format!(
                "HTTP/1.1 {status} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Stub { url, hits }
}

pub fn endpoint(url: &str) -> ChatEndpoint {
    std::env::set_var(KEY_ENV, "test-key");
    let mut e = ChatEndpoint::new(url, "stub-model");
    e.api_key_env = KEY_ENV.into();
    e.max_attempts = 4;
    e.backoff_ms = 5;
    e.max_backoff_ms = 20;
    e.timeout_secs = 5;
    e
}

pub fn call(url: &str) -> Result<String, ChatError> {
    let mut client = HttpTransport::new(endpoint(url), None)?;
    let messages = [ChatMessage::new(Role::User, "What is the rule?")];
    let ex = chat_call(&mut client, &messages, &ChatDecoding { temperature: 0.1, top_logprobs: None })?;
    Ok(ex.reply().unwrap_or_default().to_string())
}

/// 429 then 200 succeeds on the second request; persistent 5xx gives up
/// after every attempt; 401 and 400 fail at once; a dead port is a
/// transport failure after every attempt.
pub fn retry_contract() -> Result<(), String> {
    let check =
        |name: &str, statuses: Vec<u16>, want_hits: usize, want: &dyn Fn(&Result<String, ChatError>) -> bool| {
            let stub = serve(statuses);
            let got = call(&stub.url);
            let hits = stub.hits.load(Ordering::SeqCst);
            if hits != want_hits || !want(&got) {
                return Err(format!("{name}: {hits} requests, result {got:?}"));
            }
            Ok(())
        };
    check("429 then 200", vec![429, 200], 2, &|r| r.as_deref() == Ok("Rule: {A:on, B:off, screen:und}"))?;
    check("503 twice then 200", vec![503, 503, 200], 3, &|r| r.is_ok())?;
    check("persistent 500", vec![500], 4, &|r| matches!(r, Err(ChatError::Server { status: 500, attempts: 4 })))?;
    check("persistent 429", vec![429], 4, &|r| matches!(r, Err(ChatError::RateLimited(4))))?;
    check("401", vec![401, 200], 1, &|r| matches!(r, Err(ChatError::Auth(401))))?;
    check("400", vec![400, 200], 1, &|r| matches!(r, Err(ChatError::Rejected { status: 400, .. })))?;

    let dead = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", dead.local_addr().unwrap());
    drop(dead);
    match call(&url) {
        Err(ChatError::Transport { attempts: 4, .. }) => Ok(()),
        other => Err(format!("dead port: {other:?}")),
    }
}
