//! Minimal HTTP/1.1 stub server for exercising the remote backend.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

#[derive(Debug, Clone)]
pub struct StubRequest {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

impl StubRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub type Handler = dyn Fn(&StubRequest, usize) -> (u16, String) + Send + Sync;

pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
}

/// Serves every connection on its own thread. The handler receives the
/// request and its zero-based arrival index.
pub fn serve(handler: impl Fn(&StubRequest, usize) -> (u16, String) + Send + Sync + 'static) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let max_in_flight = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::new(handler);
    {
        let requests = requests.clone();
        let max_in_flight = max_in_flight.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let requests = requests.clone();
                let in_flight = in_flight.clone();
                let max_in_flight = max_in_flight.clone();
                thread::spawn(move || {
                    let _ = handle(stream, &*handler, &requests, &in_flight, &max_in_flight);
                });
            }
        });
    }
    StubServer {
        base_url,
        requests,
        max_in_flight,
    }
}

fn handle(
    stream: TcpStream,
    handler: &Handler,
    requests: &AtomicUsize,
    in_flight: &AtomicUsize,
    max_in_flight: &AtomicUsize,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
        let mut headers = Vec::new();
        let mut length = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h)?;
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.parse().unwrap_or(0);
                }
                headers.push((k, v));
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body)?;
        let body = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
        let index = requests.fetch_add(1, Ordering::SeqCst);
        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        max_in_flight.fetch_max(now, Ordering::SeqCst);
        let (status, text) = handler(&StubRequest { path, headers, body }, index);
        in_flight.fetch_sub(1, Ordering::SeqCst);
        let response = format!(
            "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        writer.write_all(response.as_bytes())?;
        writer.flush()?;
    }
}

/// Completion response echoing `prompt` as whitespace-led word tokens, each
/// with log-probability -0.5 except the first, which is unscored.
pub fn echo_response(prompt: &str, generated: &str) -> String {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut start = 0usize;
    let chars: Vec<char> = prompt.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let mut j = i;
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        tokens.push(chars[i..j].iter().collect::<String>());
        offsets.push(start);
        start += j - i;
        i = j;
    }
    let logprobs: Vec<serde_json::Value> = (0..tokens.len())
        .map(|k| if k == 0 { serde_json::Value::Null } else { serde_json::json!(-0.5) })
        .collect();
    serde_json::json!({
        "choices": [{
            "text": generated,
            "logprobs": {"tokens": tokens, "token_logprobs": logprobs, "text_offset": offsets}
        }]
    })
    .to_string()
}
