//! Stand-in model adapter answering with the built-in lexicon and rules.
//!
//! Speaks the line protocol on stdin/stdout by default, or serves
//! `POST /v1/extract` with `--http ADDR`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;
use corpus_audit::adapter::{AdapterResponse, BuiltinResponder};

#[derive(Parser)]
#[command(name = "stub-adapter", version)]
struct Args {
    /// Sleep before each answer.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Answer every request with an error.
    #[arg(long)]
    fail: bool,
    /// Serve HTTP on this address (port 0 picks one; the bound URL is
    /// printed on the first stdout line).
    #[arg(long)]
    http: Option<String>,
}

struct Stub {
    responder: BuiltinResponder,
    delay: Duration,
    fail: bool,
}

impl Stub {
    fn answer(&self, line: &str) -> String {
        std::thread::sleep(self.delay);
        if self.fail {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("request_id")?.as_str().map(String::from))
                .unwrap_or_default();
            let resp = AdapterResponse::failure(id, "stub adapter configured to fail");
            return serde_json::to_string(&resp).expect("response serializes");
        }
        self.responder.answer_line(line)
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    let stub = Stub {
        responder: BuiltinResponder::default(),
        delay: Duration::from_millis(args.delay_ms),
        fail: args.fail,
    };
    match &args.http {
        Some(addr) => serve_http(&stub, addr),
        None => serve_stdio(&stub),
    }
}

fn serve_stdio(stub: &Stub) -> Result<()> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(stdout, "{}", stub.answer(&line))?;
        stdout.flush()?;
    }
    Ok(())
}

/// Minimal HTTP/1.1: one request per connection, body by Content-Length.
fn serve_http(stub: &Stub, addr: &str) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    println!("listening on http://{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    for stream in listener.incoming() {
        let mut stream = stream?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        let mut content_length = 0usize;
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header)? == 0 || header.trim().is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.trim().eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let (status, payload) = if request_line.starts_with("POST /v1/extract ") {
            ("200 OK", stub.answer(&String::from_utf8_lossy(&body)))
        } else {
            ("404 Not Found", String::from("{\"error\":\"not found\"}"))
        };
        write!(
            stream,
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
            payload.len()
        )?;
        stream.flush()?;
    }
    Ok(())
}
