//! Chat-completions style HTTP backend.

use std::time::Duration;

use serde::Serialize;

use super::backend::{BackendError, BackendFactory, ChatBackend, Message};

pub const API_KEY_ENV: &str = "COTFORGE_API_KEY";
pub const DEFAULT_REPLY_POINTER: &str = "/choices/0/message/content";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub url: String,
    pub model: String,
    pub temperature: f64,
    /// JSON pointer to the assistant text inside the response body.
    pub reply_pointer: String,
    pub timeout: Duration,
    /// Bearer token; read from [`API_KEY_ENV`] by [`HttpConfig::new`].
    pub api_key: Option<String>,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            temperature: 0.0,
            reply_pointer: DEFAULT_REPLY_POINTER.into(),
            timeout: Duration::from_secs(60),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        if !cfg.reply_pointer.is_empty() && !cfg.reply_pointer.starts_with('/') {
            return Err(BackendError::Config(format!("invalid JSON pointer {:?}", cfg.reply_pointer)));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { cfg, client })
    }
}

impl ChatBackend for HttpBackend {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError> {
        let body = RequestBody {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut req = self.client.post(&self.cfg.url).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Decode(format!("response is not JSON: {e}")))?;
        match json.pointer(&self.cfg.reply_pointer) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(BackendError::Decode(format!(
                "{} is not a string: {other}",
                self.cfg.reply_pointer
            ))),
            None => Err(BackendError::Decode(format!("{} missing from response", self.cfg.reply_pointer))),
        }
    }
}

impl BackendFactory for HttpConfig {
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(Box::new(HttpBackend::new(self.clone())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves one canned HTTP response and hands back the raw request.
    fn serve_once(status: &'static str, body: &'static str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0; len];
            reader.read_exact(&mut body_in).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            head + &String::from_utf8(body_in).unwrap()
        });
        (url, handle)
    }

    fn config(url: String) -> HttpConfig {
        HttpConfig {
            api_key: Some("k123".into()),
            timeout: Duration::from_secs(5),
            ..HttpConfig::new(url, "teacher")
        }
    }

    #[test]
    fn posts_chat_body_and_reads_pointer() {
        let (url, h) = serve_once("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#);
        let mut b = HttpBackend::new(config(url)).unwrap();
        let reply = b.send(&[Message::system("s"), Message::user("u")]).unwrap();
        assert_eq!(reply, "hello");
        let req = h.join().unwrap();
        assert!(req.starts_with("POST /v1/chat"));
        assert!(req.to_ascii_lowercase().contains("authorization: bearer k123"));
        let body = &req[req.find("\r\n\r\n").unwrap() + 4..];
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "teacher");
        assert_eq!(v["messages"][1]["role"], "user");
        assert_eq!(v["temperature"], 0.0);
    }

    #[test]
    fn server_errors_are_retryable() {
        let (url, h) = serve_once("503 Service Unavailable", "{}");
        let mut b = HttpBackend::new(config(url)).unwrap();
        let e = b.send(&[Message::user("u")]).unwrap_err();
        h.join().unwrap();
        assert!(matches!(e, BackendError::Status { status: 503, .. }));
        assert!(e.is_retryable());
    }

    #[test]
    fn missing_pointer_is_decode_error() {
        let (url, h) = serve_once("200 OK", r#"{"output":"x"}"#);
        let mut b = HttpBackend::new(config(url)).unwrap();
        assert!(matches!(b.send(&[Message::user("u")]), Err(BackendError::Decode(_))));
        h.join().unwrap();
    }

    #[test]
    fn refused_connection_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut b = HttpBackend::new(config(format!("http://127.0.0.1:{port}/"))).unwrap();
        assert!(matches!(b.send(&[Message::user("u")]), Err(BackendError::Transport(_))));
    }
}
