//! Chat backend abstraction and the retrying wrapper.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection-level failure; worth retrying.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    /// The reply arrived but could not be interpreted.
    #[error("malformed reply: {0}")]
    Decode(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Decode(_) | BackendError::Config(_) => false,
        }
    }
}

/// A single chat connection.
pub trait ChatBackend: Send {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn send(&mut self, messages: &[Message]) -> Result<String, BackendError> {
        (**self).send(messages)
    }
}

/// Opens independent connections, one per record being processed, so that
/// collection output does not depend on how records are spread over workers.
pub trait BackendFactory: Sync {
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError>;
}

impl<F> BackendFactory for F
where
    F: Fn() -> Box<dyn ChatBackend> + Sync,
{
    fn connect(&self) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(self())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff: Duration::ZERO,
        }
    }
}

/// A reply together with how many retries it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub retries: u32,
}

/// Error after the retry budget is spent.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{source} (after {attempts} attempts)")]
pub struct ExhaustedError {
    pub attempts: u32,
    pub source: BackendError,
}

/// Sends with retries on retryable failures, doubling the backoff each time.
pub fn send_with_retry(
    backend: &mut dyn ChatBackend,
    messages: &[Message],
    policy: &RetryPolicy,
) -> Result<Reply, ExhaustedError> {
    let mut delay = policy.backoff;
    let mut retries = 0;
    loop {
        match backend.send(messages) {
            Ok(text) => return Ok(Reply { text, retries }),
            Err(e) if e.is_retryable() && retries < policy.max_retries => {
                log::warn!("backend call failed ({e}); retry {} of {}", retries + 1, policy.max_retries);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                retries += 1;
            }
            Err(source) => {
                return Err(ExhaustedError {
                    attempts: retries + 1,
                    source,
                })
            }
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flaky {
        failures: u32,
        calls: u32,
    }

    impl ChatBackend for Flaky {
        fn send(&mut self, _: &[Message]) -> Result<String, BackendError> {
            self.calls += 1;
            if self.calls <= self.failures {
                Err(BackendError::Transport("reset".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let mut b = Flaky { failures: 2, calls: 0 };
        let r = send_with_retry(&mut b, &[], &RetryPolicy::default()).unwrap();
        assert_eq!(r, Reply { text: "ok".into(), retries: 2 });
    }

    #[test]
    fn budget_exhaustion_reports_attempts() {
        let mut b = Flaky { failures: 10, calls: 0 };
        let policy = RetryPolicy {
            max_retries: 2,
            ..RetryPolicy::default()
        };
        let e = send_with_retry(&mut b, &[], &policy).unwrap_err();
        assert_eq!(e.attempts, 3);
        assert_eq!(b.calls, 3);
    }

    #[test]
    fn non_retryable_fails_fast() {
        struct Bad;
        impl ChatBackend for Bad {
            fn send(&mut self, _: &[Message]) -> Result<String, BackendError> {
                Err(BackendError::Status {
                    status: 401,
                    body: String::new(),
                })
            }
        }
        let e = send_with_retry(&mut Bad, &[], &RetryPolicy::default()).unwrap_err();
        assert_eq!(e.attempts, 1);
    }

    #[test]
    fn message_wire_format() {
        let m = Message::user("hi");
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"role":"user","content":"hi"}"#);
    }
}
