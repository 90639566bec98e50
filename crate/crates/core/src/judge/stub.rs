use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;

use super::{Exchange, Transport};
use crate::fsutil::sha256_hex;

/// Offline transport. Replies are looked up by the SHA-256 of the last user
/// message; unknown prompts get the default reply. A script of failures can
/// be queued ahead of the normal replies.
#[derive(Debug, Default)]
pub struct StubTransport {
    replies: HashMap<String, String>,
    default_reply: Option<String>,
    script: Mutex<VecDeque<Exchange>>,
    calls: AtomicUsize,
}

impl StubTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prompt_key(prompt: &str) -> String {
        sha256_hex(prompt.as_bytes())
    }

    pub fn with_reply(mut self, prompt: &str, reply: &str) -> Self {
        self.replies
            .insert(Self::prompt_key(prompt), reply.to_string());
        self
    }

    pub fn with_default(mut self, reply: &str) -> Self {
        self.default_reply = Some(reply.to_string());
        self
    }

    /// Queues a raw status and body to be returned before any lookup.
    pub fn with_status(self, status: u16, body: &str) -> Self {
        self.script
            .lock()
            .expect("script poisoned")
            .push_back(Ok((status, body.to_string())));
        self
    }

    /// Queues a connection-level failure.
    pub fn with_failure(self, message: &str) -> Self {
        self.script
            .lock()
            .expect("script poisoned")
            .push_back(Err(message.to_string()));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Wraps reply text in the chat-completion response shape.
pub fn completion_body(content: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
        .to_string()
}

impl Transport for StubTransport {
    fn post(
        &self,
        _url: &str,
        _api_key: &str,
        body: &serde_json::Value,
        _timeout: Duration,
    ) -> Exchange {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(scripted) = self.script.lock().expect("script poisoned").pop_front() {
            return scripted;
        }
        let prompt = body
            .pointer("/messages")
            .and_then(|m| m.as_array())
            .and_then(|m| m.iter().rev().find(|x| x["role"] == "user"))
            .and_then(|m| m["content"].as_str())
            .unwrap_or_default();
        match self
            .replies
            .get(&Self::prompt_key(prompt))
            .or(self.default_reply.as_ref())
        {
            Some(r) => Ok((200, completion_body(r))),
            None => Ok((
                404,
                format!("no stub reply for prompt {}", Self::prompt_key(prompt)),
            )),
        }
    }
}
