//! Chat-completion judge client with an offline stub transport.

mod stub;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use stub::{completion_body, StubTransport};

use crate::error::{Error, Result};
use crate::uncertainty::{EquivalenceOracle, VuScorer};

pub const ENV_URL: &str = "JUDGE_API_URL";
pub const ENV_KEY: &str = "JUDGE_API_KEY";
pub const ENV_MODEL: &str = "JUDGE_MODEL";

pub const ENTAILMENT_CACHE_CAP: usize = 65536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    pub temperature: f64,
    /// First retry delay; later ones double.
    pub backoff_base_secs: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key: String::new(),
            model_name: "judge".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_concurrent: 4,
            temperature: 0.0,
            backoff_base_secs: 0.5,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config(format!(
                "judge timeout must be > 0, got {}",
                self.timeout_secs
            )));
        }
        if self.max_concurrent == 0 {
            return Err(Error::Config(
                "judge max_concurrent must be at least 1".into(),
            ));
        }
        if !(self.backoff_base_secs >= 0.0) {
            return Err(Error::Config("judge backoff base must be ≥ 0".into()));
        }
        if self.base_url.is_empty() {
            return Err(Error::Config("judge base_url is empty".into()));
        }
        Ok(())
    }

    /// Applies `JUDGE_API_URL`, `JUDGE_API_KEY` and `JUDGE_MODEL` from `lookup`.
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(v) = lookup(ENV_URL) {
            self.base_url = v;
        }
        if let Some(v) = lookup(ENV_KEY) {
            self.api_key = v;
        }
        if let Some(v) = lookup(ENV_MODEL) {
            self.model_name = v;
        }
        self
    }

    pub fn with_env(self) -> Self {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Outcome of one HTTP exchange: status and body, or a transport failure.
pub type Exchange = std::result::Result<(u16, String), String>;

pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Exchange;
}

/// Blocking HTTP transport.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Exchange {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if !api_key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {api_key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReply {
    pub raw: String,
    pub parsed: Option<f64>,
    pub latency_secs: f64,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct JudgeClient {
    config: JudgeConfig,
    transport: Box<dyn Transport>,
    slots: Semaphore,
}

impl JudgeClient {
    pub fn new(config: JudgeConfig, transport: Box<dyn Transport>) -> Result<Self> {
        config.validate()?;
        let slots = Semaphore {
            free: Mutex::new(config.max_concurrent),
            cv: Condvar::new(),
        };
        Ok(Self {
            config,
            transport,
            slots,
        })
    }

    pub fn http(config: JudgeConfig) -> Result<Self> {
        Self::new(config, Box::new(HttpTransport))
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let jitter: f64 = rand::rng().random::<f64>() * 0.5;
        Duration::from_secs_f64(
            self.config.backoff_base_secs * 2f64.powi(attempt as i32) * (1.0 + jitter),
        )
    }

    /// One chat completion, retried on transport failures and 5xx replies.
    pub fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
            "temperature": self.config.temperature,
        });
        let url = self.config.endpoint();
        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        let _permit = self.slots.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self
                .transport
                .post(&url, &self.config.api_key, &body, timeout)
            {
                Ok((status, text)) if (200..300).contains(&status) => {
                    return extract_content(&text)
                }
                Ok((status, text)) if (400..500).contains(&status) => {
                    return Err(Error::Request { status, body: text })
                }
                Ok((status, text)) => last = format!("status {status}: {text}"),
                Err(e) => last = e,
            }
        }
        Err(Error::Transport {
            retries: self.config.max_retries,
            message: last,
        })
    }

    pub fn judge_decisiveness(&self, question: &str, answer: &str) -> Result<JudgeReply> {
        let start = Instant::now();
        let raw = self.complete(DECISIVENESS_SYSTEM, &decisiveness_prompt(question, answer))?;
        let parsed = parse_decisiveness(&raw).ok();
        Ok(JudgeReply {
            raw,
            parsed,
            latency_secs: start.elapsed().as_secs_f64(),
        })
    }

    /// Scores many pairs with up to `max_concurrent` requests in flight.
    pub fn score_vu_batch(&self, items: &[(String, String)]) -> Result<Vec<f64>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<f64>>>> =
            Mutex::new((0..items.len()).map(|_| None).collect());
        let workers = self.config.max_concurrent.min(items.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = score_vu_judge(&items[i].0, &items[i].1, self);
                    results.lock().expect("results poisoned")[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .expect("results poisoned")
            .into_iter()
            .map(|r| r.expect("every index scored"))
            .collect()
    }
}

fn extract_content(body: &str) -> Result<String> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| Error::Parse {
        message: format!("reply is not JSON: {e}"),
        line: None,
        raw: Some(body.to_string()),
    })?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Parse {
            message: "reply has no choices[0].message.content".into(),
            line: None,
            raw: Some(body.to_string()),
        })
}

pub const DECISIVENESS_SYSTEM: &str = "You are a careful annotator of answer wording.";

const DECISIVENESS_INSTRUCTIONS: &str = "\
Read a question and an answer written by a language model. Rate how decisive \
the wording of the answer is, on a scale from 0 to 1. Judge only the phrasing \
of the answer, not whether it is factually right. Hedges such as \"maybe\", \
\"I think\", \"possibly\" or \"I'm not sure\" lower the score. An answer stated \
flatly with no qualifiers scores near 1. An answer that declines to answer \
scores 0.

Examples:
Question: what is the tallest mountain in africa
Answer: Kilimanjaro is the tallest mountain in Africa.
Decisiveness score: 1.0

Question: what is the tallest mountain in africa
Answer: I believe it is Kilimanjaro, though I could be mixing it up with Mount Kenya.
Decisiveness score: 0.4

Question: what is the tallest mountain in africa
Answer: I can't say which mountain that is.
Decisiveness score: 0.0

Reply with one line of the form \"Decisiveness score: <number>\".
";

pub fn decisiveness_prompt(question: &str, answer: &str) -> String {
    format!("{DECISIVENESS_INSTRUCTIONS}\nQuestion: {question}\nAnswer: {answer}\n")
}

/// Value after the last `Decisiveness score:` marker, clamped to [0, 1].
pub fn parse_decisiveness(raw: &str) -> Result<f64> {
    const MARK: &str = "decisiveness score:";
    let lower = raw.to_lowercase();
    let fail = || Error::Parse {
        message: "no decisiveness score in judge reply".into(),
        line: None,
        raw: Some(raw.to_string()),
    };
    let pos = lower.rfind(MARK).ok_or_else(fail)?;
    let tail = lower[pos + MARK.len()..].trim_start();
    let num: String = tail
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let v: f64 = num.trim_end_matches('.').parse().map_err(|_| fail())?;
    Ok(v.clamp(0.0, 1.0))
}

/// `1 − decisiveness`.
pub fn score_vu_judge(question: &str, answer: &str, client: &JudgeClient) -> Result<f64> {
    let raw = client.complete(DECISIVENESS_SYSTEM, &decisiveness_prompt(question, answer))?;
    Ok(1.0 - parse_decisiveness(&raw)?)
}

/// [`VuScorer`] backed by a judge endpoint.
pub struct JudgeScorer {
    pub client: JudgeClient,
}

impl VuScorer for JudgeScorer {
    fn score(&self, question: &str, answer: &str) -> Result<f64> {
        score_vu_judge(question, answer, &self.client)
    }

    fn score_batch(&self, items: &[(String, String)]) -> Result<Vec<f64>> {
        self.client.score_vu_batch(items)
    }
}

pub const ENTAILMENT_SYSTEM: &str = "You check whether one statement follows from another.";

pub fn entailment_prompt(premise: &str, hypothesis: &str) -> String {
    format!(
        "Statement A: {premise}\nStatement B: {hypothesis}\n\
         Does statement B follow from statement A? Answer yes or no."
    )
}

fn says_yes(raw: &str) -> bool {
    raw.trim_start()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
        .starts_with("yes")
}

fn cache_key(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

struct FifoCache {
    map: HashMap<(String, String), bool>,
    order: VecDeque<(String, String)>,
    cap: usize,
}

impl FifoCache {
    fn insert(&mut self, key: (String, String), value: bool) {
        if self.map.insert(key.clone(), value).is_none() {
            self.order.push_back(key);
            while self.order.len() > self.cap {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
        }
    }
}

/// Answers are equivalent when each entails the other according to the judge.
pub struct EntailmentOracle<'a> {
    client: &'a JudgeClient,
    cache: Mutex<FifoCache>,
}

impl<'a> EntailmentOracle<'a> {
    pub fn new(client: &'a JudgeClient) -> Self {
        Self::with_capacity(client, ENTAILMENT_CACHE_CAP)
    }

    pub fn with_capacity(client: &'a JudgeClient, cap: usize) -> Self {
        Self {
            client,
            cache: Mutex::new(FifoCache {
                map: HashMap::new(),
                order: VecDeque::new(),
                cap: cap.max(1),
            }),
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache poisoned").map.len()
    }
}

impl EquivalenceOracle for EntailmentOracle<'_> {
    fn equivalent(&self, a: &str, b: &str) -> Result<bool> {
        let (ka, kb) = (cache_key(a), cache_key(b));
        if ka == kb {
            return Ok(true);
        }
        let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
        if let Some(&v) = self.cache.lock().expect("cache poisoned").map.get(&key) {
            return Ok(v);
        }
        let forward = says_yes(
            &self
                .client
                .complete(ENTAILMENT_SYSTEM, &entailment_prompt(&key.0, &key.1))?,
        );
        let result = forward
            && says_yes(
                &self
                    .client
                    .complete(ENTAILMENT_SYSTEM, &entailment_prompt(&key.1, &key.0))?,
            );
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, result);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_decisiveness("reasoning... Decisiveness score: 0.8").unwrap(),
            0.8
        );
        assert_eq!(parse_decisiveness("Decisiveness score: 0.0").unwrap(), 0.0);
        assert_eq!(
            parse_decisiveness("Decisiveness score: 0.3\nDecisiveness score: 0.9").unwrap(),
            0.9
        );
        assert_eq!(parse_decisiveness("Decisiveness score: 1.").unwrap(), 1.0);
        let e = parse_decisiveness("score is high").unwrap_err();
        assert!(matches!(e, Error::Parse { raw: Some(ref r), .. } if r == "score is high"));
    }

    #[test]
    fn env_overrides() {
        let c = JudgeConfig::default().with_overrides(|k| match k {
            ENV_URL => Some("http://judge.test/v1/".into()),
            ENV_MODEL => Some("m".into()),
            _ => None,
        });
        assert_eq!(c.endpoint(), "http://judge.test/v1/chat/completions");
        assert_eq!(c.model_name, "m");
        assert_eq!(c.api_key, "");
    }

    #[test]
    fn config_validation() {
        let bad = JudgeConfig {
            timeout_secs: 0.0,
            ..JudgeConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fifo_eviction() {
        let mut c = FifoCache {
            map: HashMap::new(),
            order: VecDeque::new(),
            cap: 2,
        };
        for i in 0..3 {
            c.insert((i.to_string(), String::new()), true);
        }
        assert_eq!(c.map.len(), 2);
        assert!(!c.map.contains_key(&("0".to_string(), String::new())));
    }

    #[test]
    fn yes_detection() {
        assert!(says_yes("Yes."));
        assert!(says_yes("  **yes**, it does"));
        assert!(!says_yes("No"));
    }
}
