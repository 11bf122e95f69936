//! Chat backends: a scripted mock and an HTTP text-generation client.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    User,
    Model,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

impl ChatTurn {
    pub fn user(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, text: text.into() }
    }
}

/// Something that answers a conversation with one model turn.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, turns: &[ChatTurn]) -> Result<String>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockPattern {
    /// The prompt must equal this text.
    Exact(String),
    /// The prompt must contain this text.
    Contains(String),
}

impl MockPattern {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            MockPattern::Exact(p) => prompt == p,
            MockPattern::Contains(p) => prompt.contains(p.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(flatten)]
    pub pattern: MockPattern,
    pub response: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    /// The first matching rule answers; rules can be reused.
    #[default]
    FirstMatch,
    /// Rules are consumed in order and each call must match the next one.
    Sequential,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub mode: MockMode,
    pub rules: Vec<MockRule>,
}

/// Replays canned responses and records every conversation it receives.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: MockScript,
    cursor: Mutex<usize>,
    calls: Mutex<Vec<Vec<ChatTurn>>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script, ..Default::default() }
    }

    pub fn first_match(rules: Vec<MockRule>) -> Self {
        Self::new(MockScript { mode: MockMode::FirstMatch, rules })
    }

    /// Expects exactly these prompts, in this order.
    pub fn sequential<I, P, R>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: Into<String>,
        R: Into<String>,
    {
        let rules = pairs
            .into_iter()
            .map(|(p, r)| MockRule { pattern: MockPattern::Exact(p.into()), response: r.into() })
            .collect();
        Self::new(MockScript { mode: MockMode::Sequential, rules })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let script: MockScript = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Ok(Self::new(script))
    }

    pub fn calls(&self) -> Vec<Vec<ChatTurn>> {
        self.calls.lock().expect("mock call log").clone()
    }

    /// True when a sequential script has been fully consumed.
    pub fn exhausted(&self) -> bool {
        *self.cursor.lock().expect("mock cursor") == self.script.rules.len()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, turns: &[ChatTurn]) -> Result<String> {
        self.calls.lock().expect("mock call log").push(turns.to_vec());
        let prompt = turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.text.as_str()).unwrap_or_default();
        let miss = |why: &str| Error::Transport { attempts: 1, message: format!("mock backend: {why}") };
        match self.script.mode {
            MockMode::FirstMatch => self
                .script
                .rules
                .iter()
                .find(|r| r.pattern.matches(prompt))
                .map(|r| r.response.clone())
                .ok_or_else(|| miss("no rule matches the prompt")),
            MockMode::Sequential => {
                let mut cursor = self.cursor.lock().expect("mock cursor");
                let rule = self.script.rules.get(*cursor).ok_or_else(|| miss("script exhausted"))?;
                if !rule.pattern.matches(prompt) {
                    return Err(miss(&format!("prompt {} does not match the script", *cursor)));
                }
                *cursor += 1;
                Ok(rule.response.clone())
            }
        }
    }
}

/// Sampling parameters sent with every request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub top_k: u32,
    pub seed: u64,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.1,
            top_p: 0.95,
            repetition_penalty: 1.2,
            top_k: 50,
            seed: 0,
            max_new_tokens: 1024,
        }
    }
}

/// Client for a text-generation server exposing `POST {url}` with
/// `{"inputs": ..., "parameters": {...}}` and answering with
/// `{"generated_text": ...}` (or a one-element array of it).
#[derive(Debug)]
pub struct HttpBackend {
    pub url: String,
    pub params: GenerationParams,
    /// Attempts per call, including the first.
    pub attempts: usize,
    pub backoff: Duration,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    inputs: String,
    parameters: &'a GenerationParams,
}

#[derive(Deserialize)]
struct Generated {
    generated_text: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GenerateResponse {
    One(Generated),
    Many(Vec<Generated>),
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, params: GenerationParams) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { url: url.into(), params, attempts: 3, backoff: Duration::from_millis(500), agent }
    }

    /// Llama-2 chat formatting of a conversation.
    pub fn format_conversation(turns: &[ChatTurn]) -> String {
        let mut out = String::new();
        for turn in turns {
            match turn.role {
                Role::User => out.push_str(&format!("<s>[INST] {} [/INST]", turn.text.trim())),
                Role::Model => out.push_str(&format!(" {} </s>", turn.text.trim())),
            }
        }
        out
    }

    fn attempt(&self, body: &GenerateRequest) -> std::result::Result<String, (bool, String)> {
        let mut resp = self.agent.post(&self.url).send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, format!("server answered {status}")));
        }
        if status >= 400 {
            return Err((false, format!("server answered {status}")));
        }
        let parsed: GenerateResponse = resp.body_mut().read_json().map_err(|e| (false, e.to_string()))?;
        match parsed {
            GenerateResponse::One(g) => Ok(g.generated_text),
            GenerateResponse::Many(mut v) if !v.is_empty() => Ok(v.swap_remove(0).generated_text),
            GenerateResponse::Many(_) => Err((false, "empty response array".into())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, turns: &[ChatTurn]) -> Result<String> {
        let body = GenerateRequest { inputs: Self::format_conversation(turns), parameters: &self.params };
        let attempts = self.attempts.max(1);
        let mut message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt as u32 - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text.trim().to_string()),
                Err((retry, msg)) => {
                    log::warn!("generation request failed (attempt {}): {msg}", attempt + 1);
                    message = msg;
                    if !retry {
                        return Err(Error::Transport { attempts: attempt + 1, message });
                    }
                }
            }
        }
        Err(Error::Transport { attempts, message })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_mock_enforces_order() {
        let mock = MockBackend::sequential([("a", "1"), ("b", "2")]);
        assert!(mock.complete(&[ChatTurn::user("b")]).is_err());
        assert_eq!(mock.complete(&[ChatTurn::user("a")]).unwrap(), "1");
        assert_eq!(mock.complete(&[ChatTurn::user("b")]).unwrap(), "2");
        assert!(mock.exhausted());
        assert!(mock.complete(&[ChatTurn::user("a")]).is_err());
        assert_eq!(mock.calls().len(), 4);
    }

    #[test]
    fn first_match_mock_reuses_rules() {
        let mock = MockBackend::first_match(vec![MockRule {
            pattern: MockPattern::Contains("sentiment".into()),
            response: "Positive".into(),
        }]);
        for _ in 0..3 {
            assert_eq!(mock.complete(&[ChatTurn::user("the sentiment?")]).unwrap(), "Positive");
        }
        assert!(mock.complete(&[ChatTurn::user("other")]).is_err());
    }

    #[test]
    fn script_json_shape() {
        let script: MockScript = serde_json::from_str(
            r#"{"mode": "sequential", "rules": [{"exact": "p", "response": "r"}, {"contains": "q", "response": "s"}]}"#,
        )
        .unwrap();
        assert_eq!(script.rules[1].pattern, MockPattern::Contains("q".into()));
    }

    #[test]
    fn unreachable_server_exhausts_retries() {
        let mut backend = HttpBackend::new("http://127.0.0.1:9/generate", GenerationParams::default());
        backend.backoff = Duration::from_millis(1);
        match backend.complete(&[ChatTurn::user("hi")]) {
            Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn request_carries_sampling_parameters() {
        let params = GenerationParams::default();
        let body = serde_json::to_value(GenerateRequest {
            inputs: HttpBackend::format_conversation(&[ChatTurn::user("x")]),
            parameters: &params,
        })
        .unwrap();
        assert_eq!(body["inputs"], "<s>[INST] x [/INST]");
        assert_eq!(body["parameters"]["top_k"], 50);
        assert_eq!(body["parameters"]["repetition_penalty"], 1.2);
        assert_eq!(body["parameters"]["seed"], 0);
    }
}
