//! OpenAI-compatible completions client.
//!
//! In scoring mode every verbalized label is appended to the prompt and the
//! endpoint is asked to echo the text with token log-probabilities
//! (`max_tokens: 0, echo: true, logprobs: 0`). A label's score is the sum of
//! the log-probabilities of the tokens that extend past the prompt.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, BackendMode, LabelScores};
use crate::sampler::PromptInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HttpMode {
    #[default]
    Logprobs,
    /// Greedy free generation of a few tokens, matched to a label afterwards.
    Generate,
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub mode: HttpMode,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub max_tokens: u32,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: String::new(),
            api_key: None,
            timeout: Duration::from_secs(60),
            mode: HttpMode::Logprobs,
            max_attempts: 5,
            backoff: Duration::from_millis(500),
            max_tokens: 8,
        }
    }
}

pub struct HttpBackend {
    client: Client,
    options: HttpOptions,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

impl HttpBackend {
    pub fn new(options: HttpOptions) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, options })
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<CompletionResponse, BackendError> {
        let mut request = self.client.post(&self.options.url).json(body);
        if let Some(key) = &self.options.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            let lower = text.to_lowercase();
            if status.as_u16() == 400 && (lower.contains("logprobs") || lower.contains("echo")) {
                return Err(BackendError::LogprobsUnsupported(text));
            }
            if status.is_client_error() && status.as_u16() != 429 {
                return Err(BackendError::Protocol(format!("{status}: {text}")));
            }
            return Err(BackendError::Server {
                status: status.as_u16(),
                body: text,
            });
        }
        response
            .json::<CompletionResponse>()
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    /// Retries retryable failures with exponential backoff.
    fn post(&self, body: &serde_json::Value) -> Result<CompletionResponse, BackendError> {
        let attempts = self.options.max_attempts.max(1);
        let mut delay = self.options.backoff;
        let mut attempt = 1;
        loop {
            match self.post_once(body) {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else {
        BackendError::Transport(e.to_string())
    }
}

/// Sums log-probabilities of tokens whose span ends beyond `prompt_chars`.
/// A token straddling the boundary (e.g. a space merged with the label) counts.
fn continuation_logprob(logprobs: &Logprobs, prompt_chars: usize, full_chars: usize) -> Result<f64, BackendError> {
    let n = logprobs.token_logprobs.len();
    if logprobs.text_offset.len() != n || (!logprobs.tokens.is_empty() && logprobs.tokens.len() != n) {
        return Err(BackendError::Protocol("logprobs arrays differ in length".into()));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for j in 0..n {
        let end = logprobs.text_offset.get(j + 1).copied().unwrap_or(full_chars);
        if end > prompt_chars {
            let lp = logprobs.token_logprobs[j]
                .ok_or_else(|| BackendError::Protocol(format!("missing log-probability for token {j}")))?;
            total += lp;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(BackendError::Protocol("no continuation tokens in echoed text".into()));
    }
    Ok(total)
}

impl Backend for HttpBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        let texts: Vec<String> = prompt
            .label_space
            .iter()
            .map(|label| format!("{}{label}", prompt.text))
            .collect();
        let body = json!({
            "model": self.options.model,
            "prompt": texts,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0,
        });
        let response = self.post(&body)?;
        if response.choices.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} choices, got {}",
                texts.len(),
                response.choices.len()
            )));
        }
        let prompt_chars = prompt.text.chars().count();
        let mut logps = vec![f64::NAN; texts.len()];
        for (position, choice) in response.choices.iter().enumerate() {
            let i = choice.index.unwrap_or(position);
            let slot = logps
                .get_mut(i)
                .ok_or_else(|| BackendError::Protocol(format!("choice index {i} out of range")))?;
            let logprobs = choice
                .logprobs
                .as_ref()
                .ok_or_else(|| BackendError::LogprobsUnsupported("response has no logprobs".into()))?;
            *slot = continuation_logprob(logprobs, prompt_chars, texts[i].chars().count())?;
        }
        if logps.iter().any(|l| l.is_nan()) {
            return Err(BackendError::Protocol("missing choice for a label".into()));
        }
        Ok(LabelScores::from_log_likelihoods(&logps))
    }

    fn complete(&self, prompt: &PromptInstance) -> Result<String, BackendError> {
        let body = json!({
            "model": self.options.model,
            "prompt": prompt.text,
            "max_tokens": self.options.max_tokens,
            "temperature": 0,
        });
        let response = self.post(&body)?;
        response
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Protocol("no choices".into()))
    }

    fn mode(&self) -> BackendMode {
        match self.options.mode {
            HttpMode::Logprobs => BackendMode::Scoring,
            HttpMode::Generate => BackendMode::Generation,
        }
    }

    fn tag(&self) -> String {
        if self.options.model.is_empty() {
            self.options.url.clone()
        } else {
            format!("{}@{}", self.options.model, self.options.url)
        }
    }
}
