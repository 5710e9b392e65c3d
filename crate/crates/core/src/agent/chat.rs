//! Chat-completions client and the chat-model agent.
//!
//! Requests follow the OpenAI-compatible wire format with logprob fields.
//! The credential is read from an environment variable named in the
//! endpoint config. Transports are swappable so tests replay recorded
//! fixtures instead of touching the network.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::posterior::{extract_rule_posterior, locate_rule, RulePosterior};
use super::prompts::{render_prompt, BiasSlot, PromptSlots, Template};
use super::Agent;
use crate::acre::{AcreExample, AcreRule, AcreState, AcreTask};
use crate::bayes::{sample_marginal, sample_transmission, BeliefState, LikelihoodModel};
use crate::error::{Error, Result};
use crate::space::{Example, FiniteSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCandidate {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TokenCandidate>,
}

/// Messages sent plus the assistant reply, with per-token logprobs when the
/// server returned them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub logprobs: Option<Vec<TokenLogprob>>,
}

impl ChatExchange {
    pub fn reply(&self) -> Option<&str> {
        self.messages.last().filter(|m| m.role == Role::Assistant).map(|m| m.content.as_str())
    }

    /// Optional leading system message, then user and assistant turns
    /// alternating, ending on the assistant.
    pub fn validate(&self, top_logprobs: Option<usize>) -> Result<(), ChatError> {
        let turns = match self.messages.first() {
            Some(m) if m.role == Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        if turns.is_empty() || turns.len() % 2 != 0 {
            return Err(ChatError::Malformed("exchange must alternate user/assistant and end on the assistant".into()));
        }
        for (i, m) in turns.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return Err(ChatError::Malformed(format!("turn {i} has role {:?}, expected {want:?}", m.role)));
            }
        }
        if let (Some(k), Some(tokens)) = (top_logprobs, &self.logprobs) {
            if let Some(t) = tokens.iter().find(|t| t.top_logprobs.len() > k) {
                return Err(ChatError::Malformed(format!("token `{}` lists more than {k} candidates", t.token)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChatError {
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited on all {0} attempts")]
    RateLimited(usize),
    #[error("server error (HTTP {status}) on all {attempts} attempts")]
    Server { status: u16, attempts: usize },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("transport failure on all {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no parseable rule after {attempts} attempts; transcript:\n{transcript}")]
    Format { attempts: usize, transcript: String },
    #[error("replay exhausted after {0} calls")]
    ReplayExhausted(usize),
}

fn default_key_env() -> String {
    "ILSIM_API_KEY".into()
}
fn default_attempts() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_max_backoff() -> u64 {
    8000
}
fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatEndpoint {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_backoff")]
    pub max_backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub requests_per_minute: Option<f64>,
}

impl ChatEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
            max_backoff_ms: default_max_backoff(),
            timeout_secs: default_timeout(),
            requests_per_minute: None,
        }
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let ms = self.backoff_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatDecoding {
    pub temperature: f64,
    /// Candidates per token; `None` requests no logprobs.
    pub top_logprobs: Option<u8>,
}

impl Default for ChatDecoding {
    fn default() -> Self {
        Self { temperature: 0.1, top_logprobs: Some(5) }
    }
}

/// Token bucket shared by every client holding a clone of the `Arc`.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: f64) -> Arc<Self> {
        let capacity = requests.clamp(1.0, 10.0);
        Arc::new(Self { capacity, per_sec: requests / 60.0, state: Mutex::new((capacity, Instant::now())) })
    }

    /// Blocks until a token is available, then takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let now = Instant::now();
                st.0 = (st.0 + now.duration_since(st.1).as_secs_f64() * self.per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            thread::sleep(wait);
        }
    }
}

/// One HTTP round trip as it went over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub request: Value,
    pub status: u16,
    pub response: Value,
}

pub fn wire_request(model: &str, messages: &[ChatMessage], decoding: &ChatDecoding) -> Value {
    let mut req = json!({
        "model": model,
        "messages": messages,
        "temperature": decoding.temperature,
        "logprobs": decoding.top_logprobs.is_some(),
    });
    if let Some(k) = decoding.top_logprobs {
        req["top_logprobs"] = json!(k);
    }
    req
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

/// Builds the exchange from the request messages and a response body.
pub fn parse_response(messages: &[ChatMessage], body: &Value) -> Result<ChatExchange, ChatError> {
    let wire: WireResponse = serde_json::from_value(body.clone()).map_err(|e| ChatError::Malformed(e.to_string()))?;
    let choice =
        wire.choices.into_iter().next().ok_or_else(|| ChatError::Malformed("response has no choices".into()))?;
    let content = choice.message.content.ok_or_else(|| ChatError::Malformed("reply has no content".into()))?;
    let mut all = messages.to_vec();
    all.push(ChatMessage::new(Role::Assistant, content));
    Ok(ChatExchange { messages: all, logprobs: choice.logprobs.and_then(|l| l.content) })
}

pub trait ChatTransport: Send {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &ChatDecoding) -> Result<ChatExchange, ChatError>;
}

/// Live client over HTTP.
pub struct HttpTransport {
    endpoint: ChatEndpoint,
    api_key: String,
    agent: ureq::Agent,
    limiter: Option<Arc<RateLimiter>>,
    recordings: Vec<RecordedCall>,
}

impl HttpTransport {
    /// Reads the credential from the endpoint's environment variable.
    pub fn new(endpoint: ChatEndpoint, limiter: Option<Arc<RateLimiter>>) -> Result<Self, ChatError> {
        let api_key = std::env::var(&endpoint.api_key_env)
            .map_err(|_| ChatError::MissingCredential(endpoint.api_key_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .build()
            .into();
        let limiter = limiter.or_else(|| endpoint.requests_per_minute.map(RateLimiter::per_minute));
        Ok(Self { endpoint, api_key, agent, limiter, recordings: Vec::new() })
    }

    pub fn take_recordings(&mut self) -> Vec<RecordedCall> {
        std::mem::take(&mut self.recordings)
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &ChatDecoding) -> Result<ChatExchange, ChatError> {
        chat_call(self, messages, decoding)
    }
}

/// One chat request with bounded retries on 429, 5xx and transport
/// failures.
pub fn chat_call(
    client: &mut HttpTransport,
    messages: &[ChatMessage],
    decoding: &ChatDecoding,
) -> Result<ChatExchange, ChatError> {
    let request = wire_request(&client.endpoint.model, messages, decoding);
    let attempts = client.endpoint.max_attempts.max(1);
    let mut last_status = 0u16;
    let mut last_transport = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let pause = client.endpoint.backoff(attempt - 1);
            debug!("retrying chat request in {pause:?}");
            thread::sleep(pause);
        }
        if let Some(l) = &client.limiter {
            l.acquire();
        }
        let sent = client
            .agent
            .post(&client.endpoint.url)
            .header("Authorization", format!("Bearer {}", client.api_key))
            .send_json(&request);
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => {
                warn!("chat request failed: {e}");
                last_transport = Some(e.to_string());
                continue;
            }
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ChatError::Malformed(e.to_string()))?;
        match status {
            200..=299 => {
                let body: Value = serde_json::from_str(&text).map_err(|e| ChatError::Malformed(e.to_string()))?;
                client.recordings.push(RecordedCall { request: request.clone(), status, response: body.clone() });
                let exchange = parse_response(messages, &body)?;
                exchange.validate(decoding.top_logprobs.map(usize::from))?;
                return Ok(exchange);
            }
            401 | 403 => return Err(ChatError::Auth(status)),
            429 | 500..=599 => {
                warn!("chat endpoint returned HTTP {status}");
                last_status = status;
                last_transport = None;
            }
            _ => return Err(ChatError::Rejected { status, body: text }),
        }
    }
    Err(match (last_transport, last_status) {
        (Some(message), _) => ChatError::Transport { attempts, message },
        (None, 429) => ChatError::RateLimited(attempts),
        (None, status) => ChatError::Server { status, attempts },
    })
}

/// Serves recorded calls in order.
#[derive(Debug, Clone)]
pub struct ReplayTransport {
    calls: Vec<RecordedCall>,
    next: usize,
}

impl ReplayTransport {
    pub fn new(calls: Vec<RecordedCall>) -> Self {
        Self { calls, next: 0 }
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&mut self, messages: &[ChatMessage], _decoding: &ChatDecoding) -> Result<ChatExchange, ChatError> {
        let call = self.calls.get(self.next).ok_or(ChatError::ReplayExhausted(self.next))?;
        self.next += 1;
        parse_response(messages, &call.response)
    }
}

/// Exchange whose reply spells `Rule: {..}` with the given candidate lists
/// at each value position. Format tokens are sampled with `format_prob`.
pub fn synthetic_rule_exchange(
    task: &AcreTask,
    chosen: &[AcreState],
    candidates: &[Vec<(AcreState, f64)>],
    format_prob: f64,
) -> ChatExchange {
    let fmt = |t: &str| TokenLogprob { token: t.into(), logprob: format_prob.ln(), top_logprobs: Vec::new() };
    let mut tokens = vec![fmt("Rule"), fmt(":"), fmt(" {")];
    for (o, name) in task.names().iter().enumerate() {
        if o > 0 {
            tokens.push(fmt(", "));
        }
        tokens.push(fmt(name));
        tokens.push(fmt(":"));
        let cands = &candidates[o];
        let p = cands.iter().find(|c| c.0 == chosen[o]).map(|c| c.1).unwrap_or(1e-9);
        tokens.push(TokenLogprob {
            token: chosen[o].name().into(),
            logprob: p.ln(),
            top_logprobs: cands
                .iter()
                .map(|(s, q)| TokenCandidate { token: s.name().into(), logprob: q.ln() })
                .collect(),
        });
    }
    tokens.push(fmt("}"));
    let reply: String = tokens.iter().map(|t| t.token.as_str()).collect();
    ChatExchange {
        messages: vec![ChatMessage::new(Role::User, "What is the rule?"), ChatMessage::new(Role::Assistant, reply)],
        logprobs: Some(tokens),
    }
}

/// Rule-induction agent backed by a chat model. Generation evaluates the
/// proposed rule exactly.
pub struct ChatAgent {
    task: AcreTask,
    space: Arc<FiniteSpace>,
    model: LikelihoodModel,
    transport: Box<dyn ChatTransport>,
    decoding: ChatDecoding,
    bias: Option<BiasSlot>,
    format_retries: usize,
    last: Option<RulePosterior>,
}

impl ChatAgent {
    pub fn new(task: AcreTask, transport: Box<dyn ChatTransport>, decoding: ChatDecoding) -> Result<Self> {
        let space = Arc::new(task.space());
        let model = LikelihoodModel::for_space(0.0, &space)?;
        Ok(Self { task, space, model, transport, decoding, bias: None, format_retries: 3, last: None })
    }

    pub fn with_bias(mut self, bias: Option<BiasSlot>) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_format_retries(mut self, k: usize) -> Self {
        self.format_retries = k.max(1);
        self
    }

    pub fn task(&self) -> &AcreTask {
        &self.task
    }

    /// Posterior details from the most recent proposal, if logprobs came back.
    pub fn last_posterior(&self) -> Option<&RulePosterior> {
        self.last.as_ref()
    }

    pub fn propose_rule(&mut self, examples: &[AcreExample]) -> Result<(AcreRule, Option<BeliefState>)> {
        if examples.is_empty() {
            return Err(Error::Domain("proposing a rule needs at least one example".into()));
        }
        let slots = PromptSlots {
            objects: self.task.names().to_vec(),
            examples: examples.iter().map(|e| self.task.render_example(e)).collect(),
            bias: self.bias.clone(),
            ..Default::default()
        };
        let messages = render_prompt(Template::ImitationOnly, &slots)?;
        let mut transcript = Vec::new();
        for _ in 0..self.format_retries {
            let exchange = self.transport.complete(&messages, &self.decoding)?;
            let reply = exchange.reply().unwrap_or_default().to_string();
            match locate_rule(&reply, &self.task) {
                Ok((rule, _, _)) => {
                    self.last = match exchange.logprobs {
                        Some(_) => Some(extract_rule_posterior(&exchange, &self.task)?),
                        None => None,
                    };
                    return Ok((rule, self.last.as_ref().map(|p| p.belief.clone())));
                }
                Err(e) => {
                    warn!("unparseable rule reply: {e}");
                    transcript.push(reply);
                }
            }
        }
        Err(ChatError::Format { attempts: self.format_retries, transcript: transcript.join("\n---\n") }.into())
    }
}

impl Agent for ChatAgent {
    fn space(&self) -> &FiniteSpace {
        &self.space
    }

    fn model(&self) -> &LikelihoodModel {
        &self.model
    }

    /// The model brings its own prior, so `start` is ignored. Without
    /// logprobs the belief is a point mass on the stated rule.
    fn propose(&mut self, _start: &BeliefState, data: &[Example]) -> Result<BeliefState> {
        let examples = data.iter().map(|e| self.task.from_example(e)).collect::<Result<Vec<_>>>()?;
        let (rule, belief) = self.propose_rule(&examples)?;
        match belief {
            Some(b) => Ok(b),
            None => BeliefState::one_hot(self.task.space_id(), self.task.rule_count(), rule.index()),
        }
    }

    fn generate(&mut self, h: usize, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>> {
        sample_transmission(&self.space, h, m, &self.model, rng)
    }

    fn generate_marginal(&mut self, belief: &BeliefState, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Example>> {
        sample_marginal(&self.space, belief, m, &self.model, rng)
    }
}
