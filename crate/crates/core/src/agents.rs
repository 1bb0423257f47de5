//! Agents that choose one action per prompt: scripted oracle policies and a
//! remote chat-completions client.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::game::{Action, Profile, Role};
use crate::prompting::{parse_agent_reply, AgentReply, PromptBundle, ReplyError};
use crate::scenarios::Scenario;

pub const DEFAULT_API_KEY_ENV: &str = "POLICYGAME_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub sampling: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.2, top_p: 0.9, max_new_tokens: 256, sampling: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default)]
    pub decode: DecodeParams,
    /// Concurrent requests allowed against this endpoint.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Environment variable holding the bearer token, if any.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    120
}

impl RemoteSpec {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> RemoteSpec {
        RemoteSpec {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            decode: DecodeParams::default(),
            max_in_flight: default_in_flight(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
        }
    }

    /// Full chat-completions URL for the endpoint.
    pub fn completions_url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentKind {
    /// Always plays its role's action from the profile.
    Fixed(Profile),
    /// Best-responds to the other roles playing the reference profile.
    BestResponder(Profile),
    /// Seeded uniform choice.
    RandomPolicy(u64),
    RemoteLlm(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub kind: AgentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid agent spec {0:?}: expected fixed:<profile>, best:<profile>, random:<seed> or remote:<model>@<endpoint>")]
pub struct AgentSpecError(pub String);

impl AgentSpec {
    pub fn new(id: impl Into<String>, kind: AgentKind) -> AgentSpec {
        AgentSpec { id: id.into(), kind }
    }

    /// Parses `fixed:a_green`, `best:a_tragedy`, `random:17` or
    /// `remote:<model>@<endpoint>`. The id is the spec string itself, except
    /// for remote agents where it is the model name.
    pub fn parse(uri: &str) -> Result<AgentSpec, AgentSpecError> {
        let err = || AgentSpecError(uri.to_string());
        let (scheme, rest) = uri.trim().split_once(':').ok_or_else(err)?;
        let kind = match scheme {
            "fixed" => AgentKind::Fixed(Profile::parse(rest).ok_or_else(err)?),
            "best" => AgentKind::BestResponder(Profile::parse(rest).ok_or_else(err)?),
            "random" => AgentKind::RandomPolicy(rest.parse().map_err(|_| err())?),
            "remote" => {
                let (model, endpoint) = rest.split_once('@').ok_or_else(err)?;
                if model.is_empty() || endpoint.is_empty() {
                    return Err(err());
                }
                return Ok(AgentSpec::new(model, AgentKind::RemoteLlm(RemoteSpec::new(endpoint, model))));
            }
            _ => return Err(err()),
        };
        Ok(AgentSpec::new(uri.trim(), kind))
    }

    pub fn is_scripted(&self) -> bool {
        !matches!(self.kind, AgentKind::RemoteLlm(_))
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// OpenAI-compatible chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Builds the request for one prompt. With sampling off the temperature is
/// 0 and `seed` pins whatever sampling the server still does.
pub fn build_chat_request(spec: &RemoteSpec, bundle: &PromptBundle, seed: Option<u64>) -> ChatRequest {
    let d = spec.decode;
    ChatRequest {
        model: spec.model_name.clone(),
        messages: vec![
            ChatMessage { role: "system".into(), content: bundle.system_text.clone() },
            ChatMessage { role: "user".into(), content: bundle.user_text.clone() },
        ],
        temperature: if d.sampling { d.temperature } else { 0.0 },
        top_p: d.top_p,
        max_tokens: d.max_new_tokens,
        seed,
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response body: {0}")]
    Body(String),
}

/// Sends one request and returns the assistant message text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, url: &str, request: &ChatRequest, api_key: Option<&str>) -> Result<String, TransportError>;
}

/// Blocking HTTP client.
pub struct UreqClient {
    agent: ureq::Agent,
}

impl UreqClient {
    pub fn new(timeout: Duration) -> UreqClient {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build();
        UreqClient { agent: agent.into() }
    }
}

impl ChatClient for UreqClient {
    fn complete(&self, url: &str, request: &ChatRequest, api_key: Option<&str>) -> Result<String, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status(status));
        }
        let body: ChatResponse = resp.body_mut().read_json().map_err(|e| TransportError::Body(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| TransportError::Body("no choices".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Extra requests after a reply that cannot be parsed.
    pub parse_retries: u32,
    /// Total attempts per request on transport failure.
    pub transport_attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { parse_retries: 3, transport_attempts: 3, base_delay: Duration::from_millis(500), jitter: true }
    }
}

impl RetryPolicy {
    pub fn immediate() -> RetryPolicy {
        RetryPolicy { base_delay: Duration::ZERO, jitter: false, ..RetryPolicy::default() }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay * 2u32.saturating_pow(attempt);
        if self.jitter && !base.is_zero() {
            base.mul_f64(rand::rng().random_range(0.5..1.5))
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("agent failed after {attempts} replies: {cause}")]
    AgentFailed { cause: ReplyError, attempts: u32, last_raw: String },
    #[error("transport failed after {attempts} attempts: {source}")]
    Transport { source: TransportError, attempts: u32 },
}

/// Per-call inputs that scripted policies and request seeding depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionContext {
    pub repetition: u32,
    pub seed: u64,
}

/// Counting semaphore capping in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Gate {
        Gate { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// A runnable agent. Cheap to share across worker threads.
#[derive(Clone)]
pub struct Agent {
    spec: AgentSpec,
    client: Option<Arc<dyn ChatClient>>,
    gate: Arc<Gate>,
    retry: RetryPolicy,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent").field("spec", &self.spec).field("retry", &self.retry).finish()
    }
}

impl Agent {
    /// Remote agents get a [`UreqClient`].
    pub fn new(spec: AgentSpec) -> Agent {
        let client: Option<Arc<dyn ChatClient>> = match &spec.kind {
            AgentKind::RemoteLlm(r) => Some(Arc::new(UreqClient::new(Duration::from_secs(r.timeout_secs)))),
            _ => None,
        };
        Agent::build(spec, client)
    }

    pub fn with_client(spec: AgentSpec, client: Arc<dyn ChatClient>) -> Agent {
        Agent::build(spec, Some(client))
    }

    fn build(spec: AgentSpec, client: Option<Arc<dyn ChatClient>>) -> Agent {
        let cap = match &spec.kind {
            AgentKind::RemoteLlm(r) => r.max_in_flight,
            _ => usize::MAX,
        };
        Agent { spec, client, gate: Arc::new(Gate::new(cap)), retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Agent {
        self.retry = retry;
        self
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn decide(
        &self,
        role: Role,
        bundle: &PromptBundle,
        scenario: &Scenario,
        ctx: DecisionContext,
    ) -> Result<AgentReply, AgentError> {
        match &self.spec.kind {
            AgentKind::Fixed(profile) => Ok(scripted(profile.action(role), "fixed policy")),
            AgentKind::BestResponder(reference) => {
                let action = scenario.table().best_response(role, *reference).first();
                Ok(scripted(action, &format!("best response to {reference}")))
            }
            AgentKind::RandomPolicy(seed) => {
                let bit = random_bit(*seed, scenario.id(), role, ctx.repetition);
                Ok(scripted(role.actions()[bit as usize], "random policy"))
            }
            AgentKind::RemoteLlm(remote) => self.decide_remote(remote, role, bundle, ctx),
        }
    }

    fn decide_remote(
        &self,
        remote: &RemoteSpec,
        role: Role,
        bundle: &PromptBundle,
        ctx: DecisionContext,
    ) -> Result<AgentReply, AgentError> {
        let client = self.client.as_ref().expect("remote agents always have a client");
        let url = remote.completions_url();
        let key = std::env::var(&remote.api_key_env).ok().filter(|k| !k.is_empty());
        let request = build_chat_request(remote, bundle, Some(ctx.seed));
        let mut parse_failures = 0;
        loop {
            let raw = self.send_with_backoff(client.as_ref(), &url, &request, key.as_deref())?;
            match parse_agent_reply(role, &raw) {
                Ok(reply) => return Ok(reply),
                Err(cause) => {
                    parse_failures += 1;
                    if parse_failures > self.retry.parse_retries {
                        return Err(AgentError::AgentFailed { cause, attempts: parse_failures, last_raw: raw });
                    }
                }
            }
        }
    }

    fn send_with_backoff(
        &self,
        client: &dyn ChatClient,
        url: &str,
        request: &ChatRequest,
        key: Option<&str>,
    ) -> Result<String, AgentError> {
        let attempts = self.retry.transport_attempts.max(1);
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                client.complete(url, request, key)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(source) => {
                    attempt += 1;
                    if attempt >= attempts {
                        return Err(AgentError::Transport { source, attempts: attempt });
                    }
                    std::thread::sleep(self.retry.delay(attempt - 1));
                }
            }
        }
    }
}

fn scripted(action: Action, why: &str) -> AgentReply {
    let raw = serde_json::json!({ "action": action.name(), "rationale": why }).to_string();
    AgentReply { action, rationale: why.to_string(), raw }
}

/// Deterministic fair coin keyed by (seed, scenario, role, repetition).
pub fn random_bit(seed: u64, scenario_id: &str, role: Role, repetition: u32) -> u8 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((scenario_id.len() as u64).to_le_bytes());
    h.update(scenario_id.as_bytes());
    h.update([role.index() as u8]);
    h.update(repetition.to_le_bytes());
    h.finalize()[0] & 1
}
