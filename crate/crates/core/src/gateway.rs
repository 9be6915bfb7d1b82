//! Role-based LLM backend abstraction.
//!
//! Each defense role (builder, planner, checker) is bound to a model
//! configuration and a backend. The HTTP backend speaks the OpenAI-compatible
//! chat-completions wire format with function calling; the scripted stub
//! serves canned responses for offline, deterministic runs. Every exchange is
//! captured in a transcript with the raw request and response bodies, which
//! is what the isolation assertions inspect. Credentials travel only in the
//! Authorization header and never reach the transcript.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Builder,
    Planner,
    Checker,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Builder => "builder",
            Role::Planner => "planner",
            Role::Checker => "checker",
        };
        f.write_str(s)
    }
}

fn default_temperature() -> f64 {
    0.0
}

/// Per-role model configuration. The credential is referenced by env-var
/// name only; its value is read at request time and never serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub credential_env: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl RoleConfig {
    pub fn stub(role: Role) -> Self {
        Self {
            role,
            model: format!("scripted-{role}"),
            temperature: 0.0,
            endpoint: String::new(),
            credential_env: String::new(),
            prompt_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunctionCall {
    pub name: String,
    /// JSON-encoded argument object, as on the wire.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCall {
    pub id: String,
    #[serde(rename = "type")]
    pub call_type: String,
    pub function: WireFunctionCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<WireToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant_tool_calls(calls: Vec<WireToolCall>) -> Self {
        Self {
            role: "assistant".into(),
            content: String::new(),
            tool_calls: calls,
            tool_call_id: None,
        }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: "tool".into(),
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }
}

/// JSON-schema description of a callable function, per the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

impl ToolSchema {
    fn wire(&self) -> serde_json::Value {
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

/// One tool request emitted by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub id: String,
    pub name: String,
    /// JSON-encoded argument object.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LlmResponse {
    Text(String),
    ToolCalls(Vec<ToolInvocation>),
}

/// A fully assembled backend request.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub config: RoleConfig,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolSchema>,
}

impl ChatRequest {
    /// The wire body, without any credential material.
    pub fn wire_body(&self) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": self.messages,
        });
        if !self.tools.is_empty() {
            body["tools"] = serde_json::Value::Array(self.tools.iter().map(|t| t.wire()).collect());
        }
        body
    }

    /// Stable request fingerprint: role, last user message, tool schemas.
    pub fn fingerprint(&self) -> String {
        let last_user = self
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let tools = serde_json::to_string(&self.tools).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(self.config.role.to_string().as_bytes());
        hasher.update([0]);
        hasher.update(last_user.as_bytes());
        hasher.update([0]);
        hasher.update(tools.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn searchable_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("role `{0}` is not bound to a backend")]
    UnboundRole(Role),
    #[error("credential env var `{0}` is not set")]
    MissingCredential(String),
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("no scripted response for request (fingerprint {fingerprint}); last user message: {preview}")]
    Unscripted {
        fingerprint: String,
        preview: String,
    },
}

/// Raw plus parsed result of one backend exchange.
#[derive(Debug, Clone)]
pub struct BackendExchange {
    pub request_body: String,
    pub response_body: String,
    pub response: LlmResponse,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<BackendExchange, GatewayError>;
    fn kind(&self) -> &'static str;
}

/// Parses an OpenAI-style chat completion body into an [`LlmResponse`].
pub fn parse_completion_body(body: &str) -> Result<LlmResponse, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message".into()))?;
    if let Some(calls) = message.get("tool_calls").and_then(|c| c.as_array()) {
        if !calls.is_empty() {
            let mut invocations = Vec::new();
            for call in calls {
                let id = call
                    .get("id")
                    .and_then(|v| v.as_str())
                    .unwrap_or("call_0")
                    .to_string();
                let function = call
                    .get("function")
                    .ok_or_else(|| GatewayError::InvalidResponse("tool call without function".into()))?;
                let name = function
                    .get("name")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| GatewayError::InvalidResponse("tool call without name".into()))?
                    .to_string();
                let arguments = match function.get("arguments") {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => "{}".to_string(),
                };
                invocations.push(ToolInvocation { id, name, arguments });
            }
            return Ok(LlmResponse::ToolCalls(invocations));
        }
    }
    let text = message
        .get("content")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok(LlmResponse::Text(text))
}

/// Builds an OpenAI-style completion body for a response, used by stubs.
pub fn completion_body_for(response: &LlmResponse) -> serde_json::Value {
    let message = match response {
        LlmResponse::Text(text) => serde_json::json!({
            "role": "assistant",
            "content": text,
        }),
        LlmResponse::ToolCalls(calls) => serde_json::json!({
            "role": "assistant",
            "content": null,
            "tool_calls": calls
                .iter()
                .map(|c| serde_json::json!({
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments},
                }))
                .collect::<Vec<_>>(),
        }),
    };
    serde_json::json!({"choices": [{"index": 0, "message": message, "finish_reason": "stop"}]})
}

/// Blocking HTTP backend for OpenAI-compatible endpoints.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    max_attempts: usize,
    backoff: Duration,
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
            // 1 initial try + 2 retries with exponential backoff
            max_attempts: 3,
            backoff: Duration::from_millis(100),
        }
    }

    pub fn with_retry(mut self, max_attempts: usize, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendExchange, GatewayError> {
        let credential = if request.config.credential_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&request.config.credential_env).map_err(|_| {
                    GatewayError::MissingCredential(request.config.credential_env.clone())
                })?,
            )
        };
        let request_body =
            serde_json::to_string(&request.wire_body()).expect("request serialization");

        let mut last_err = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)) as u32);
            }
            let mut req = self
                .client
                .post(&request.config.endpoint)
                .header("content-type", "application/json")
                .body(request_body.clone());
            if let Some(cred) = &credential {
                req = req.bearer_auth(cred);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body = resp
                        .text()
                        .map_err(|e| GatewayError::Transport {
                            attempts: attempt + 1,
                            detail: e.to_string(),
                        })?;
                    if !(200..300).contains(&status) {
                        return Err(GatewayError::HttpStatus { status, body });
                    }
                    let response = parse_completion_body(&body)?;
                    return Ok(BackendExchange {
                        request_body,
                        response_body: body,
                        response,
                    });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::Transport {
            attempts: self.max_attempts,
            detail: last_err,
        })
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}

/// How a scripted stub treats requests no rule matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// An unscripted request is a failure, never a guess.
    FailOnUnexpected,
    /// Serve this canned text for anything unscripted.
    DefaultResponse(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StubResponseSpec {
    /// Plain assistant text.
    Text { text: String },
    /// A JSON value serialized as the assistant text.
    Json { json: serde_json::Value },
    /// Function calls for tool_use flows.
    ToolCalls { tool_calls: Vec<StubToolCall> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

/// One scripted rule: all `require` substrings must appear in the request's
/// message text for the rule to fire. Rules are tried in order; `once` rules
/// are consumed when used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(default)]
    pub require: Vec<String>,
    pub response: StubResponseSpec,
    #[serde(default)]
    pub once: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StubScript {
    pub rules: Vec<StubRule>,
    #[serde(default)]
    pub strict: bool,
}

/// Deterministic scripted backend for offline tests.
pub struct ScriptedStub {
    rules: Mutex<Vec<(StubRule, bool)>>,
    strictness: Strictness,
    received: Mutex<Vec<serde_json::Value>>,
    call_id: AtomicUsize,
}

impl ScriptedStub {
    pub fn new(rules: Vec<StubRule>, strictness: Strictness) -> Self {
        Self {
            rules: Mutex::new(rules.into_iter().map(|r| (r, false)).collect()),
            strictness,
            received: Mutex::new(Vec::new()),
            call_id: AtomicUsize::new(0),
        }
    }

    pub fn from_script(script: &StubScript) -> Self {
        let strictness = if script.strict {
            Strictness::FailOnUnexpected
        } else {
            Strictness::DefaultResponse("{}".to_string())
        };
        Self::new(script.rules.clone(), strictness)
    }

    /// Every wire request body this stub has seen, for payload inspection.
    pub fn received(&self) -> Vec<serde_json::Value> {
        self.received.lock().unwrap().clone()
    }

    fn response_for(&self, request: &ChatRequest) -> Result<LlmResponse, GatewayError> {
        let text = request.searchable_text();
        let mut rules = self.rules.lock().unwrap();
        for (rule, used) in rules.iter_mut() {
            if rule.once && *used {
                continue;
            }
            if rule.require.iter().all(|needle| text.contains(needle)) {
                *used = true;
                return Ok(self.materialize(&rule.response));
            }
        }
        match &self.strictness {
            Strictness::FailOnUnexpected => {
                let preview: String = request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == "user")
                    .map(|m| m.content.chars().take(160).collect())
                    .unwrap_or_default();
                Err(GatewayError::Unscripted {
                    fingerprint: request.fingerprint(),
                    preview,
                })
            }
            Strictness::DefaultResponse(text) => Ok(LlmResponse::Text(text.clone())),
        }
    }

    fn materialize(&self, spec: &StubResponseSpec) -> LlmResponse {
        match spec {
            StubResponseSpec::Text { text } => LlmResponse::Text(text.clone()),
            StubResponseSpec::Json { json } => LlmResponse::Text(json.to_string()),
            StubResponseSpec::ToolCalls { tool_calls } => LlmResponse::ToolCalls(
                tool_calls
                    .iter()
                    .map(|c| ToolInvocation {
                        id: format!("call_{}", self.call_id.fetch_add(1, Ordering::Relaxed)),
                        name: c.name.clone(),
                        arguments: c.arguments.to_string(),
                    })
                    .collect(),
            ),
        }
    }
}

impl ChatBackend for ScriptedStub {
    fn complete(&self, request: &ChatRequest) -> Result<BackendExchange, GatewayError> {
        let wire = request.wire_body();
        self.received.lock().unwrap().push(wire.clone());
        let request_body = serde_json::to_string(&wire).expect("request serialization");
        let response = self.response_for(request)?;
        let response_body =
            serde_json::to_string(&completion_body_for(&response)).expect("response serialization");
        Ok(BackendExchange {
            request_body,
            response_body,
            response,
        })
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

/// One captured exchange. Bodies are stored exactly as sent and received.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub session_id: String,
    pub role: Role,
    pub purpose: String,
    pub backend: String,
    pub request_body: String,
    pub response_body: String,
}

/// Shared, append-only exchange log.
#[derive(Clone, Default)]
pub struct TranscriptLog {
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl TranscriptLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, entry: TranscriptEntry) {
        self.entries.lock().unwrap().push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn for_role(&self, role: Role) -> Vec<TranscriptEntry> {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.role == role)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in self.entries.lock().unwrap().iter() {
            out.push_str(&serde_json::to_string(entry).expect("transcript entry"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

struct RoleBinding {
    config: RoleConfig,
    backend: Arc<dyn ChatBackend>,
}

/// Role-to-backend registry plus the shared transcript log.
#[derive(Default)]
pub struct Gateway {
    bindings: HashMap<Role, RoleBinding>,
    log: TranscriptLog,
    session_counter: AtomicUsize,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, config: RoleConfig, backend: Arc<dyn ChatBackend>) {
        self.bindings.insert(config.role, RoleBinding { config, backend });
    }

    pub fn transcript(&self) -> TranscriptLog {
        self.log.clone()
    }

    pub fn session(&self, role: Role, purpose: impl Into<String>) -> Result<LlmSession, GatewayError> {
        let binding = self
            .bindings
            .get(&role)
            .ok_or(GatewayError::UnboundRole(role))?;
        let n = self.session_counter.fetch_add(1, Ordering::Relaxed);
        Ok(LlmSession {
            config: binding.config.clone(),
            backend: Arc::clone(&binding.backend),
            log: self.log.clone(),
            session_id: format!("{role}-{n}"),
            purpose: purpose.into(),
        })
    }
}

/// A role-configured handle for issuing completions. Each call is recorded
/// in the shared transcript under this session's id and purpose.
pub struct LlmSession {
    config: RoleConfig,
    backend: Arc<dyn ChatBackend>,
    log: TranscriptLog,
    session_id: String,
    purpose: String,
}

impl LlmSession {
    pub fn role(&self) -> Role {
        self.config.role
    }

    pub fn purpose(&self) -> &str {
        &self.purpose
    }

    pub fn complete(
        &self,
        messages: Vec<ChatMessage>,
        tools: Vec<ToolSchema>,
    ) -> Result<LlmResponse, GatewayError> {
        let request = ChatRequest {
            config: self.config.clone(),
            messages,
            tools,
        };
        let exchange = self.backend.complete(&request)?;
        self.log.push(TranscriptEntry {
            session_id: self.session_id.clone(),
            role: self.config.role,
            purpose: self.purpose.clone(),
            backend: self.backend.kind().to_string(),
            request_body: exchange.request_body,
            response_body: exchange.response_body,
        });
        Ok(exchange.response)
    }
}

/// Strips markdown fences and returns the first JSON object in a model
/// reply. Scripted stubs emit clean JSON; real models often wrap it.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, ch) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + ch.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub_gateway(rules: Vec<StubRule>, strict: bool) -> Gateway {
        let strictness = if strict {
            Strictness::FailOnUnexpected
        } else {
            Strictness::DefaultResponse("fallback".to_string())
        };
        let mut gw = Gateway::new();
        gw.bind(
            RoleConfig::stub(Role::Checker),
            Arc::new(ScriptedStub::new(rules, strictness)),
        );
        gw
    }

    #[test]
    fn keyed_rule_matches_and_records_transcript() {
        let gw = stub_gateway(
            vec![StubRule {
                require: vec!["fetch_webpage deviation".into()],
                response: StubResponseSpec::Json {
                    json: serde_json::json!({"verdict": "suspicious", "reason": "unrelated"}),
                },
                once: false,
            }],
            true,
        );
        let session = gw.session(Role::Checker, "test").unwrap();
        let response = session
            .complete(
                vec![ChatMessage::user("judge this fetch_webpage deviation")],
                vec![],
            )
            .unwrap();
        match response {
            LlmResponse::Text(text) => {
                let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                assert_eq!(v["verdict"], "suspicious");
            }
            other => panic!("unexpected response {other:?}"),
        }
        assert_eq!(gw.transcript().len(), 1);
        let entry = &gw.transcript().entries()[0];
        assert_eq!(entry.role, Role::Checker);
        assert!(entry.request_body.contains("fetch_webpage deviation"));
    }

    #[test]
    fn strict_stub_fails_on_unexpected_with_fingerprint() {
        let gw = stub_gateway(vec![], true);
        let session = gw.session(Role::Checker, "test").unwrap();
        let err = session
            .complete(vec![ChatMessage::user("never scripted")], vec![])
            .unwrap_err();
        match err {
            GatewayError::Unscripted { fingerprint, .. } => {
                assert_eq!(fingerprint.len(), 16);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn default_response_mode_serves_fallback() {
        let gw = stub_gateway(vec![], false);
        let session = gw.session(Role::Checker, "test").unwrap();
        let response = session
            .complete(vec![ChatMessage::user("anything")], vec![])
            .unwrap();
        assert_eq!(response, LlmResponse::Text("fallback".to_string()));
    }

    #[test]
    fn once_rules_are_consumed_in_order() {
        let rules = vec![
            StubRule {
                require: vec![],
                response: StubResponseSpec::Text { text: "first".into() },
                once: true,
            },
            StubRule {
                require: vec![],
                response: StubResponseSpec::Text { text: "second".into() },
                once: true,
            },
        ];
        let gw = stub_gateway(rules, true);
        let session = gw.session(Role::Checker, "seq").unwrap();
        let r1 = session.complete(vec![ChatMessage::user("x")], vec![]).unwrap();
        let r2 = session.complete(vec![ChatMessage::user("x")], vec![]).unwrap();
        assert_eq!(r1, LlmResponse::Text("first".into()));
        assert_eq!(r2, LlmResponse::Text("second".into()));
    }

    #[test]
    fn stub_determinism_over_identical_request_sequences() {
        let rules = || {
            vec![StubRule {
                require: vec!["q".into()],
                response: StubResponseSpec::Text { text: "a".into() },
                once: false,
            }]
        };
        let run = |rules: Vec<StubRule>| {
            let gw = stub_gateway(rules, true);
            let session = gw.session(Role::Checker, "d").unwrap();
            for _ in 0..3 {
                session.complete(vec![ChatMessage::user("q")], vec![]).unwrap();
            }
            gw.transcript().to_jsonl()
        };
        assert_eq!(run(rules()), run(rules()));
    }

    #[test]
    fn parses_tool_call_completions() {
        let body = serde_json::json!({
            "choices": [{"message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{"id": "c1", "type": "function",
                    "function": {"name": "add_node", "arguments": "{\"id\":\"n1\"}"}}]
            }}]
        })
        .to_string();
        match parse_completion_body(&body).unwrap() {
            LlmResponse::ToolCalls(calls) => {
                assert_eq!(calls[0].name, "add_node");
                assert_eq!(calls[0].arguments, "{\"id\":\"n1\"}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extract_json_object_handles_fences_and_strings() {
        let text = "```json\n{\"a\": \"br{ace}\", \"b\": {\"c\": 1}}\n```";
        let json = extract_json_object(text).unwrap();
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(v["b"]["c"], 1);
    }
}
