//! Provider gateway: one blocking call surface over remote chat endpoints
//! and in-process synthetic responders.
//!
//! The gateway owns three behaviors the rest of the harness relies on:
//!
//! * transport retries: up to three HTTP attempts with exponential backoff,
//!   after which the call resolves to a `transport_error` response instead
//!   of an error (callers never unwind mid-run);
//! * output-budget doubling: when a reply is cut off at the token cap and
//!   contains no parseable integer, the call is retried with the cap
//!   doubled, up to the configured ceiling;
//! * bounded parallel batches over an index-claiming worker pool, with
//!   results returned in input order.
//!
//! Auth material is read from the configured environment variable at call
//! time only. It is never stored on any struct, so no Debug or Serialize
//! output can leak it.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::assay::{build_counting_prompt, Motif, PromptBundle};
use crate::parse::extract_last_integer;

/// How a completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// The model stopped on its own.
    Complete,
    /// Output was truncated at the token cap.
    LengthCap,
    /// All transport attempts failed; the text is empty.
    TransportError,
}

impl std::fmt::Display for FinishReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FinishReason::Complete => "complete",
            FinishReason::LengthCap => "length_cap",
            FinishReason::TransportError => "transport_error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    /// OpenAI-style chat endpoint with a separate system message.
    RemoteChat,
    /// Chat endpoint for models that reject system roles: the system text
    /// is folded into the user message.
    RemoteChatInlineSystem,
    /// In-process responder; no network involved.
    Synthetic,
}

fn d_initial_cap() -> u32 {
    4096
}
fn d_retry_cap() -> u32 {
    32_768
}
fn d_parallelism() -> u32 {
    15
}
fn d_probes() -> u32 {
    8
}
fn d_timeout() -> u64 {
    120
}
fn d_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub kind: EndpointKind,
    pub model_id: String,
    /// Base URL; requests go to `{base_url}/chat/completions`.
    #[serde(default)]
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The value
    /// is read per request and never stored.
    #[serde(default)]
    pub auth_env_var: String,
    #[serde(default = "d_initial_cap")]
    pub initial_output_cap: u32,
    #[serde(default = "d_retry_cap")]
    pub retry_output_cap: u32,
    #[serde(default = "d_parallelism")]
    pub parallelism: u32,
    #[serde(default = "d_probes")]
    pub preflight_probes: u32,
    #[serde(default = "d_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "d_backoff")]
    pub retry_backoff_ms: u64,
}

impl ModelEndpoint {
    pub fn remote(model_id: &str, base_url: &str, auth_env_var: &str) -> Self {
        ModelEndpoint {
            kind: EndpointKind::RemoteChat,
            model_id: model_id.to_string(),
            base_url: base_url.to_string(),
            auth_env_var: auth_env_var.to_string(),
            initial_output_cap: d_initial_cap(),
            retry_output_cap: d_retry_cap(),
            parallelism: d_parallelism(),
            preflight_probes: d_probes(),
            request_timeout_secs: d_timeout(),
            retry_backoff_ms: d_backoff(),
        }
    }

    pub fn synthetic(model_id: &str) -> Self {
        ModelEndpoint {
            kind: EndpointKind::Synthetic,
            base_url: String::new(),
            auth_env_var: String::new(),
            ..ModelEndpoint::remote(model_id, "", "")
        }
    }
}

/// One resolved completion. `attempts` counts every request made on behalf
/// of the call: transport retries and budget-doubling retries included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub reasoning_tokens: Option<u64>,
    /// True when the provider reported no usage and the token counts are
    /// length/4 estimates.
    pub usage_estimated: bool,
    pub finish_reason: FinishReason,
    pub attempts: u32,
    pub wall_time_ms: u64,
}

/// Rough token count for accounting when the provider reports none.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Reply from an in-process responder; the gateway wraps it into a
/// [`RawResponse`] with estimated usage.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticReply {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl SyntheticReply {
    pub fn complete(text: impl Into<String>) -> Self {
        SyntheticReply { text: text.into(), finish_reason: FinishReason::Complete }
    }
}

/// An in-process stand-in for a model. Receives the full prompt bundle and
/// the output cap active for this attempt, so cap-sensitive behavior can be
/// simulated.
pub trait SyntheticResponder: Send + Sync {
    fn respond(&self, bundle: &PromptBundle, output_cap: u32) -> SyntheticReply;
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway has been closed")]
    Closed,
    #[error("synthetic endpoint requires a responder")]
    NoResponder,
    #[error("responder supplied for a remote endpoint")]
    UnexpectedResponder,
    #[error("http client init failed: {0}")]
    Init(String),
}

pub struct Gateway {
    endpoint: ModelEndpoint,
    responder: Option<Arc<dyn SyntheticResponder>>,
    client: reqwest::blocking::Client,
    closed: Arc<AtomicBool>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoint", &self.endpoint)
            .field("responder", &self.responder.as_ref().map(|_| "<synthetic>"))
            .finish()
    }
}

const TRANSPORT_ATTEMPTS: u32 = 3;

struct Attempt {
    text: String,
    finish: FinishReason,
    input_tokens: Option<u64>,
    output_tokens: Option<u64>,
    reasoning_tokens: Option<u64>,
}

impl Gateway {
    pub fn new(
        endpoint: ModelEndpoint,
        responder: Option<Arc<dyn SyntheticResponder>>,
    ) -> Result<Self, GatewayError> {
        match (endpoint.kind, responder.is_some()) {
            (EndpointKind::Synthetic, false) => return Err(GatewayError::NoResponder),
            (EndpointKind::Synthetic, true) => {}
            (_, true) => return Err(GatewayError::UnexpectedResponder),
            (_, false) => {}
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::Init(e.to_string()))?;
        Ok(Gateway { endpoint, responder, client, closed: Arc::new(AtomicBool::new(false)) })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Stops new work: in-flight calls finish, queued batch items are
    /// abandoned and the batch returns `Closed`.
    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Resolves one prompt. Never returns an error: transport exhaustion
    /// becomes a `transport_error` response with empty text.
    pub fn complete(&self, bundle: &PromptBundle) -> RawResponse {
        let start = Instant::now();
        let mut attempts: u32 = 0;
        let mut cap = self.endpoint.initial_output_cap;
        loop {
            let attempt = match self.endpoint.kind {
                EndpointKind::Synthetic => self.attempt_synthetic(bundle, cap, &mut attempts),
                _ => self.attempt_remote(bundle, cap, &mut attempts),
            };
            // A cap-truncated reply with no integer in it is unusable;
            // double the budget and try again while headroom remains.
            if attempt.finish == FinishReason::LengthCap
                && cap < self.endpoint.retry_output_cap
                && extract_last_integer(&attempt.text).is_none()
            {
                cap = cap.saturating_mul(2).min(self.endpoint.retry_output_cap);
                continue;
            }
            return self.finalize(bundle, attempt, attempts, start);
        }
    }

    fn finalize(
        &self,
        bundle: &PromptBundle,
        attempt: Attempt,
        attempts: u32,
        start: Instant,
    ) -> RawResponse {
        let estimated = attempt.input_tokens.is_none() || attempt.output_tokens.is_none();
        // Synthetic latency is meaningless and would make otherwise
        // deterministic run logs differ byte-for-byte between reruns.
        let wall_time_ms = match self.endpoint.kind {
            EndpointKind::Synthetic => 0,
            _ => start.elapsed().as_millis() as u64,
        };
        RawResponse {
            input_tokens: attempt
                .input_tokens
                .unwrap_or_else(|| estimate_tokens(&bundle.inline_fallback_text)),
            output_tokens: attempt.output_tokens.unwrap_or_else(|| estimate_tokens(&attempt.text)),
            reasoning_tokens: attempt.reasoning_tokens,
            usage_estimated: estimated,
            text: attempt.text,
            finish_reason: attempt.finish,
            attempts,
            wall_time_ms,
        }
    }

    fn attempt_synthetic(&self, bundle: &PromptBundle, cap: u32, attempts: &mut u32) -> Attempt {
        *attempts += 1;
        let responder = self.responder.as_ref().expect("checked at construction");
        let reply = responder.respond(bundle, cap);
        Attempt {
            text: reply.text,
            finish: reply.finish_reason,
            input_tokens: None,
            output_tokens: None,
            reasoning_tokens: None,
        }
    }

    fn attempt_remote(&self, bundle: &PromptBundle, cap: u32, attempts: &mut u32) -> Attempt {
        // A configured-but-absent key is a deterministic failure; retrying
        // the environment would only hide the misconfiguration.
        let auth = if self.endpoint.auth_env_var.is_empty() {
            None
        } else {
            match std::env::var(&self.endpoint.auth_env_var) {
                Ok(v) => Some(v),
                Err(_) => {
                    *attempts += 1;
                    return transport_failure();
                }
            }
        };
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let body = shape_request(&self.endpoint, bundle, cap);
        for round in 0..TRANSPORT_ATTEMPTS {
            *attempts += 1;
            let mut req = self.client.post(&url).json(&body);
            if let Some(key) = &auth {
                req = req.bearer_auth(key);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => match resp.json::<ChatResponse>() {
                    Ok(parsed) => {
                        if let Some(a) = attempt_from_chat(parsed) {
                            return a;
                        }
                    }
                    Err(_) => {}
                },
                Err(_) => {}
            }
            if round + 1 < TRANSPORT_ATTEMPTS {
                let backoff = self.endpoint.retry_backoff_ms.saturating_mul(1 << round);
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
        transport_failure()
    }

    /// Sends `preflight_probes` trivial counting prompts and reports what
    /// came back. Callers treat a failed report as a fatal setup problem.
    pub fn preflight(&self) -> PreflightReport {
        let probes = self.endpoint.preflight_probes.max(1);
        let mut report = PreflightReport {
            probes,
            parsed_exact: 0,
            transport_failures: 0,
            auth_missing: false,
        };
        if self.endpoint.kind != EndpointKind::Synthetic
            && !self.endpoint.auth_env_var.is_empty()
            && std::env::var(&self.endpoint.auth_env_var).is_err()
        {
            report.auth_missing = true;
            return report;
        }
        let motif = Motif::baseline();
        const PROBE_TARGET: u64 = 8;
        for i in 0..probes {
            let bundle = build_counting_prompt(&motif, PROBE_TARGET)
                .expect("probe prompt is well formed")
                .with_trial_key(i as u64);
            let resp = self.complete(&bundle);
            if resp.finish_reason == FinishReason::TransportError {
                report.transport_failures += 1;
            } else if extract_last_integer(&resp.text) == Some(PROBE_TARGET as i64) {
                report.parsed_exact += 1;
            }
        }
        report
    }

    /// Resolves a slice of prompts over a bounded worker pool, preserving
    /// input order. Returns `Closed` if the gateway was shut down before or
    /// during the batch.
    pub fn run_batch(&self, bundles: &[PromptBundle]) -> Result<Vec<RawResponse>, GatewayError> {
        if self.is_closed() {
            return Err(GatewayError::Closed);
        }
        let n = bundles.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let workers = (self.endpoint.parallelism.max(1) as usize).min(n);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<RawResponse>>> = (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if self.is_closed() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    let resp = self.complete(&bundles[i]);
                    *slots[i].lock().expect("result slot poisoned") = Some(resp);
                });
            }
        });
        if self.is_closed() {
            return Err(GatewayError::Closed);
        }
        let mut out = Vec::with_capacity(n);
        for slot in slots {
            out.push(
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("all indices claimed by workers"),
            );
        }
        Ok(out)
    }
}

fn transport_failure() -> Attempt {
    Attempt {
        text: String::new(),
        finish: FinishReason::TransportError,
        input_tokens: None,
        output_tokens: None,
        reasoning_tokens: None,
    }
}

/// Builds the JSON body for a chat request. Exposed so tests can pin the
/// wire shape and assert that no auth material appears in it.
pub fn shape_request(endpoint: &ModelEndpoint, bundle: &PromptBundle, output_cap: u32) -> Value {
    let messages = match endpoint.kind {
        EndpointKind::RemoteChatInlineSystem => json!([
            {"role": "user", "content": bundle.inline_fallback_text}
        ]),
        _ => json!([
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.user_text}
        ]),
    };
    json!({
        "model": endpoint.model_id,
        "messages": messages,
        "temperature": 0,
        "max_tokens": output_cap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub probes: u32,
    pub parsed_exact: u32,
    pub transport_failures: u32,
    pub auth_missing: bool,
}

impl PreflightReport {
    pub fn passed(&self) -> bool {
        !self.auth_missing && self.transport_failures == 0 && self.parsed_exact > 0
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens_details: Option<ChatUsageDetails>,
}

#[derive(Deserialize)]
struct ChatUsageDetails {
    #[serde(default)]
    reasoning_tokens: Option<u64>,
}

fn attempt_from_chat(resp: ChatResponse) -> Option<Attempt> {
    let choice = resp.choices.into_iter().next()?;
    let finish = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::LengthCap,
        _ => FinishReason::Complete,
    };
    let (input_tokens, output_tokens, reasoning_tokens) = match resp.usage {
        Some(u) => (
            u.prompt_tokens,
            u.completion_tokens,
            u.completion_tokens_details.and_then(|d| d.reasoning_tokens),
        ),
        None => (None, None, None),
    };
    Some(Attempt {
        text: choice.message.content.unwrap_or_default(),
        finish,
        input_tokens,
        output_tokens,
        reasoning_tokens,
    })
}
